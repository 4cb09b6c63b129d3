//! Command implementations behind the `mctnas` binary.
//!
//! Every command takes an [`ExperimentConfig`] (TOML or JSON, or the
//! `manifest.json` of an earlier run), applies flag overrides, and writes its
//! artifacts plus a [`RunManifest`] into the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::baselines::{
    evolutionary_search, random_search, read_trace_csv, write_trace_csv, EvoConfig, SearchTrace,
};
use crate::error::{Error, Result};
use crate::eval::{
    generate_synthetic, BenchmarkTable, NoiseModel, Oracle, SurrogateParams, SurrogateTrainer,
    SyntheticOracle, TabularOracle,
};
use crate::metrics::{avg_percentile_rank, kendall_tau, spearman_rho, Ranking};
use crate::search::{hierarchical_search, SearchConfig};
use crate::seed::{streams, SeedKey};
use crate::space::{resolve_space, Architecture, SearchSpace, SpaceConfig};
use crate::train::{run_training, TrainConfig};
use crate::tree::MctTree;

pub const MANIFEST_FORMAT: &str = "mctnas-manifest-v1";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Exit code for bad configuration or input files.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for failures while running (evaluator errors, budget stalls).
pub const EXIT_RUNTIME: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    if err.is_config_error() {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

#[derive(Debug, Parser)]
#[command(name = "mctnas", version, about = "Monte Carlo tree architecture search on simulated supernets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Experiment config (TOML or JSON) or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Space preset name or path to a space config.
    #[arg(long, global = true)]
    pub space: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    Random,
    Evo,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic benchmark table covering every canonical architecture.
    GenBench {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 3)]
        replicas: u64,
    },
    /// Simulate supernet training and write the tree snapshot and training log.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Benchmark file; switches the oracle to tabular.
        #[arg(long)]
        bench: Option<PathBuf>,
    },
    /// Hierarchical search over a trained tree.
    Search {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        tree: Option<PathBuf>,
        #[arg(long)]
        bench: Option<PathBuf>,
    },
    /// Random or evolutionary search at a fixed evaluation budget.
    Baseline {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(value_enum)]
        kind: BaselineKind,
        #[arg(long)]
        bench: Option<PathBuf>,
        /// Full evaluations for random search.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Kendall tau and Spearman rho between two `id,score` CSV files.
    Correlate {
        #[command(flatten)]
        common: CommonArgs,
        a: PathBuf,
        b: PathBuf,
    },
    /// Merge the traces of several run directories into one comparison table.
    Report {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Adds a percentile-rank column computed against this benchmark.
        #[arg(long)]
        bench: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    #[default]
    Synthetic,
    Tabular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub kind: OracleKind,
    pub pairwise_strength: f64,
    pub noise_sd: f64,
    /// Benchmark file for the tabular oracle.
    pub bench: Option<PathBuf>,
    /// Binomial noise on batch accuracies.
    pub binomial_batches: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            kind: OracleKind::Synthetic,
            pairwise_strength: 0.5,
            noise_sd: 0.005,
            bench: None,
            binomial_batches: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub budget: usize,
    pub dedup: bool,
    pub evo: EvoConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            budget: 50,
            dedup: true,
            evo: EvoConfig::default(),
        }
    }
}

/// Space given either as a preset/path string or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpaceSpec {
    Named(String),
    Inline(SpaceConfig),
}

impl Default for SpaceSpec {
    fn default() -> Self {
        SpaceSpec::Named("bench-macro".into())
    }
}

impl SpaceSpec {
    pub fn build(&self) -> Result<SearchSpace> {
        match self {
            SpaceSpec::Named(s) => resolve_space(s),
            SpaceSpec::Inline(cfg) => cfg.build(),
        }
    }
}

/// Everything a run needs. Sub-config seeds are overwritten from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub space: SpaceSpec,
    pub oracle: OracleConfig,
    pub trainer: SurrogateParams,
    pub train: TrainConfig,
    pub search: SearchConfig,
    pub baseline: BaselineConfig,
    /// Tree snapshot consumed by `search`.
    pub tree: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Loads a TOML or JSON config, or the config recorded in a run manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        if !is_json {
            return toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())));
        }
        let value: serde_json::Value = serde_json::from_str(&text)?;
        if value.get("format").and_then(|f| f.as_str()) == Some(MANIFEST_FORMAT) {
            let manifest: RunManifest = serde_json::from_value(value)?;
            return Ok(manifest.config);
        }
        Ok(serde_json::from_value(value)?)
    }

    fn apply(&mut self, common: &CommonArgs) {
        if let Some(seed) = common.seed {
            self.seed = seed;
        }
        if let Some(space) = &common.space {
            self.space = SpaceSpec::Named(space.clone());
        }
        self.train.seed = self.seed;
        self.search.seed = self.seed;
        self.baseline.evo.seed = self.seed;
    }

    fn derived_seed(&self, stream: &str) -> u64 {
        SeedKey::new(self.seed).name(stream).value()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub version: String,
    pub space_fingerprint: String,
    pub started_at: u64,
    pub finished_at: u64,
    /// Files written by the run, relative to the output directory.
    pub outputs: Vec<String>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

struct Run {
    command: &'static str,
    config: ExperimentConfig,
    out: PathBuf,
    started_at: u64,
    outputs: Vec<String>,
}

impl Run {
    fn start(command: &'static str, common: &CommonArgs) -> Result<(Self, Arc<SearchSpace>)> {
        let mut config = match &common.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        config.apply(common);
        let space = Arc::new(config.space.build()?);
        let out = common
            .out
            .clone()
            .ok_or_else(|| Error::Config(format!("{command} needs --out <dir>")))?;
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let run = Run {
            command,
            config,
            out,
            started_at: now(),
            outputs: Vec::new(),
        };
        Ok((run, space))
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn finish(self, space: &SearchSpace) -> Result<PathBuf> {
        let manifest = RunManifest {
            format: MANIFEST_FORMAT.into(),
            command: self.command.into(),
            seed: self.config.seed,
            config: self.config,
            version: env!("CARGO_PKG_VERSION").into(),
            space_fingerprint: space.fingerprint().into(),
            started_at: self.started_at,
            finished_at: now(),
            outputs: self.outputs,
        };
        let path = self.out.join(MANIFEST_FILE);
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        Ok(self.out)
    }
}

/// The validation oracle described by a config.
pub enum ConfiguredOracle {
    Synthetic(SyntheticOracle),
    Tabular(TabularOracle),
}

impl Oracle for ConfiguredOracle {
    fn eval_acc(&self, arch: &Architecture) -> f64 {
        match self {
            ConfiguredOracle::Synthetic(o) => o.eval_acc(arch),
            ConfiguredOracle::Tabular(o) => o.eval_acc(arch),
        }
    }

    fn noise(&self) -> NoiseModel {
        match self {
            ConfiguredOracle::Synthetic(o) => o.noise(),
            ConfiguredOracle::Tabular(o) => o.noise(),
        }
    }
}

fn synthetic(config: &ExperimentConfig, space: &Arc<SearchSpace>) -> Result<SyntheticOracle> {
    let oc = &config.oracle;
    let oracle = generate_synthetic(
        space.clone(),
        oc.pairwise_strength,
        oc.noise_sd,
        config.derived_seed(streams::SPACE_GEN),
    )?;
    let noise = NoiseModel {
        binomial_batches: oc.binomial_batches,
        ..oracle.noise
    };
    Ok(oracle.with_noise(noise))
}

/// Builds the oracle for `config`; a `bench` flag overrides the config and
/// selects the tabular oracle.
pub fn build_oracle(
    config: &mut ExperimentConfig,
    space: &Arc<SearchSpace>,
    bench: Option<&Path>,
) -> Result<ConfiguredOracle> {
    if let Some(path) = bench {
        config.oracle.kind = OracleKind::Tabular;
        config.oracle.bench = Some(path.to_path_buf());
    }
    match config.oracle.kind {
        OracleKind::Synthetic => Ok(ConfiguredOracle::Synthetic(synthetic(config, space)?)),
        OracleKind::Tabular => {
            let path = config.oracle.bench.as_ref().ok_or_else(|| {
                Error::Config("tabular oracle needs oracle.bench or --bench".into())
            })?;
            let table = Arc::new(BenchmarkTable::load_for(path, space)?);
            let noise = NoiseModel {
                seed: config.derived_seed(streams::EVALUATOR_NOISE),
                loss_sd: config.oracle.noise_sd,
                binomial_batches: config.oracle.binomial_batches,
            };
            Ok(ConfiguredOracle::Tabular(TabularOracle::new(table, noise)))
        }
    }
}

pub fn cmd_gen_bench(common: &CommonArgs, replicas: u64) -> Result<PathBuf> {
    let (mut run, space) = Run::start("gen-bench", common)?;
    let oracle = synthetic(&run.config, &space)?;
    let table = BenchmarkTable::from_synthetic(&oracle, replicas)?;
    run.write("bench.json", &table.to_json())?;
    println!(
        "{} entries for {} ({} architectures)",
        table.len(),
        space.name(),
        space.size()
    );
    run.finish(&space)
}

pub fn cmd_train(common: &CommonArgs, bench: Option<&Path>) -> Result<PathBuf> {
    let (mut run, space) = Run::start("train", common)?;
    let oracle = build_oracle(&mut run.config, &space, bench)?;
    let mut trainer = SurrogateTrainer::new(
        &oracle,
        run.config.trainer,
        run.config.derived_seed(streams::EVALUATOR_NOISE),
    )?;
    let (tree, log) = run_training(space.clone(), &mut trainer, &run.config.train)?;
    run.write("tree.json", &tree.snapshot())?;
    let mut csv = Vec::new();
    log.write_csv(&mut csv)?;
    run.write("train_log.csv", &csv)?;
    run.write("train_log.json", &log.to_json())?;
    println!(
        "{} iterations, {} tree nodes, baseline {:.6}",
        log.records.len(),
        tree.nodes().len(),
        tree.baseline().value
    );
    run.finish(&space)
}

pub fn cmd_search(common: &CommonArgs, tree: Option<&Path>, bench: Option<&Path>) -> Result<PathBuf> {
    let (mut run, space) = Run::start("search", common)?;
    if let Some(path) = tree {
        run.config.tree = Some(path.to_path_buf());
    }
    let tree_path = run
        .config
        .tree
        .clone()
        .ok_or_else(|| Error::Config("search needs --tree <tree.json>".into()))?;
    let bytes = fs::read(&tree_path).map_err(|e| Error::io(&tree_path, e))?;
    let mut tree = MctTree::restore(&bytes, space.clone())?;
    let mut oracle = build_oracle(&mut run.config, &space, bench)?;
    let report = hierarchical_search(&mut tree, &mut oracle, &run.config.search)?;
    run.write("search_report.json", &report.to_json())?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    run.write("trace.csv", &csv)?;
    println!("best {} acc {:.6}", report.best, report.best_acc);
    println!(
        "images {} (batch evals {}, full evals {}, worst case per path {})",
        report.images_consumed,
        report.batch_evals,
        report.full_evals,
        report.worst_case_images_per_path
    );
    run.finish(&space)
}

pub fn cmd_baseline(
    common: &CommonArgs,
    kind: BaselineKind,
    bench: Option<&Path>,
    budget: Option<usize>,
) -> Result<PathBuf> {
    let (mut run, space) = Run::start("baseline", common)?;
    if let Some(b) = budget {
        run.config.baseline.budget = b;
    }
    let mut oracle = build_oracle(&mut run.config, &space, bench)?;
    let trace: SearchTrace = match kind {
        BaselineKind::Random => {
            let mut rng = SeedKey::new(run.config.seed).name(streams::BASELINE).rng();
            let cfg = &run.config.baseline;
            random_search(&space, &mut oracle, cfg.budget, cfg.dedup, &mut rng)?
        }
        BaselineKind::Evo => evolutionary_search(&space, &mut oracle, &run.config.baseline.evo)?,
    };
    let mut csv = Vec::new();
    write_trace_csv(&mut csv, &trace.rows)?;
    run.write("trace.csv", &csv)?;
    println!(
        "best {} score {:.6} after {} evaluations",
        trace.best,
        trace.best_score,
        trace.rows.len()
    );
    run.finish(&space)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub n: usize,
    pub kendall_tau: f64,
    pub spearman_rho: f64,
}

pub fn cmd_correlate(a: &Path, b: &Path) -> Result<Correlation> {
    let load = |p: &Path| -> Result<Ranking> {
        let f = fs::File::open(p).map_err(|e| Error::io(p, e))?;
        Ranking::read_csv(f)
    };
    let (ra, rb) = (load(a)?, load(b)?);
    let c = Correlation {
        n: ra.len(),
        kendall_tau: kendall_tau(&ra, &rb)?,
        spearman_rho: spearman_rho(&ra, &rb)?,
    };
    println!("{}", serde_json::to_string(&c)?);
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub step: u64,
    /// Full evaluations so far, `step + 1`.
    pub evaluations: u64,
    pub arch: Architecture,
    pub score: f64,
    pub incumbent_score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub incumbent_percentile: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: String,
    pub evaluations: usize,
    pub best_arch: Architecture,
    pub best_score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub avg_percentile_rank: Option<f64>,
}

fn trace_path(run: &Path) -> PathBuf {
    if run.is_dir() {
        run.join("trace.csv")
    } else {
        run.to_path_buf()
    }
}

/// Writes `comparison.csv` (one row per input trace row, ready for plotting
/// evaluations against incumbent score) and `summary.json`.
pub fn cmd_report(common: &CommonArgs, runs: &[PathBuf], bench: Option<&Path>) -> Result<PathBuf> {
    let out = common
        .out
        .clone()
        .ok_or_else(|| Error::Config("report needs --out <dir>".into()))?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let table = bench.map(BenchmarkTable::load).transpose()?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for run in runs {
        let path = trace_path(run);
        let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let trace = read_trace_csv(f)?;
        let name = run.display().to_string();
        let mut best: Option<(Architecture, f64)> = None;
        for r in &trace {
            if best.as_ref().is_none_or(|(_, s)| r.score > *s) {
                best = Some((r.arch.clone(), r.score));
            }
            let incumbent_percentile = match &table {
                Some(t) => {
                    let arch = &best.as_ref().expect("set above").0;
                    Some(avg_percentile_rank(std::slice::from_ref(arch), t)?)
                }
                None => None,
            };
            rows.push(ReportRow {
                run: name.clone(),
                step: r.step,
                evaluations: r.step + 1,
                arch: r.arch.clone(),
                score: r.score,
                incumbent_score: r.incumbent_score,
                incumbent_percentile,
            });
        }
        let (best_arch, best_score) =
            best.ok_or_else(|| Error::Config(format!("{}: empty trace", path.display())))?;
        let avg_percentile_rank = match &table {
            Some(t) => {
                let archs: Vec<Architecture> = trace.iter().map(|r| r.arch.clone()).collect();
                Some(avg_percentile_rank(&archs, t)?)
            }
            None => None,
        };
        summaries.push(RunSummary {
            run: name,
            evaluations: trace.len(),
            best_arch,
            best_score,
            avg_percentile_rank,
        });
    }

    let csv_path = out.join("comparison.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let summary_path = out.join("summary.json");
    let by_run: BTreeMap<&str, &RunSummary> = summaries.iter().map(|s| (s.run.as_str(), s)).collect();
    let mut bytes = serde_json::to_vec_pretty(&by_run)?;
    bytes.push(b'\n');
    fs::write(&summary_path, bytes).map_err(|e| Error::io(&summary_path, e))?;
    for s in &summaries {
        println!("{}: best {:.6} over {} evaluations", s.run, s.best_score, s.evaluations);
    }
    Ok(out)
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenBench { common, replicas } => cmd_gen_bench(&common, replicas).map(drop),
        Command::Train { common, bench } => cmd_train(&common, bench.as_deref()).map(drop),
        Command::Search {
            common,
            tree,
            bench,
        } => cmd_search(&common, tree.as_deref(), bench.as_deref()).map(drop),
        Command::Baseline {
            common,
            kind,
            bench,
            budget,
        } => cmd_baseline(&common, kind, bench.as_deref(), budget).map(drop),
        Command::Correlate { a, b, .. } => cmd_correlate(&a, &b).map(drop),
        Command::Report { common, runs, bench } => cmd_report(&common, &runs, bench.as_deref()).map(drop),
    }
}
