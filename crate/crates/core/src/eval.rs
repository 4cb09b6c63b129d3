//! Evaluation oracles standing in for supernet training and validation.
//!
//! - [`SyntheticOracle`]: unary plus adjacent-layer pairwise terms, squashed
//!   into an accuracy. The pairwise strength dials how much the best op of a
//!   layer depends on the previous layer's choice.
//! - [`BenchmarkTable`] / [`TabularOracle`]: a lookup table keyed by canonical
//!   arch-strings, stored in the `nas-bench-macro-v1` JSON format.
//! - [`SurrogateTrainer`]: decaying, noisy training losses driven by an inner
//!   oracle's accuracy.
//!
//! All noise is keyed by the query (seed, architecture, batch or iteration),
//! so repeated queries return identical observations in any order.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SeedKey;
use crate::space::{Architecture, SearchSpace, SpaceConfig};

pub const BENCH_FORMAT: &str = "nas-bench-macro-v1";

/// Noise applied to per-batch observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub seed: u64,
    /// Log-space standard deviation of batch losses (mean-one lognormal factor).
    pub loss_sd: f64,
    /// Draw batch accuracies as `Binomial(batch_size, acc) / batch_size`;
    /// when false a batch accuracy is the noise-free accuracy.
    pub binomial_batches: bool,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        NoiseModel {
            seed: 0,
            loss_sd: 0.0,
            binomial_batches: false,
        }
    }
}

fn query_rng(seed: u64, tag: &str, arch: &Architecture, id: u64) -> rand_chacha::ChaCha8Rng {
    SeedKey::new(seed).name(tag).bytes(arch.choices()).word(id).rng()
}

fn standard_normal(seed: u64, tag: &str, arch: &Architecture, id: u64) -> f64 {
    query_rng(seed, tag, arch, id).sample(StandardNormal)
}

/// Mean-one lognormal factor `exp(sd * z - sd^2 / 2)`.
fn lognormal_factor(sd: f64, z: f64) -> f64 {
    (sd * z - 0.5 * sd * sd).exp()
}

/// Pointwise accuracy oracle.
pub trait Oracle {
    /// Noise-free accuracy in [0, 1].
    fn eval_acc(&self, arch: &Architecture) -> f64;

    fn noise(&self) -> NoiseModel;

    /// Noisy loss of one batch; its expectation is `-ln(eval_acc)`.
    fn eval_loss_batch(&self, arch: &Architecture, batch_id: u64) -> f64 {
        let noise = self.noise();
        let clean = -self.eval_acc(arch).max(1e-6).ln();
        let clean = clean.max(1e-9);
        if noise.loss_sd == 0.0 {
            return clean;
        }
        let z = standard_normal(noise.seed, "batch-loss", arch, batch_id);
        clean * lognormal_factor(noise.loss_sd, z)
    }

    /// Fraction of `batch_size` samples classified correctly in one batch.
    fn eval_acc_batch(&self, arch: &Architecture, batch_id: u64, batch_size: u32) -> f64 {
        let acc = self.eval_acc(arch).clamp(0.0, 1.0);
        let noise = self.noise();
        if !noise.binomial_batches || batch_size == 0 {
            return acc;
        }
        let mut rng = query_rng(noise.seed, "batch-acc", arch, batch_id);
        let hits = Binomial::new(batch_size as u64, acc)
            .expect("accuracy is a probability")
            .sample(&mut rng);
        hits as f64 / batch_size as f64
    }
}

impl<O: Oracle + ?Sized> Oracle for &O {
    fn eval_acc(&self, arch: &Architecture) -> f64 {
        (**self).eval_acc(arch)
    }
    fn noise(&self) -> NoiseModel {
        (**self).noise()
    }
}

impl<O: Oracle + ?Sized> Oracle for Box<O> {
    fn eval_acc(&self, arch: &Architecture) -> f64 {
        (**self).eval_acc(arch)
    }
    fn noise(&self) -> NoiseModel {
        (**self).noise()
    }
}

impl<O: Oracle + ?Sized> Oracle for Arc<O> {
    fn eval_acc(&self, arch: &Architecture) -> f64 {
        (**self).eval_acc(arch)
    }
    fn noise(&self) -> NoiseModel {
        (**self).noise()
    }
}

/// Produces the training loss of a path at an iteration.
pub trait TrainingEvaluator {
    fn train_loss(&mut self, arch: &Architecture, iter: u64) -> Result<f64>;
}

impl<F> TrainingEvaluator for F
where
    F: FnMut(&Architecture, u64) -> Result<f64>,
{
    fn train_loss(&mut self, arch: &Architecture, iter: u64) -> Result<f64> {
        self(arch, iter)
    }
}

/// Validation-side evaluation used by the search stage and the baselines.
pub trait ValidationEvaluator {
    fn batch_accuracy(&mut self, arch: &Architecture, batch_id: u64, batch_size: u32) -> Result<f64>;
    fn full_accuracy(&mut self, arch: &Architecture) -> Result<f64>;
}

impl<O: Oracle + ?Sized> ValidationEvaluator for O {
    fn batch_accuracy(&mut self, arch: &Architecture, batch_id: u64, batch_size: u32) -> Result<f64> {
        Ok(self.eval_acc_batch(arch, batch_id, batch_size))
    }

    fn full_accuracy(&mut self, arch: &Architecture) -> Result<f64> {
        Ok(self.eval_acc(arch))
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Accuracy the squashing map assigns to the top of the calibration sample.
const SQUASH_HIGH: f64 = 0.95;
const CALIBRATION_DRAWS: usize = 1000;

/// Additive unary + adjacent-pairwise score, squashed by a logistic map.
///
/// Scores are computed on the canonical form of an architecture, so
/// identity-equivalent architectures always agree.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOracle {
    space: Arc<SearchSpace>,
    /// `unary[l][op]`
    pub unary: Vec<Vec<f64>>,
    /// `pairwise[l][prev][op]`; empty at `l = 0`.
    pub pairwise: Vec<Vec<Vec<f64>>>,
    pub pairwise_strength: f64,
    /// Spread of per-replica accuracy noise (benchmark "seeds").
    pub noise_sd: f64,
    pub seed: u64,
    /// Logistic map `acc = logistic(slope * (score - offset))`.
    pub slope: f64,
    pub offset: f64,
    pub noise: NoiseModel,
}

/// Draws unary terms scaled by `1 - pairwise_strength` and pairwise terms
/// scaled by `pairwise_strength`, then calibrates the logistic squash so that
/// 1000 random architectures span `[0.5, 0.95]`.
pub fn generate_synthetic(
    space: Arc<SearchSpace>,
    pairwise_strength: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<SyntheticOracle> {
    if !(0.0..=1.0).contains(&pairwise_strength) {
        return Err(Error::InvalidValue {
            what: "pairwise_strength",
            value: pairwise_strength,
        });
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::InvalidValue {
            what: "noise_sd",
            value: noise_sd,
        });
    }
    let mut rng = SeedKey::new(seed).name("synthetic-tables").rng();
    let n = space.num_layers();
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let unary: Vec<Vec<f64>> = (0..n)
        .map(|l| (0..space.arity(l)).map(|_| normal() * (1.0 - pairwise_strength)).collect())
        .collect();
    let pairwise: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|l| {
            if l == 0 {
                return Vec::new();
            }
            (0..space.arity(l - 1))
                .map(|_| (0..space.arity(l)).map(|_| normal() * pairwise_strength).collect())
                .collect()
        })
        .collect();

    let mut oracle = SyntheticOracle {
        space: space.clone(),
        unary,
        pairwise,
        pairwise_strength,
        noise_sd,
        seed,
        slope: 0.0,
        offset: 0.0,
        noise: NoiseModel {
            seed: SeedKey::new(seed).name("oracle-noise").value(),
            loss_sd: noise_sd,
            binomial_batches: true,
        },
    };
    let mut rng = SeedKey::new(seed).name("synthetic-calibration").rng();
    let (lo, hi) = (0..CALIBRATION_DRAWS)
        .map(|_| oracle.score(&space.random_arch(&mut rng)))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)));
    let logit_high = (SQUASH_HIGH / (1.0 - SQUASH_HIGH)).ln();
    oracle.slope = if hi > lo { logit_high / (hi - lo) } else { 0.0 };
    oracle.offset = lo;
    Ok(oracle)
}

impl SyntheticOracle {
    pub fn space(&self) -> &Arc<SearchSpace> {
        &self.space
    }

    /// Raw additive score of the canonical form of `arch`.
    pub fn score(&self, arch: &Architecture) -> f64 {
        let canon = self.space.canonicalize(arch);
        let c = canon.choices();
        let mut s = 0.0;
        for l in 0..c.len() {
            s += self.unary[l][c[l] as usize];
            if l > 0 {
                s += self.pairwise[l][c[l - 1] as usize][c[l] as usize];
            }
        }
        s
    }

    /// One noisy accuracy measurement (`replica` plays the role of a training seed).
    pub fn replica_acc(&self, arch: &Architecture, replica: u64) -> f64 {
        let acc = self.eval_acc(arch);
        if self.noise_sd == 0.0 {
            return acc;
        }
        let canon = self.space.canonicalize(arch);
        let z = standard_normal(self.noise.seed, "replica", &canon, replica);
        (acc + self.noise_sd * z).clamp(0.0, 1.0)
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = noise;
        self
    }
}

impl Oracle for SyntheticOracle {
    fn eval_acc(&self, arch: &Architecture) -> f64 {
        logistic(self.slope * (self.score(arch) - self.offset))
    }

    fn noise(&self) -> NoiseModel {
        self.noise
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub mean_acc: f64,
    pub accs: Vec<f64>,
    pub flops: u64,
    pub params: u64,
}

/// Ground-truth table keyed by canonical architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkTable {
    space: Arc<SearchSpace>,
    entries: BTreeMap<Architecture, BenchRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SpaceRef {
    Preset { preset: String },
    Inline(SpaceConfig),
}

#[derive(Serialize, Deserialize)]
struct BenchDoc {
    format: String,
    space: SpaceRef,
    fingerprint: String,
    entries: BTreeMap<String, BenchRecord>,
}

/// Tolerance for disagreeing records of identity-equivalent architectures.
pub const DUPLICATE_TOLERANCE: f64 = 1e-6;

impl BenchmarkTable {
    /// Evaluates every canonical architecture with `replicas` noisy accuracy draws.
    pub fn from_synthetic(oracle: &SyntheticOracle, replicas: u64) -> Result<Self> {
        let space = oracle.space().clone();
        let mut entries = BTreeMap::new();
        for arch in space.enumerate()? {
            if !space.is_canonical(&arch) {
                continue;
            }
            let accs: Vec<f64> = (0..replicas.max(1)).map(|r| oracle.replica_acc(&arch, r)).collect();
            let cost = space.cost(&arch);
            entries.insert(
                arch,
                BenchRecord {
                    mean_acc: mean(&accs),
                    accs,
                    flops: cost.flops,
                    params: cost.params,
                },
            );
        }
        Ok(BenchmarkTable { space, entries })
    }

    /// Builds a table from arbitrary records, collapsing identity-equivalent
    /// keys and checking that the result covers the space.
    pub fn from_records(
        space: Arc<SearchSpace>,
        records: impl IntoIterator<Item = (Architecture, BenchRecord)>,
    ) -> Result<Self> {
        let bad = |m: String| Error::Benchmark(m);
        let mut entries: BTreeMap<Architecture, BenchRecord> = BTreeMap::new();
        for (arch, rec) in records {
            space
                .check(&arch)
                .map_err(|_| bad(format!("unknown arch key {arch}")))?;
            if rec.accs.is_empty() {
                return Err(bad(format!("{arch}: no accuracies")));
            }
            if let Some(a) = rec
                .accs
                .iter()
                .chain([&rec.mean_acc])
                .find(|a| !(0.0..=1.0).contains(*a))
            {
                return Err(bad(format!("{arch}: accuracy {a} outside [0, 1]")));
            }
            if (mean(&rec.accs) - rec.mean_acc).abs() > 1e-9 {
                return Err(bad(format!("{arch}: mean_acc does not match accs")));
            }
            let canon = space.canonicalize(&arch);
            match entries.get(&canon) {
                Some(prev) => {
                    let agree = (prev.mean_acc - rec.mean_acc).abs() <= DUPLICATE_TOLERANCE
                        && prev.flops == rec.flops
                        && prev.params == rec.params;
                    if !agree {
                        return Err(bad(format!(
                            "{arch} and its canonical twin {canon} disagree"
                        )));
                    }
                }
                None => {
                    entries.insert(canon, rec);
                }
            }
        }
        let table = BenchmarkTable { space, entries };
        if let Some(missing) = table.space.enumerate()?.find(|a| {
            table.space.is_canonical(a) && !table.entries.contains_key(a)
        }) {
            return Err(bad(format!("no entry for {missing}")));
        }
        Ok(table)
    }

    pub fn space(&self) -> &Arc<SearchSpace> {
        &self.space
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Canonical entries in arch-string order.
    pub fn entries(&self) -> impl Iterator<Item = (&Architecture, &BenchRecord)> {
        self.entries.iter()
    }

    /// Record of `arch`'s canonical form.
    pub fn get(&self, arch: &Architecture) -> Option<&BenchRecord> {
        self.space.check(arch).ok()?;
        self.entries.get(&self.space.canonicalize(arch))
    }

    pub fn lookup(&self, arch: &Architecture) -> Result<&BenchRecord> {
        self.get(arch)
            .ok_or_else(|| Error::Benchmark(format!("unknown arch {arch}")))
    }

    /// Highest mean accuracy; ties go to the smaller arch-string.
    pub fn best(&self) -> (&Architecture, &BenchRecord) {
        self.entries
            .iter()
            .max_by(|a, b| a.1.mean_acc.total_cmp(&b.1.mean_acc).then(b.0.cmp(a.0)))
            .expect("tables are never empty")
    }

    /// Canonical architectures sorted best first (ties by arch-string).
    pub fn ranked(&self) -> Vec<&Architecture> {
        let mut archs: Vec<(&Architecture, f64)> =
            self.entries.iter().map(|(a, r)| (a, r.mean_acc)).collect();
        archs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        archs.into_iter().map(|(a, _)| a).collect()
    }

    fn doc(&self) -> BenchDoc {
        let config = self.space.config();
        let space = match SpaceConfig::preset(&config.name) {
            Ok(preset) if preset == *config => SpaceRef::Preset {
                preset: config.name.clone(),
            },
            _ => SpaceRef::Inline(config.clone()),
        };
        BenchDoc {
            format: BENCH_FORMAT.into(),
            space,
            fingerprint: self.space.fingerprint().into(),
            entries: self
                .entries
                .iter()
                .map(|(a, r)| (a.to_string(), r.clone()))
                .collect(),
        }
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(&self.doc()).expect("benchmark serializes");
        out.push(b'\n');
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let doc: BenchDoc = serde_json::from_slice(bytes)?;
        if doc.format != BENCH_FORMAT {
            return Err(Error::Benchmark(format!("unsupported format {:?}", doc.format)));
        }
        let config = match doc.space {
            SpaceRef::Preset { preset } => SpaceConfig::preset(&preset)?,
            SpaceRef::Inline(cfg) => cfg,
        };
        let space = Arc::new(config.build()?);
        if space.fingerprint() != doc.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: space.fingerprint().into(),
                found: doc.fingerprint,
            });
        }
        let records = doc
            .entries
            .into_iter()
            .map(|(k, r)| Ok((k.parse::<Architecture>()?, r)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_records(space, records)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }

    /// Loads and checks that the table belongs to `space`.
    pub fn load_for(path: &Path, space: &SearchSpace) -> Result<Self> {
        let table = Self::load(path)?;
        if table.space.fingerprint() != space.fingerprint() {
            return Err(Error::FingerprintMismatch {
                expected: space.fingerprint().into(),
                found: table.space.fingerprint().into(),
            });
        }
        Ok(table)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// A benchmark table served as an oracle: `eval_acc` is the recorded mean accuracy.
#[derive(Debug, Clone)]
pub struct TabularOracle {
    pub table: Arc<BenchmarkTable>,
    pub noise: NoiseModel,
}

impl TabularOracle {
    pub fn new(table: Arc<BenchmarkTable>, noise: NoiseModel) -> Self {
        TabularOracle { table, noise }
    }
}

impl Oracle for TabularOracle {
    fn eval_acc(&self, arch: &Architecture) -> f64 {
        self.table
            .get(arch)
            .map(|r| r.mean_acc)
            .expect("architecture outside the benchmark's space")
    }

    fn noise(&self) -> NoiseModel {
        self.noise
    }
}

/// Shape of the surrogate loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateParams {
    /// Decaying part of the base loss at t = 0.
    pub b0: f64,
    /// Asymptotic base loss.
    pub b_floor: f64,
    /// Decay time constant, in iterations.
    pub horizon: f64,
    /// Log-space standard deviation of the per-step noise.
    pub sigma: f64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        SurrogateParams {
            b0: 2.0,
            b_floor: 0.3,
            horizon: 5000.0,
            sigma: 0.05,
        }
    }
}

impl SurrogateParams {
    pub fn base(&self, t: u64) -> f64 {
        self.b0 * (-(t as f64) / self.horizon).exp() + self.b_floor
    }
}

/// `loss(arch, t) = base(t) * (2 - quality(arch)) * eps`, with `eps` a
/// mean-one lognormal factor keyed by `(seed, arch, t)`.
#[derive(Debug, Clone)]
pub struct SurrogateTrainer<O> {
    pub quality: O,
    pub params: SurrogateParams,
    pub seed: u64,
}

impl<O: Oracle> SurrogateTrainer<O> {
    pub fn new(quality: O, params: SurrogateParams, seed: u64) -> Result<Self> {
        let p = params;
        if !(p.b0 >= 0.0 && p.b_floor > 0.0 && p.horizon > 0.0 && p.sigma >= 0.0) {
            return Err(Error::Config(format!("invalid surrogate parameters {p:?}")));
        }
        Ok(SurrogateTrainer {
            quality,
            params,
            seed,
        })
    }

    /// The loss of one training step of `arch` at iteration `t`.
    pub fn train_step(&self, arch: &Architecture, t: u64) -> f64 {
        let q = self.quality.eval_acc(arch);
        let clean = self.params.base(t) * (2.0 - q);
        if self.params.sigma == 0.0 {
            return clean;
        }
        let z = standard_normal(self.seed, "train-step", arch, t);
        clean * lognormal_factor(self.params.sigma, z)
    }
}

impl<O: Oracle> TrainingEvaluator for SurrogateTrainer<O> {
    fn train_loss(&mut self, arch: &Architecture, iter: u64) -> Result<f64> {
        Ok(self.train_step(arch, iter))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{Cost, StageConfig, StridedIdentity};

    pub(crate) fn toy_space(layers: usize, ops: &[&str]) -> Arc<SearchSpace> {
        Arc::new(
            SpaceConfig {
                name: "toy".into(),
                resolution: 8,
                in_channels: 4,
                strided_identity: StridedIdentity::Skip,
                fixed_cost: Cost::default(),
                stages: vec![StageConfig {
                    layers,
                    out_channels: 8,
                    stride: 2,
                    ops: ops.iter().map(|s| s.to_string()).collect(),
                }],
            }
            .build()
            .unwrap(),
        )
    }

    fn bench_macro() -> Arc<SearchSpace> {
        Arc::new(SpaceConfig::preset("bench-macro").unwrap().build().unwrap())
    }

    #[test]
    fn synthetic_is_seeded() {
        let space = bench_macro();
        let a = generate_synthetic(space.clone(), 0.5, 0.01, 3).unwrap();
        let b = generate_synthetic(space.clone(), 0.5, 0.01, 3).unwrap();
        let c = generate_synthetic(space, 0.5, 0.01, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.unary, c.unary);
    }

    #[test]
    fn squash_spans_the_calibration_range() {
        let space = bench_macro();
        let oracle = generate_synthetic(space.clone(), 0.5, 0.0, 11).unwrap();
        let accs: Vec<f64> = space.enumerate().unwrap().map(|a| oracle.eval_acc(&a)).collect();
        let lo = accs.iter().copied().fold(1.0, f64::min);
        let hi = accs.iter().copied().fold(0.0, f64::max);
        assert!(lo > 0.3 && lo <= 0.5 + 1e-12, "{lo}");
        assert!(hi >= 0.95 - 1e-12 && hi < 0.99, "{hi}");
    }

    #[test]
    fn separable_oracle_is_maximized_layerwise() {
        let space = toy_space(3, &["MB3_K3", "MB6_K5", "MB3_K5"]);
        let oracle = generate_synthetic(space.clone(), 0.0, 0.0, 5).unwrap();
        let greedy: Vec<u8> = oracle
            .unary
            .iter()
            .map(|row| {
                (0..row.len())
                    .max_by(|&i, &j| row[i].total_cmp(&row[j]))
                    .unwrap() as u8
            })
            .collect();
        let best = space
            .enumerate()
            .unwrap()
            .max_by(|a, b| oracle.eval_acc(a).total_cmp(&oracle.eval_acc(b)))
            .unwrap();
        assert_eq!(best.choices(), &greedy[..]);
    }

    #[test]
    fn identity_twins_score_alike() {
        let space = bench_macro();
        let oracle = generate_synthetic(space.clone(), 0.7, 0.01, 2).unwrap();
        let a = space.parse_arch("01201120").unwrap();
        let b = space.parse_arch("10021012").unwrap();
        assert_eq!(space.canonicalize(&a), space.canonicalize(&b));
        assert_eq!(oracle.eval_acc(&a), oracle.eval_acc(&b));
        assert_eq!(oracle.replica_acc(&a, 1), oracle.replica_acc(&b, 1));
    }

    #[test]
    fn batch_observations() {
        let space = bench_macro();
        let arch = space.parse_arch("12121212").unwrap();
        let quiet = generate_synthetic(space.clone(), 0.5, 0.0, 1).unwrap();
        let clean = quiet.eval_loss_batch(&arch, 0);
        assert!(clean > 0.0);
        assert!((0..20).all(|b| quiet.eval_loss_batch(&arch, b) == clean));
        let noisy = generate_synthetic(space, 0.5, 0.2, 1).unwrap();
        assert_eq!(noisy.eval_loss_batch(&arch, 4), noisy.eval_loss_batch(&arch, 4));
        assert_ne!(noisy.eval_loss_batch(&arch, 4), noisy.eval_loss_batch(&arch, 5));
        let acc = noisy.eval_acc_batch(&arch, 3, 128);
        assert_eq!(acc, noisy.eval_acc_batch(&arch, 3, 128));
        assert!((acc * 128.0).fract() == 0.0);
    }

    #[test]
    fn surrogate_formula() {
        let space = toy_space(1, &["MB3_K3"]);
        let arch = space.arch(vec![0]).unwrap();
        struct Fixed(f64);
        impl Oracle for Fixed {
            fn eval_acc(&self, _: &Architecture) -> f64 {
                self.0
            }
            fn noise(&self) -> NoiseModel {
                NoiseModel::noiseless()
            }
        }
        let p = SurrogateParams {
            sigma: 0.0,
            ..Default::default()
        };
        let perfect = SurrogateTrainer::new(Fixed(1.0), p, 0).unwrap();
        for t in [0, 10, 10_000] {
            assert_eq!(perfect.train_step(&arch, t), p.base(t));
        }
        let worse = SurrogateTrainer::new(Fixed(0.7), p, 0).unwrap();
        assert!(worse.train_step(&arch, 5) > perfect.train_step(&arch, 5));
        let ratio = p.base(0) / p.base(p.horizon as u64);
        let expected = (p.b0 + p.b_floor) / (p.b0 * (-1f64).exp() + p.b_floor);
        assert!((ratio - expected).abs() < 1e-12);
        assert!(SurrogateTrainer::new(Fixed(1.0), SurrogateParams { b_floor: 0.0, ..p }, 0).is_err());
    }

    #[test]
    fn table_round_trip_and_canonical_lookup() {
        let space = bench_macro();
        let oracle = generate_synthetic(space.clone(), 0.5, 0.005, 9).unwrap();
        let table = BenchmarkTable::from_synthetic(&oracle, 3).unwrap();
        let json = table.to_json();
        let back = BenchmarkTable::from_json(&json).unwrap();
        assert_eq!(back, table);
        assert_eq!(back.to_json(), json);

        let raw = space.parse_arch("01200120").unwrap();
        let canon = space.canonicalize(&raw);
        assert_ne!(raw, canon);
        assert_eq!(table.get(&raw), table.get(&canon));
        let tab = TabularOracle::new(Arc::new(table.clone()), NoiseModel::noiseless());
        assert_eq!(tab.eval_acc(&raw), table.lookup(&canon).unwrap().mean_acc);
    }

    #[test]
    fn raw_keyed_files_collapse() {
        let space = toy_space(2, &["ID", "MB3_K3"]);
        let rec = |acc: f64| BenchRecord {
            mean_acc: acc,
            accs: vec![acc],
            flops: 0,
            params: 0,
        };
        let cost = |s: &str| space.cost(&space.parse_arch(s).unwrap());
        let full = |acc: f64, s: &str| {
            let c = cost(s);
            BenchRecord {
                flops: c.flops,
                params: c.params,
                ..rec(acc)
            }
        };
        let rows = vec![
            ("00".parse().unwrap(), full(0.5, "00")),
            ("01".parse().unwrap(), full(0.6, "01")),
            ("10".parse().unwrap(), full(0.6, "10")),
            ("11".parse().unwrap(), full(0.7, "11")),
        ];
        let table = BenchmarkTable::from_records(space.clone(), rows.clone()).unwrap();
        assert_eq!(table.len(), 3);

        let mut clash = rows.clone();
        clash[1].1 = full(0.65, "01");
        assert!(BenchmarkTable::from_records(space.clone(), clash).is_err());
        let mut out_of_range = rows.clone();
        out_of_range[0].1 = full(1.5, "00");
        assert!(BenchmarkTable::from_records(space.clone(), out_of_range).is_err());
        assert!(BenchmarkTable::from_records(space.clone(), rows[..2].to_vec()).is_err());
        let mut unknown = rows;
        unknown.push(("12".parse().unwrap(), rec(0.1)));
        assert!(BenchmarkTable::from_records(space, unknown).is_err());
    }

    #[test]
    fn wrong_fingerprint_is_rejected() {
        let space = bench_macro();
        let oracle = generate_synthetic(space, 0.5, 0.0, 1).unwrap();
        let table = BenchmarkTable::from_synthetic(&oracle, 1).unwrap();
        let text = String::from_utf8(table.to_json()).unwrap();
        let tampered = text.replacen(table.space().fingerprint(), &"0".repeat(64), 1);
        assert!(matches!(
            BenchmarkTable::from_json(tampered.as_bytes()),
            Err(Error::FingerprintMismatch { .. })
        ));
    }
}
