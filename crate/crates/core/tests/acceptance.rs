// Acceptance checks, one PASS/FAIL line per criterion. Runs without the libtest
// harness so the lines land in `cargo test` output; exits non-zero on any FAIL.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use mctnas::baselines::{evolutionary_search, marginal_greedy, random_search, EvoConfig};
use mctnas::cli::{cmd_search, cmd_train, CommonArgs};
use mctnas::eval::{
    generate_synthetic, BenchmarkTable, NoiseModel, Oracle, SurrogateParams, SurrogateTrainer,
    SyntheticOracle, TabularOracle,
};
use mctnas::metrics::{avg_percentile_rank, kendall_tau, spearman_rho, Ranking};
use mctnas::search::{
    hierarchical_search, hierarchical_search_traced, search_cost, SearchConfig, SearchEvent,
};
use mctnas::space::{resolve_space, Cost, SpaceConfig, StageConfig, StridedIdentity};
use mctnas::train::{run_training, TrainConfig};
use mctnas::tree::{
    sample_child, softmax, uct_search, uct_train, BaselineState, MctTree, UctParams,
};
use mctnas::{Architecture, SearchSpace};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bench_space() -> Arc<SearchSpace> {
    Arc::new(resolve_space("bench-macro").unwrap())
}

/// Synthetic tabular benchmark over bench-macro: pairwise strength 0.5,
/// noise sd 0.005, three replicas per architecture.
fn tabular(seed: u64) -> (Arc<SearchSpace>, Arc<BenchmarkTable>, TabularOracle) {
    let space = bench_space();
    let oracle = generate_synthetic(space.clone(), 0.5, 0.005, 100 + seed).unwrap();
    let table = Arc::new(BenchmarkTable::from_synthetic(&oracle, 3).unwrap());
    let tab = TabularOracle::new(table.clone(), oracle.noise);
    (space, table, tab)
}

fn train<O: Oracle>(space: &Arc<SearchSpace>, quality: O, seed: u64, iters: u64) -> MctTree {
    let mut trainer = SurrogateTrainer::new(quality, SurrogateParams::default(), seed).unwrap();
    let cfg = TrainConfig {
        total_iters: iters,
        seed,
        ..Default::default()
    };
    run_training(space.clone(), &mut trainer, &cfg).unwrap().0
}

fn exact_recurrences() -> Outcome {
    let space = bench_space();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let beta: f64 = if rng.random_bool(0.5) { 0.9 } else { rng.random() };
        let gamma: f64 = if rng.random_bool(0.5) { 0.9 } else { rng.random() };
        let mut tree = MctTree::new(space.clone(), beta, gamma).unwrap();
        let mut baseline = BaselineState::new(beta).unwrap();
        let steps = rng.random_range(1..=40);
        let mut losses = Vec::with_capacity(steps);
        let mut q: HashMap<Vec<u8>, (u64, f64)> = HashMap::new();
        let mut g: HashMap<(usize, u8), Vec<f64>> = HashMap::new();
        for _ in 0..steps {
            let loss = rng.random_range(0.2..3.0);
            losses.push(loss);
            baseline.update(loss).unwrap();
            let r = baseline.reward(loss).unwrap();

            let n = losses.len() as i32;
            let closed_b = beta.powi(n - 1) * losses[0]
                + (1..losses.len())
                    .map(|i| (1.0 - beta) * beta.powi(n - 1 - i as i32) * losses[i])
                    .sum::<f64>();
            worst = worst.max((baseline.value - closed_b).abs());
            worst = worst.max((r - closed_b / loss).abs());

            let arch = space.random_arch(&mut rng);
            tree.backpropagate(&arch, r).unwrap();
            for depth in 0..=arch.len() {
                let e = q.entry(arch.choices()[..depth].to_vec()).or_default();
                e.0 += 1;
                e.1 += r;
            }
            for (l, &op) in arch.choices().iter().enumerate() {
                g.entry((l, op)).or_default().push(r);
            }
        }
        for (prefix, (n, sum)) in &q {
            let node = tree.node(tree.find(prefix).ok_or("missing node")?);
            if node.visits != *n {
                return Err(format!("visit count {} != ledger {n}", node.visits));
            }
            worst = worst.max((node.q_sum - sum).abs());
        }
        for ((l, op), rs) in &g {
            let k = rs.len() as i32;
            let closed: f64 = rs
                .iter()
                .enumerate()
                .map(|(i, r)| (1.0 - gamma) * gamma.powi(k - 1 - i as i32) * r)
                .sum();
            worst = worst.max((tree.comm().get(*l, *op as usize) - closed).abs());
        }
    }
    check(worst <= 1e-12, format!("max deviation {worst:.2e} over 10^4 sequences"))
}

fn uct_formulas() -> Outcome {
    let space = bench_space();
    let mut seed_tree = MctTree::with_defaults(space.clone());
    let arch = space.random_arch(&mut ChaCha8Rng::seed_from_u64(0));
    seed_tree.backpropagate(&arch, 1.0).unwrap();
    let template = seed_tree.node(seed_tree.root().child(arch.choices()[0] as usize).unwrap()).clone();

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let p = UctParams {
            c1: rng.random_range(0.0..1.0),
            c2: rng.random_range(0.0..1.0),
            tau: 0.0025,
        };
        let mut node = template.clone();
        node.visits = rng.random_range(1..10_000);
        node.q_sum = rng.random_range(0.0..2.0) * node.visits as f64;
        let parent_n = node.visits + rng.random_range(0..10_000u64);
        let g: f64 = rng.random_range(0.0..2.0);
        let n = node.visits as f64;
        let direct_train = node.q_sum / n + p.c1 * ((parent_n as f64).ln() / n).sqrt() + p.c2 * g;
        let direct_search = node.q_sum / n + p.c2 * g;
        worst = worst.max((uct_train(&node, parent_n, g, &p) - direct_train).abs());
        worst = worst.max((uct_search(&node, g, &p) - direct_search).abs());
    }

    let mut sum_err = 0.0f64;
    let mut hits = 0u32;
    let draws = 10_000u32;
    for trial in 0..100 {
        let scores: Vec<f64> = (0..rng.random_range(2..14)).map(|_| rng.random()).collect();
        let tau: f64 = 10f64.powf(rng.random_range(-3.0..1.0));
        sum_err = sum_err.max((softmax(&scores, tau).iter().sum::<f64>() - 1.0).abs());
        if trial == 0 {
            let argmax = (0..scores.len())
                .max_by(|&a, &b| scores[a].total_cmp(&scores[b]))
                .unwrap();
            hits = (0..draws)
                .filter(|_| sample_child(&scores, 1e-9, &mut rng) == argmax)
                .count() as u32;
        }
    }
    let freq = hits as f64 / draws as f64;
    check(
        worst <= 1e-12 && sum_err <= 1e-9 && freq > 0.999,
        format!("max UCT deviation {worst:.2e}, softmax sum error {sum_err:.2e}, argmax frequency {freq:.4}"),
    )
}

fn search_cost_accounting() -> Outcome {
    let space = resolve_space("mobilenet-21").unwrap();
    let cfg = SearchConfig {
        batch_size: 128,
        n_thrd: 6,
        ..Default::default()
    };
    let cost = search_cost(&space, &cfg);
    let ratio = cost as f64 / 50_000.0;
    check(
        cost == 209_664 && (4.0..=5.0).contains(&ratio),
        format!("search_cost {cost}, ratio to full set {ratio:.3}"),
    )
}

fn ranking(values: &[usize]) -> Ranking {
    Ranking::from_scores(values.iter().enumerate().map(|(i, &v)| (format!("i{i}"), v as f64))).unwrap()
}

/// Concordant minus discordant pairs over `n (n - 1) / 2`.
fn brute_kendall(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut conc, mut disc) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let s = (a[i] as i64 - a[j] as i64) * (b[i] as i64 - b[j] as i64);
            if s > 0 {
                conc += 1;
            } else {
                disc += 1;
            }
        }
    }
    (conc - disc) as f64 / (n * (n - 1) / 2) as f64
}

/// Pearson correlation of the rank vectors, centred in exact integers.
fn brute_spearman(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as i64;
    let c = |v: usize| 2 * v as i64 - (n + 1);
    let cov: i64 = a.iter().zip(b).map(|(&x, &y)| c(x) * c(y)).sum();
    let var: i64 = a.iter().map(|&x| c(x) * c(x)).sum();
    cov as f64 / var as f64
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n);
            out.push(q);
        }
    }
    out
}

fn correlation_oracles() -> Outcome {
    let mut pairs = 0u64;
    for n in 2..=6 {
        let perms = permutations(n);
        let base: Vec<usize> = (1..=n).collect();
        let rb = ranking(&base);
        for p in &perms {
            let rp = ranking(p);
            let (t, r) = (kendall_tau(&rb, &rp).unwrap(), spearman_rho(&rb, &rp).unwrap());
            if t != brute_kendall(&base, p) || r != brute_spearman(&base, p) {
                return Err(format!("mismatch on {p:?}: tau {t}, rho {r}"));
            }
            pairs += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut a: Vec<usize> = (1..=100).collect();
        let mut b = a.clone();
        a.shuffle(&mut rng);
        b.shuffle(&mut rng);
        let (ra, rb) = (ranking(&a), ranking(&b));
        worst = worst.max((kendall_tau(&ra, &rb).unwrap() - brute_kendall(&a, &b)).abs());
        worst = worst.max((spearman_rho(&ra, &rb).unwrap() - brute_spearman(&a, &b)).abs());
    }
    check(
        worst <= 1e-12,
        format!("{pairs} small permutations exact, n=100 max deviation {worst:.2e}"),
    )
}

fn gate_invariant() -> Outcome {
    let space = bench_space();
    let (mut selects, mut explores, mut violations) = (0u64, 0u64, 0u64);
    for s in 0..50u64 {
        let oracle = generate_synthetic(space.clone(), 0.5, 0.005, 500 + s).unwrap();
        let mut tree = train(&space, &oracle, s, 800);
        let mut replay = tree.clone();
        let cfg = SearchConfig {
            k: 10,
            seed: s,
            ..Default::default()
        };
        let mut eval = oracle.clone();
        let (_, events) = hierarchical_search_traced(&mut tree, &mut eval, &cfg).unwrap();

        // Rebuild the visit counts from the pre-search tree and the explore
        // events alone, then check each selection against them.
        let mut prefix: Vec<u8> = Vec::new();
        for event in &events {
            match event {
                SearchEvent::Explore { arch, reward, .. } => {
                    replay.backpropagate(arch, *reward).unwrap();
                    explores += 1;
                }
                SearchEvent::Select { depth, op, .. } => {
                    let total: u64 = replay
                        .find(&prefix)
                        .map_or(0, |id| replay.child_visits(id).iter().sum());
                    let mean = total as f64 / space.arity(*depth) as f64;
                    if mean < cfg.n_thrd as f64 || prefix.len() != *depth {
                        violations += 1;
                    }
                    prefix.push(*op);
                    selects += 1;
                }
                SearchEvent::FullEval { .. } => prefix.clear(),
            }
        }
    }
    check(
        violations == 0 && explores > 0,
        format!("{violations} violations in {selects} selections and {explores} gated explorations"),
    )
}

fn finds_global_best() -> Outcome {
    let (mut mct, mut rs) = (0u32, 0u32);
    for s in 0..20u64 {
        let (space, table, tab) = tabular(s);
        let best = table.best().0.clone();
        let mut tree = train(&space, tab.clone(), s, 20_000);
        let mut ev = tab.clone();
        let cfg = SearchConfig {
            k: 50,
            seed: s,
            ..Default::default()
        };
        let report = hierarchical_search(&mut tree, &mut ev, &cfg).unwrap();
        mct += (space.canonicalize(&report.best) == best) as u32;

        let mut ev = tab.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + s);
        let trace = random_search(&space, &mut ev, 50, true, &mut rng).unwrap();
        rs += (space.canonicalize(&trace.best) == best) as u32;
    }
    check(
        mct >= 14 && rs <= 5,
        format!("global best found: MCT {mct}/20, random search {rs}/20"),
    )
}

/// One-sided sign test: `P(X >= wins)` for `X ~ Bin(trials, 1/2)`.
fn sign_test(wins: u32, trials: u32) -> f64 {
    let mut choose = 1.0f64;
    let mut tail = 0.0;
    for i in 0..=trials {
        if i > 0 {
            choose = choose * (trials - i + 1) as f64 / i as f64;
        }
        if i >= wins {
            tail += choose;
        }
    }
    tail / 2f64.powi(trials as i32)
}

fn percentile_rank_vs_evolution() -> Outcome {
    let (mut wins, mut losses) = (0u32, 0u32);
    let (mut sum_m, mut sum_e) = (0.0, 0.0);
    for s in 0..20u64 {
        let (space, table, tab) = tabular(s);
        let mut tree = train(&space, tab.clone(), s, 20_000);
        let mut ev = tab.clone();
        let cfg = SearchConfig {
            k: 20,
            seed: s,
            ..Default::default()
        };
        let report = hierarchical_search(&mut tree, &mut ev, &cfg).unwrap();
        let m: Vec<Architecture> = report.candidates.iter().map(|c| c.arch.clone()).collect();
        let evo_cfg = EvoConfig {
            population: 10,
            generations: 2,
            seed: s,
            ..Default::default()
        };
        let evo = evolutionary_search(&space, &mut ev, &evo_cfg).unwrap();
        let e: Vec<Architecture> = evo.rows.iter().map(|r| r.arch.clone()).collect();
        let (am, ae) = (
            avg_percentile_rank(&m, &table).unwrap(),
            avg_percentile_rank(&e, &table).unwrap(),
        );
        sum_m += am;
        sum_e += ae;
        wins += (am < ae) as u32;
        losses += (am > ae) as u32;
    }
    let p = sign_test(wins, wins + losses);
    check(
        p < 0.05,
        format!(
            "mean APR MCT {:.4} vs evolution {:.4}, MCT better in {wins}/{}, sign test p = {p:.2e}",
            sum_m / 20.0,
            sum_e / 20.0,
            wins + losses
        ),
    )
}

fn dependency_space() -> Arc<SearchSpace> {
    let ops = ["MB3_K3", "MB6_K5", "MB3_K5"];
    Arc::new(
        SpaceConfig {
            name: "dependency".into(),
            resolution: 8,
            in_channels: 4,
            strided_identity: StridedIdentity::Forbid,
            fixed_cost: Cost::default(),
            stages: vec![StageConfig {
                layers: 4,
                out_channels: 4,
                stride: 1,
                ops: ops.iter().map(|s| s.to_string()).collect(),
            }],
        }
        .build()
        .unwrap(),
    )
}

fn dependency_capture() -> Outcome {
    let space = dependency_space();
    let mut oracle_seed = 0u64;
    let (mut mct, mut marginal) = (0u32, 0u32);
    for s in 0..20u64 {
        // Draw oracles until the per-layer marginal argmax misses the optimum.
        let (oracle, best): (SyntheticOracle, Architecture) = loop {
            let o = generate_synthetic(space.clone(), 1.0, 0.0, oracle_seed).unwrap();
            oracle_seed += 1;
            let all: Vec<Architecture> = space.enumerate().unwrap().collect();
            if all.len() != 81 {
                return Err(format!("{} architectures, expected 81", all.len()));
            }
            let best = all
                .into_iter()
                .max_by(|a, b| o.eval_acc(a).total_cmp(&o.eval_acc(b)))
                .unwrap();
            if marginal_greedy(&space, &o).unwrap() != best {
                break (o, best);
            }
        };
        let mut tree = train(&space, &oracle, s, 20_000);
        let mut ev = oracle.clone().with_noise(NoiseModel::noiseless());
        let cfg = SearchConfig {
            k: 20,
            seed: s,
            ..Default::default()
        };
        let report = hierarchical_search(&mut tree, &mut ev, &cfg).unwrap();
        mct += (report.best == best) as u32;
        marginal += (marginal_greedy(&space, &oracle).unwrap() == best) as u32;
    }
    check(
        mct >= 16 && marginal == 0,
        format!("optimum found: MCT {mct}/20, marginal greedy {marginal}/20 ({oracle_seed} oracles drawn)"),
    )
}

fn n_thrd_trend() -> Outcome {
    let mut means = Vec::new();
    for n_thrd in 1..=6u64 {
        let mut total = 0.0;
        for s in 0..20u64 {
            let (space, table, tab) = tabular(s);
            let mut tree = train(&space, tab, s, 1000);
            let mut ev = TabularOracle::new(table, NoiseModel::noiseless());
            let cfg = SearchConfig {
                k: 20,
                n_thrd,
                seed: s,
                ..Default::default()
            };
            total += hierarchical_search(&mut tree, &mut ev, &cfg).unwrap().best_acc;
        }
        means.push(total / 20.0);
    }
    let by_mean = Ranking::from_scores(means.iter().enumerate().map(|(i, &m)| (i.to_string(), m))).unwrap();
    let by_n = Ranking::from_scores((0..6).map(|i| (i.to_string(), i as f64))).unwrap();
    let rho = spearman_rho(&by_mean, &by_n).unwrap();
    let shown: Vec<String> = means.iter().map(|m| format!("{m:.5}")).collect();
    check(rho > 0.0, format!("mean best score for n_thrd 1..6 [{}], rho {rho:.3}", shown.join(", ")))
}

fn common(config: &Path, out: &Path) -> CommonArgs {
    CommonArgs {
        config: Some(config.to_path_buf()),
        seed: None,
        out: Some(out.to_path_buf()),
        space: None,
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = |name: &str| dir.path().join(name);
    let cfg = d("exp.toml");
    fs::write(&cfg, "seed = 21\n[train]\ntotal_iters = 3000\n[search]\nk = 20\n").map_err(|e| e.to_string())?;
    let err = |e: mctnas::Error| e.to_string();

    cmd_train(&common(&cfg, &d("t1")), None).map_err(err)?;
    cmd_search(&common(&cfg, &d("s1")), Some(&d("t1").join("tree.json")), None).map_err(err)?;
    cmd_train(&common(&d("t1").join("manifest.json"), &d("t2")), None).map_err(err)?;
    cmd_search(
        &common(&d("s1").join("manifest.json"), &d("s2")),
        Some(&d("t2").join("tree.json")),
        None,
    )
    .map_err(err)?;
    let read = |p: std::path::PathBuf| fs::read(p).unwrap();
    let report_same = read(d("s1").join("search_report.json")) == read(d("s2").join("search_report.json"));
    let tree_same = read(d("t1").join("tree.json")) == read(d("t2").join("tree.json"));

    let bytes = read(d("t1").join("tree.json"));
    let tree = MctTree::restore(&bytes, bench_space()).map_err(err)?;
    let again = MctTree::restore(&tree.snapshot(), bench_space()).map_err(err)?;
    let snapshot_exact = again == tree && again.snapshot() == bytes && tree.root().visits > 0;
    check(
        report_same && tree_same && snapshot_exact,
        format!("report identical {report_same}, tree identical {tree_same}, snapshot exact {snapshot_exact}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 10] = [
        ("exact recurrences", exact_recurrences, Duration::from_secs(10)),
        ("UCT and softmax formulas", uct_formulas, Duration::from_secs(5)),
        ("search cost accounting", search_cost_accounting, Duration::from_secs(1)),
        ("correlation oracles", correlation_oracles, Duration::from_secs(10)),
        ("gate invariant", gate_invariant, Duration::from_secs(120)),
        ("global best at search number 50", finds_global_best, Duration::from_secs(600)),
        ("percentile rank vs evolution", percentile_rank_vs_evolution, Duration::from_secs(600)),
        ("dependency capture", dependency_capture, Duration::from_secs(120)),
        ("n_thrd trend", n_thrd_trend, Duration::from_secs(600)),
        ("determinism and persistence", determinism, Duration::from_secs(120)),
    ];
    let mut failed = 0;
    for (i, (name, f, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) => (elapsed <= *limit, d),
            Err(d) => (false, d),
        };
        failed += !ok as u32;
        println!(
            "criterion {:>2} {} {name}: {detail} [{:.2}s, limit {}s]",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}
