//! Three-phase supernet training simulation.
//!
//! 1. Supernet warm-up: uniform paths; only the loss baseline is updated.
//! 2. Tree warm-up: uniform paths inside the FLOPs window; rewards are
//!    backpropagated into the tree.
//! 3. Prioritized sampling: paths drawn from the tree (train-mode UCT softmax),
//!    restricted to the FLOPs window, trained and backpropagated.
//!
//! One iteration trains one path.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::TrainingEvaluator;
use crate::seed::{self, streams};
use crate::space::{Architecture, SearchSpace};
use crate::tree::{MctTree, SampleMode, UctParams, DEFAULT_BETA, DEFAULT_GAMMA};

pub const DEFAULT_MAX_TRIES: usize = 10_000;

/// Accepts architectures with `lo * budget <= flops <= hi * budget`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopsWindow {
    pub budget: u64,
    #[serde(default = "default_lo")]
    pub lo: f64,
    #[serde(default = "default_hi")]
    pub hi: f64,
}

fn default_lo() -> f64 {
    0.9
}

fn default_hi() -> f64 {
    1.0
}

impl FlopsWindow {
    pub fn new(budget: u64) -> Self {
        FlopsWindow {
            budget,
            lo: default_lo(),
            hi: default_hi(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Config("FLOPs budget must be positive".into()));
        }
        if !(self.lo > 0.0 && self.lo <= self.hi && self.hi.is_finite()) {
            return Err(Error::Config(format!(
                "FLOPs range must satisfy 0 < lo <= hi, got ({}, {})",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn contains(&self, flops: u64) -> bool {
        let f = flops as f64;
        let b = self.budget as f64;
        f >= self.lo * b && f <= self.hi * b
    }

    /// Integral FLOPs bounds of the window.
    pub fn bounds(&self) -> (u64, u64) {
        let b = self.budget as f64;
        ((self.lo * b).ceil() as u64, (self.hi * b).floor() as u64)
    }
}

/// Draws from `sampler` until an architecture lands in `window`.
pub fn sample_with_flops_budget<R, F>(
    space: &SearchSpace,
    mut sampler: F,
    window: &FlopsWindow,
    rng: &mut R,
    max_tries: usize,
) -> Result<Architecture>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> Architecture,
{
    for _ in 0..max_tries.max(1) {
        let arch = sampler(rng);
        if window.contains(space.flops(&arch)) {
            return Ok(arch);
        }
    }
    let (lo, hi) = window.bounds();
    Err(Error::BudgetStall {
        lo,
        hi,
        tries: max_tries.max(1),
    })
}

fn sample_in_window<R, F>(
    space: &SearchSpace,
    window: Option<&FlopsWindow>,
    mut sampler: F,
    rng: &mut R,
    max_tries: usize,
) -> Result<Architecture>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> Architecture,
{
    match window {
        Some(w) => sample_with_flops_budget(space, sampler, w, rng, max_tries),
        None => Ok(sampler(rng)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_iters: u64,
    /// Fraction of iterations spent on supernet warm-up.
    pub ws: f64,
    /// Fraction of iterations spent on tree warm-up.
    pub wm: f64,
    /// No window means every architecture is admissible.
    pub flops: Option<FlopsWindow>,
    pub uct: UctParams,
    pub beta: f64,
    pub gamma: f64,
    pub max_tries: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_iters: 20_000,
            ws: 0.5,
            wm: 0.2,
            flops: None,
            uct: UctParams::default(),
            beta: DEFAULT_BETA,
            gamma: DEFAULT_GAMMA,
            max_tries: DEFAULT_MAX_TRIES,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_iters == 0 {
            return Err(Error::Config("total_iters must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ws)
            || !(0.0..=1.0).contains(&self.wm)
            || self.ws + self.wm > 1.0 + 1e-12
        {
            return Err(Error::Config(format!(
                "warm-up ratios must satisfy ws, wm >= 0 and ws + wm <= 1, got ({}, {})",
                self.ws, self.wm
            )));
        }
        if let Some(w) = &self.flops {
            w.validate()?;
        }
        self.uct.validate()
    }

    /// First iteration of the tree warm-up and of prioritized sampling.
    pub fn phase_bounds(&self) -> (u64, u64) {
        let n = self.total_iters as f64;
        let ws_end = ((self.ws * n).round() as u64).min(self.total_iters);
        let wm_end = (((self.ws + self.wm) * n).round() as u64).clamp(ws_end, self.total_iters);
        (ws_end, wm_end)
    }

    pub fn phase_of(&self, iter: u64) -> Phase {
        let (ws_end, wm_end) = self.phase_bounds();
        if iter < ws_end {
            Phase::Warmup
        } else if iter < wm_end {
            Phase::MctWarmup
        } else {
            Phase::Mcts
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    MctWarmup,
    Mcts,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Warmup => "warmup",
            Phase::MctWarmup => "mct_warmup",
            Phase::Mcts => "mcts",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iter: u64,
    pub phase: Phase,
    pub arch: Architecture,
    pub loss: f64,
    /// Baseline over loss, computed in every phase but only backpropagated
    /// from the tree warm-up on.
    pub reward: f64,
    /// Baseline after folding in this iteration's loss.
    pub baseline: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "phase", "arch", "loss", "reward", "baseline"])?;
        for r in &self.records {
            w.write_record([
                r.iter.to_string(),
                r.phase.to_string(),
                r.arch.to_string(),
                r.loss.to_string(),
                r.reward.to_string(),
                r.baseline.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("train log serializes")
    }
}

/// Runs the three training phases and returns the populated tree and the log.
pub fn run_training<E: TrainingEvaluator + ?Sized>(
    space: Arc<SearchSpace>,
    eval: &mut E,
    cfg: &TrainConfig,
) -> Result<(MctTree, TrainLog)> {
    cfg.validate()?;
    let mut tree = MctTree::new(space.clone(), cfg.beta, cfg.gamma)?;
    let mut rng = seed::stream(cfg.seed, streams::TRAINING);
    let mut log = TrainLog {
        records: Vec::with_capacity(cfg.total_iters as usize),
    };
    let window = cfg.flops.as_ref();

    for iter in 0..cfg.total_iters {
        let phase = cfg.phase_of(iter);
        let arch = match phase {
            Phase::Warmup => space.random_arch(&mut rng),
            Phase::MctWarmup => {
                sample_in_window(&space, window, |r| space.random_arch(r), &mut rng, cfg.max_tries)?
            }
            Phase::Mcts => sample_in_window(
                &space,
                window,
                |r| tree.sample_path(SampleMode::Train, &cfg.uct, r),
                &mut rng,
                cfg.max_tries,
            )?,
        };
        let context = || format!("iteration {iter} ({phase}), arch {arch}");
        let loss = eval
            .train_loss(&arch, iter)
            .map_err(|e| Error::evaluator(context(), e.to_string()))?;
        if !(loss > 0.0 && loss.is_finite()) {
            return Err(Error::evaluator(context(), format!("non-positive loss {loss}")));
        }
        let baseline = tree.baseline_mut().update(loss)?;
        let reward = tree.baseline().reward(loss)?;
        if phase != Phase::Warmup {
            tree.backpropagate(&arch, reward)?;
        }
        log.records.push(TrainRecord {
            iter,
            phase,
            arch,
            loss,
            reward,
            baseline,
        });
    }
    Ok((tree, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{generate_synthetic, SurrogateParams, SurrogateTrainer};
    use crate::space::SpaceConfig;
    use crate::tree::BaselineState;

    fn bench() -> Arc<SearchSpace> {
        Arc::new(SpaceConfig::preset("bench-macro").unwrap().build().unwrap())
    }

    fn trainer(space: &Arc<SearchSpace>) -> SurrogateTrainer<crate::eval::SyntheticOracle> {
        let oracle = generate_synthetic(space.clone(), 0.5, 0.0, 1).unwrap();
        SurrogateTrainer::new(oracle, SurrogateParams::default(), 2).unwrap()
    }

    #[test]
    fn phase_boundaries() {
        let cfg = TrainConfig {
            total_iters: 100,
            ws: 0.5,
            wm: 0.2,
            ..Default::default()
        };
        assert_eq!(cfg.phase_bounds(), (50, 70));
        assert_eq!(cfg.phase_of(49), Phase::Warmup);
        assert_eq!(cfg.phase_of(50), Phase::MctWarmup);
        assert_eq!(cfg.phase_of(69), Phase::MctWarmup);
        assert_eq!(cfg.phase_of(70), Phase::Mcts);
    }

    #[test]
    fn full_warmup_leaves_tree_empty() {
        let space = bench();
        let cfg = TrainConfig {
            total_iters: 40,
            ws: 1.0,
            wm: 0.0,
            ..Default::default()
        };
        let (tree, log) = run_training(space.clone(), &mut trainer(&space), &cfg).unwrap();
        assert_eq!(tree.root().visits, 0);
        assert_eq!(tree.nodes().len(), 1);
        assert_eq!(log.records.len(), 40);
        assert!(log.records.iter().all(|r| r.phase == Phase::Warmup));
    }

    #[test]
    fn window_is_respected_and_log_is_consistent() {
        let space = bench();
        let mut flops: Vec<u64> = space.enumerate().unwrap().map(|a| space.flops(&a)).collect();
        flops.sort_unstable();
        let window = FlopsWindow::new(flops[flops.len() / 2]);
        let cfg = TrainConfig {
            total_iters: 300,
            flops: Some(window),
            uct: UctParams {
                tau: 0.05,
                ..Default::default()
            },
            seed: 5,
            ..Default::default()
        };
        let (tree, log) = run_training(space.clone(), &mut trainer(&space), &cfg).unwrap();
        let mut last = Phase::Warmup;
        let mut replay = BaselineState::new(cfg.beta).unwrap();
        for (i, r) in log.records.iter().enumerate() {
            assert_eq!(r.iter, i as u64);
            assert!(r.phase >= last);
            last = r.phase;
            if r.phase != Phase::Warmup {
                assert!(window.contains(space.flops(&r.arch)), "{}", r.arch);
            }
            replay.update(r.loss).unwrap();
            assert_eq!(replay.value, r.baseline);
        }
        assert_eq!(tree.root().visits, 150);
    }

    #[test]
    fn stall_reports_window() {
        let space = bench();
        let window = FlopsWindow {
            budget: 1,
            lo: 0.9,
            hi: 1.0,
        };
        let mut rng = seed::stream(0, "t");
        let err = sample_with_flops_budget(&space, |r| space.random_arch(r), &window, &mut rng, 50)
            .unwrap_err();
        assert!(matches!(err, Error::BudgetStall { tries: 50, .. }));
    }

    #[test]
    fn wide_window_returns_first_draw() {
        let space = bench();
        let window = FlopsWindow {
            budget: u64::MAX / 4,
            lo: 1e-12,
            hi: 1.0,
        };
        let mut a = seed::stream(1, "t");
        let mut b = seed::stream(1, "t");
        let got = sample_with_flops_budget(&space, |r| space.random_arch(r), &window, &mut a, 10).unwrap();
        assert_eq!(got, space.random_arch(&mut b));
    }

    #[test]
    fn evaluator_errors_carry_context() {
        let space = bench();
        let cfg = TrainConfig {
            total_iters: 10,
            ..Default::default()
        };
        let mut failing = |_: &Architecture, t: u64| -> Result<f64> {
            if t == 3 {
                Err(Error::Config("boom".into()))
            } else {
                Ok(1.0)
            }
        };
        let err = run_training(space.clone(), &mut failing, &cfg).unwrap_err();
        assert!(err.to_string().contains("iteration 3"), "{err}");
        let mut negative = |_: &Architecture, _: u64| -> Result<f64> { Ok(-1.0) };
        assert!(matches!(
            run_training(space, &mut negative, &cfg),
            Err(Error::Evaluator { .. })
        ));
    }

    #[test]
    fn rejects_bad_ratios() {
        let cfg = TrainConfig {
            ws: 0.7,
            wm: 0.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
