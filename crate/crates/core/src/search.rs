//! Search stage: hierarchical node selection over a trained tree.
//!
//! Each of the `k` rounds walks from the root. At every depth the walk first
//! checks the mean visit count of the current node's children; while it is
//! below `n_thrd`, a uniform completion through those children is evaluated on
//! one validation batch and its accuracy is backpropagated. Once the gate
//! holds, a child is drawn from the softmax over search-mode UCT scores. The
//! finished architecture gets one full validation pass.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::baselines::{write_trace_csv, TraceRow};
use crate::error::{Error, Result};
use crate::eval::ValidationEvaluator;
use crate::seed::{self, streams};
use crate::space::{Architecture, SearchSpace};
use crate::train::{sample_with_flops_budget, FlopsWindow, DEFAULT_MAX_TRIES};
use crate::tree::{sample_child, MctTree, SampleMode, UctParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Number of fully evaluated candidates.
    pub k: usize,
    /// Mean child visit count required before committing at a depth.
    pub n_thrd: u64,
    pub batch_size: u32,
    /// Images in the full validation set.
    pub full_set_size: u64,
    pub uct: UctParams,
    pub flops: Option<FlopsWindow>,
    pub max_tries: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            k: 20,
            n_thrd: 6,
            batch_size: 128,
            full_set_size: 50_000,
            uct: UctParams::default(),
            flops: None,
            max_tries: DEFAULT_MAX_TRIES,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.batch_size == 0 || self.full_set_size == 0 {
            return Err(Error::Config(
                "k, batch_size and full_set_size must be positive".into(),
            ));
        }
        if let Some(w) = &self.flops {
            w.validate()?;
        }
        self.uct.validate()
    }

    fn num_batches(&self) -> u64 {
        (self.full_set_size / self.batch_size as u64).max(1)
    }
}

/// Worst-case validation images needed to select one path:
/// `batch_size * n_thrd * sum_l |ops_l|`.
pub fn search_cost(space: &SearchSpace, cfg: &SearchConfig) -> u64 {
    let ops: u64 = (0..space.num_layers()).map(|l| space.arity(l) as u64).sum();
    cfg.batch_size as u64 * cfg.n_thrd * ops
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub arch: Architecture,
    pub full_eval_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub candidates: Vec<Candidate>,
    pub best: Architecture,
    pub best_acc: f64,
    pub images_consumed: u64,
    pub batch_evals: u64,
    /// Distinct architectures given a full validation pass.
    pub full_evals: u64,
    /// Per-path worst case from [`search_cost`].
    pub worst_case_images_per_path: u64,
}

impl SearchReport {
    /// Candidates as a trace: one row per round with the running best.
    pub fn trace(&self) -> Vec<TraceRow> {
        let mut incumbent = f64::NEG_INFINITY;
        self.candidates
            .iter()
            .enumerate()
            .map(|(step, c)| {
                incumbent = incumbent.max(c.full_eval_acc);
                TraceRow {
                    step: step as u64,
                    arch: c.arch.clone(),
                    score: c.full_eval_acc,
                    incumbent_score: incumbent,
                }
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_trace_csv(out, &self.trace())
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serializes");
        out.push(b'\n');
        out
    }
}

/// Instrumentation of one search run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SearchEvent {
    /// A batch evaluation of a random completion below the current prefix.
    Explore {
        round: usize,
        depth: usize,
        mean_visits: f64,
        arch: Architecture,
        reward: f64,
    },
    /// A child picked by the search-mode softmax.
    Select {
        round: usize,
        depth: usize,
        mean_visits: f64,
        op: u8,
    },
    FullEval {
        round: usize,
        arch: Architecture,
        acc: f64,
        cached: bool,
    },
}

pub fn hierarchical_search<E: ValidationEvaluator + ?Sized>(
    tree: &mut MctTree,
    eval: &mut E,
    cfg: &SearchConfig,
) -> Result<SearchReport> {
    run(tree, eval, cfg, None)
}

/// [`hierarchical_search`] that also records every gate decision.
pub fn hierarchical_search_traced<E: ValidationEvaluator + ?Sized>(
    tree: &mut MctTree,
    eval: &mut E,
    cfg: &SearchConfig,
) -> Result<(SearchReport, Vec<SearchEvent>)> {
    let mut events = Vec::new();
    let report = run(tree, eval, cfg, Some(&mut events))?;
    Ok((report, events))
}

fn run<E: ValidationEvaluator + ?Sized>(
    tree: &mut MctTree,
    eval: &mut E,
    cfg: &SearchConfig,
    mut events: Option<&mut Vec<SearchEvent>>,
) -> Result<SearchReport> {
    cfg.validate()?;
    let space = tree.space().clone();
    let num_layers = space.num_layers();
    let mut rng = seed::stream(cfg.seed, streams::SEARCH);
    let mut cache: HashMap<Architecture, f64> = HashMap::new();
    let mut candidates = Vec::with_capacity(cfg.k);
    let mut batch_evals = 0u64;

    for round in 0..cfg.k {
        let mut prefix: Vec<u8> = Vec::with_capacity(num_layers);
        for depth in 0..num_layers {
            let arity = space.arity(depth);
            loop {
                let node = tree.find(&prefix);
                let total: u64 = node.map_or(0, |id| tree.child_visits(id).iter().sum());
                let mean_visits = total as f64 / arity as f64;
                if mean_visits >= cfg.n_thrd as f64 {
                    let scores = match node {
                        Some(id) => tree.child_scores(id, SampleMode::Search, &cfg.uct),
                        None => vec![0.0; arity],
                    };
                    let op = sample_child(&scores, cfg.uct.tau, &mut rng) as u8;
                    if let Some(ev) = events.as_deref_mut() {
                        ev.push(SearchEvent::Select {
                            round,
                            depth,
                            mean_visits,
                            op,
                        });
                    }
                    prefix.push(op);
                    break;
                }

                let arch = match &cfg.flops {
                    Some(w) => sample_with_flops_budget(
                        &space,
                        |r| space.random_completion(&prefix, r),
                        w,
                        &mut rng,
                        cfg.max_tries,
                    )?,
                    None => space.random_completion(&prefix, &mut rng),
                };
                let batch_id = batch_evals % cfg.num_batches();
                let reward = eval
                    .batch_accuracy(&arch, batch_id, cfg.batch_size)
                    .map_err(|e| {
                        Error::evaluator(
                            format!("search round {round}, depth {depth}, batch eval of {arch}"),
                            e.to_string(),
                        )
                    })?;
                batch_evals += 1;
                tree.backpropagate(&arch, reward)?;
                if let Some(ev) = events.as_deref_mut() {
                    ev.push(SearchEvent::Explore {
                        round,
                        depth,
                        mean_visits,
                        arch,
                        reward,
                    });
                }
            }
        }

        let arch = Architecture::new(prefix);
        let (acc, cached) = match cache.get(&arch) {
            Some(&acc) => (acc, true),
            None => {
                let acc = eval.full_accuracy(&arch).map_err(|e| {
                    Error::evaluator(
                        format!("search round {round}, full eval of {arch}"),
                        e.to_string(),
                    )
                })?;
                cache.insert(arch.clone(), acc);
                (acc, false)
            }
        };
        if let Some(ev) = events.as_deref_mut() {
            ev.push(SearchEvent::FullEval {
                round,
                arch: arch.clone(),
                acc,
                cached,
            });
        }
        candidates.push(Candidate {
            arch,
            full_eval_acc: acc,
        });
    }

    let best = candidates
        .iter()
        .fold(None::<&Candidate>, |best, c| match best {
            Some(b) if b.full_eval_acc >= c.full_eval_acc => Some(b),
            _ => Some(c),
        })
        .expect("k >= 1");
    let full_evals = cache.len() as u64;
    Ok(SearchReport {
        best: best.arch.clone(),
        best_acc: best.full_eval_acc,
        images_consumed: batch_evals * cfg.batch_size as u64 + full_evals * cfg.full_set_size,
        batch_evals,
        full_evals,
        worst_case_images_per_path: search_cost(&space, cfg),
        candidates,
    })
}
