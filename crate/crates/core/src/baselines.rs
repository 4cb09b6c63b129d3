//! Random and evolutionary search baselines.
//!
//! Both emit the same trace rows as the search stage (step, arch, score,
//! incumbent) so runs can be compared side by side.

use std::collections::HashSet;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Oracle, ValidationEvaluator};
use crate::seed::{self, streams};
use crate::space::{Architecture, SearchSpace};
use crate::train::{sample_with_flops_budget, FlopsWindow, DEFAULT_MAX_TRIES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub arch: Architecture,
    pub score: f64,
    pub incumbent_score: f64,
}

pub fn write_trace_csv<W: Write>(out: W, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Outcome of a baseline search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub best: Architecture,
    pub best_score: f64,
    pub rows: Vec<TraceRow>,
}

#[derive(Default)]
struct TraceBuilder {
    rows: Vec<TraceRow>,
    best: Option<(Architecture, f64)>,
}

impl TraceBuilder {
    fn push(&mut self, arch: Architecture, score: f64) {
        if self.best.as_ref().is_none_or(|(_, b)| score > *b) {
            self.best = Some((arch.clone(), score));
        }
        let incumbent_score = self.best.as_ref().map_or(score, |(_, b)| *b);
        self.rows.push(TraceRow {
            step: self.rows.len() as u64,
            arch,
            score,
            incumbent_score,
        });
    }

    fn finish(self) -> SearchTrace {
        let (best, best_score) = self.best.expect("at least one evaluation");
        SearchTrace {
            best,
            best_score,
            rows: self.rows,
        }
    }
}

fn full_eval<E: ValidationEvaluator + ?Sized>(
    eval: &mut E,
    arch: &Architecture,
    step: usize,
) -> Result<f64> {
    eval.full_accuracy(arch)
        .map_err(|e| Error::evaluator(format!("baseline step {step}, arch {arch}"), e.to_string()))
}

/// `budget` uniform draws, each fully evaluated. With `dedup`, already seen
/// architectures are redrawn and the run stops early once the space is exhausted.
pub fn random_search<E, R>(
    space: &SearchSpace,
    eval: &mut E,
    budget: usize,
    dedup: bool,
    rng: &mut R,
) -> Result<SearchTrace>
where
    E: ValidationEvaluator + ?Sized,
    R: Rng + ?Sized,
{
    if budget == 0 {
        return Err(Error::Config("random search budget must be at least 1".into()));
    }
    let size = space.size();
    let mut seen: HashSet<Architecture> = HashSet::new();
    let mut trace = TraceBuilder::default();
    for step in 0..budget {
        let arch = if dedup {
            if seen.len() as u128 >= size {
                break;
            }
            loop {
                let a = space.random_arch(rng);
                if seen.insert(a.clone()) {
                    break a;
                }
            }
        } else {
            space.random_arch(rng)
        };
        let score = full_eval(eval, &arch, step)?;
        trace.push(arch, score);
    }
    Ok(trace.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Crossover {
    SinglePoint,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvoConfig {
    pub population: usize,
    pub generations: usize,
    /// Top fraction of each generation kept as parents.
    pub parent_fraction: f64,
    /// Per-layer probability of redrawing an op.
    pub mutation_prob: f64,
    pub crossover: Crossover,
    pub flops: Option<FlopsWindow>,
    pub max_tries: usize,
    pub seed: u64,
}

impl Default for EvoConfig {
    fn default() -> Self {
        EvoConfig {
            population: 20,
            generations: 5,
            parent_fraction: 0.5,
            mutation_prob: 0.1,
            crossover: Crossover::SinglePoint,
            flops: None,
            max_tries: DEFAULT_MAX_TRIES,
            seed: 0,
        }
    }
}

impl EvoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 || self.generations == 0 {
            return Err(Error::Config(
                "evolution needs population >= 2 and at least one generation".into(),
            ));
        }
        if !(self.parent_fraction > 0.0 && self.parent_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "parent_fraction must lie in (0, 1], got {}",
                self.parent_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(Error::Config(format!(
                "mutation_prob must lie in [0, 1], got {}",
                self.mutation_prob
            )));
        }
        if let Some(w) = &self.flops {
            w.validate()?;
        }
        Ok(())
    }
}

fn crossover<R: Rng + ?Sized>(kind: Crossover, a: &[u8], b: &[u8], rng: &mut R) -> Vec<u8> {
    match kind {
        Crossover::SinglePoint if a.len() > 1 => {
            let cut = rng.random_range(1..a.len());
            a[..cut].iter().chain(&b[cut..]).copied().collect()
        }
        Crossover::SinglePoint => a.to_vec(),
        Crossover::Uniform => a
            .iter()
            .zip(b)
            .map(|(&x, &y)| if rng.random_bool(0.5) { x } else { y })
            .collect(),
    }
}

/// Generational evolution with elitism of one. Every individual of every
/// generation is fully evaluated, so the trace has `population * generations` rows.
pub fn evolutionary_search<E: ValidationEvaluator + ?Sized>(
    space: &SearchSpace,
    eval: &mut E,
    cfg: &EvoConfig,
) -> Result<SearchTrace> {
    cfg.validate()?;
    let mut rng = seed::stream(cfg.seed, streams::BASELINE);
    let admit = |rng: &mut rand_chacha::ChaCha8Rng,
                 mut make: Box<dyn FnMut(&mut rand_chacha::ChaCha8Rng) -> Architecture + '_>|
     -> Result<Architecture> {
        match &cfg.flops {
            Some(w) => sample_with_flops_budget(space, &mut make, w, rng, cfg.max_tries),
            None => Ok(make(rng)),
        }
    };

    let mut population = (0..cfg.population)
        .map(|_| admit(&mut rng, Box::new(|r| space.random_arch(r))))
        .collect::<Result<Vec<_>>>()?;
    let num_parents = ((cfg.parent_fraction * cfg.population as f64).ceil() as usize)
        .clamp(1, cfg.population);
    let mut trace = TraceBuilder::default();

    for generation in 0..cfg.generations {
        let mut scored = Vec::with_capacity(population.len());
        for arch in population {
            let score = full_eval(eval, &arch, trace.rows.len())?;
            trace.push(arch.clone(), score);
            scored.push((arch, score));
        }
        if generation + 1 == cfg.generations {
            break;
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let parents: Vec<Architecture> =
            scored.into_iter().take(num_parents).map(|(a, _)| a).collect();
        let elite = trace.best.as_ref().expect("evaluated").0.clone();

        population = Vec::with_capacity(cfg.population);
        population.push(elite);
        while population.len() < cfg.population {
            let child = admit(
                &mut rng,
                Box::new(|r| {
                    let p1 = &parents[r.random_range(0..parents.len())];
                    let p2 = &parents[r.random_range(0..parents.len())];
                    let mut genes = crossover(cfg.crossover, p1.choices(), p2.choices(), r);
                    for (l, g) in genes.iter_mut().enumerate() {
                        if cfg.mutation_prob > 0.0 && r.random_bool(cfg.mutation_prob) {
                            *g = r.random_range(0..space.arity(l)) as u8;
                        }
                    }
                    Architecture::new(genes)
                }),
            )?;
            population.push(child);
        }
    }
    Ok(trace.finish())
}

/// Picks, layer by layer, the op with the highest mean accuracy over every
/// architecture using it. Blind to interactions between layers.
pub fn marginal_greedy<O: Oracle + ?Sized>(space: &SearchSpace, oracle: &O) -> Result<Architecture> {
    let mut sums: Vec<Vec<(f64, u64)>> =
        (0..space.num_layers()).map(|l| vec![(0.0, 0); space.arity(l)]).collect();
    for arch in space.enumerate()? {
        let acc = oracle.eval_acc(&arch);
        for (l, &op) in arch.choices().iter().enumerate() {
            let cell = &mut sums[l][op as usize];
            cell.0 += acc;
            cell.1 += 1;
        }
    }
    let choices = sums
        .iter()
        .map(|ops| {
            let means = ops.iter().map(|&(s, n)| s / n as f64);
            means
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, m)| if m > best.1 { (i, m) } else { best })
                .0 as u8
        })
        .collect();
    Ok(Architecture::new(choices))
}
