// Train a tree, then pick candidates with threshold-gated node selection.

use std::sync::Arc;

use mctnas::eval::{generate_synthetic, BenchmarkTable, SurrogateParams, SurrogateTrainer, TabularOracle};
use mctnas::metrics::avg_percentile_rank;
use mctnas::search::{hierarchical_search_traced, SearchConfig, SearchEvent};
use mctnas::space::resolve_space;
use mctnas::train::{run_training, TrainConfig};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let space = Arc::new(resolve_space("bench-macro")?);
    let oracle = generate_synthetic(space.clone(), 0.5, 0.005, 11)?;
    let table = Arc::new(BenchmarkTable::from_synthetic(&oracle, 3)?);
    let mut bench = TabularOracle::new(table.clone(), oracle.noise);

    let mut trainer = SurrogateTrainer::new(bench.clone(), SurrogateParams::default(), 11)?;
    let train = TrainConfig {
        total_iters: 1000,
        seed: 11,
        ..Default::default()
    };
    let (mut tree, _) = run_training(space.clone(), &mut trainer, &train)?;

    let cfg = SearchConfig {
        seed: 11,
        ..Default::default()
    };
    let (report, events) = hierarchical_search_traced(&mut tree, &mut bench, &cfg)?;
    let explored = events
        .iter()
        .filter(|e| matches!(e, SearchEvent::Explore { .. }))
        .count();
    println!("best {} acc {:.4}; global best {}", report.best, report.best_acc, table.best().0);
    println!(
        "{} batch evals ({} explorations), {} full evals, {} images",
        report.batch_evals, explored, report.full_evals, report.images_consumed
    );
    let archs: Vec<_> = report.candidates.iter().map(|c| c.arch.clone()).collect();
    println!("average percentile rank {:.4}", avg_percentile_rank(&archs, &table)?);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
