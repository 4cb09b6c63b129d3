// Random and evolutionary search on a synthetic benchmark.

use std::sync::Arc;

use mctnas::baselines::{evolutionary_search, random_search, Crossover, EvoConfig};
use mctnas::eval::{generate_synthetic, BenchmarkTable, TabularOracle};
use mctnas::seed;
use mctnas::space::resolve_space;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let space = Arc::new(resolve_space("bench-macro")?);
    let oracle = generate_synthetic(space.clone(), 0.5, 0.005, 5)?;
    let table = Arc::new(BenchmarkTable::from_synthetic(&oracle, 3)?);
    let mut bench = TabularOracle::new(table.clone(), oracle.noise);

    let mut rng = seed::stream(5, "random-example");
    let rs = random_search(&space, &mut bench, 100, true, &mut rng)?;
    println!("random: best {} {:.4}", rs.best, rs.best_score);

    let cfg = EvoConfig {
        population: 20,
        generations: 5,
        crossover: Crossover::Uniform,
        seed: 5,
        ..Default::default()
    };
    let evo = evolutionary_search(&space, &mut bench, &cfg)?;
    println!("evolution: best {} {:.4}", evo.best, evo.best_score);
    for row in evo.rows.iter().step_by(20) {
        println!("  after {:3} evals: {:.4}", row.step + 1, row.incumbent_score);
    }
    println!("global best {:.4}", table.best().1.mean_acc);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
