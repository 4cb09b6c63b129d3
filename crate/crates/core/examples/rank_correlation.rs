// Kendall tau and Spearman rho between replica rankings of a benchmark.

use std::sync::Arc;

use mctnas::eval::{generate_synthetic, BenchmarkTable};
use mctnas::metrics::{kendall_tau, spearman_rho, Ranking};
use mctnas::space::resolve_space;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let space = Arc::new(resolve_space("bench-macro")?);
    let oracle = generate_synthetic(space, 0.5, 0.01, 2)?;
    let table = BenchmarkTable::from_synthetic(&oracle, 2)?;

    let replica = |i: usize| {
        Ranking::from_scores(table.entries().map(|(a, r)| (a.to_string(), r.accs[i])))
    };
    let (a, b) = (replica(0)?, replica(1)?);
    println!(
        "two benchmark seeds over {} archs: tau {:.3}, rho {:.3}",
        a.len(),
        kendall_tau(&a, &b)?,
        spearman_rho(&a, &b)?
    );
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
