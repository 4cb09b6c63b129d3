// Generate a synthetic benchmark, write it to disk and query it back.

use std::sync::Arc;

use mctnas::eval::{generate_synthetic, BenchmarkTable};
use mctnas::space::resolve_space;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let space = Arc::new(resolve_space("bench-macro")?);
    let oracle = generate_synthetic(space.clone(), 0.5, 0.005, 1)?;
    let table = BenchmarkTable::from_synthetic(&oracle, 3)?;

    let path = std::env::temp_dir().join(format!("mctnas-bench-{}.json", std::process::id()));
    table.save(&path)?;
    let loaded = BenchmarkTable::load_for(&path, &space)?;
    std::fs::remove_file(&path)?;
    assert_eq!(loaded, table);

    let (best, rec) = loaded.best();
    println!("{} entries; best {best}: {:.4} (replicas {:?})", loaded.len(), rec.mean_acc, rec.accs);
    // Non-canonical archs resolve to the record of their canonical form.
    let arch = space.parse_arch("20100000")?;
    println!("{arch} -> {:.4}", loaded.lookup(&arch)?.mean_acc);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
