// Simulated supernet training: uniform warm-up, MCT warm-up, then MCTS sampling.

use std::sync::Arc;

use mctnas::eval::{generate_synthetic, SurrogateParams, SurrogateTrainer};
use mctnas::space::resolve_space;
use mctnas::train::{run_training, Phase, TrainConfig};
use mctnas::tree::{MctTree, ROOT};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let space = Arc::new(resolve_space("bench-macro")?);
    let oracle = generate_synthetic(space.clone(), 0.5, 0.005, 3)?;
    let mut trainer = SurrogateTrainer::new(&oracle, SurrogateParams::default(), 3)?;
    let cfg = TrainConfig {
        total_iters: 4000,
        seed: 3,
        ..Default::default()
    };
    let (tree, log) = run_training(space.clone(), &mut trainer, &cfg)?;

    for phase in [Phase::Warmup, Phase::MctWarmup, Phase::Mcts] {
        let n = log.records.iter().filter(|r| r.phase == phase).count();
        println!("{phase}: {n} iterations");
    }
    println!("root visits {} over children {:?}", tree.root().visits, tree.child_visits(ROOT));
    println!("{} nodes, final baseline {:.4}", tree.nodes().len(), tree.baseline().value);

    let restored = MctTree::restore(&tree.snapshot(), space)?;
    assert_eq!(restored, tree);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
