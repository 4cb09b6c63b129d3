// Rejection sampling of architectures inside a FLOPs window.

use mctnas::seed;
use mctnas::space::resolve_space;
use mctnas::train::{sample_with_flops_budget, FlopsWindow, DEFAULT_MAX_TRIES};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let space = resolve_space("mobilenet-21")?;
    let window = FlopsWindow::new(330_000_000);
    let (lo, hi) = window.bounds();
    let mut rng = seed::stream(7, "flops-example");
    for _ in 0..5 {
        let arch = sample_with_flops_budget(
            &space,
            |r| space.random_arch(r),
            &window,
            &mut rng,
            DEFAULT_MAX_TRIES,
        )?;
        let f = space.flops(&arch);
        assert!((lo..=hi).contains(&f));
        println!("{arch}  {:.1}M FLOPs", f as f64 / 1e6);
    }

    // An unreachable window ends in a stall error naming the bounds.
    let tiny = FlopsWindow::new(1);
    let err = sample_with_flops_budget(&space, |r| space.random_arch(r), &tiny, &mut rng, 100)
        .unwrap_err();
    println!("{err}");
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
