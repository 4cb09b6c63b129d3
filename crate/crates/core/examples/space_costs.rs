// Build the two preset spaces and inspect sizes, costs and canonical forms.

use mctnas::space::resolve_space;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let bench = resolve_space("bench-macro")?;
    let mobile = resolve_space("mobilenet-21")?;
    println!("{}: {} layers, {} architectures", bench.name(), bench.num_layers(), bench.size());
    println!("{}: {} layers, {} architectures", mobile.name(), mobile.num_layers(), mobile.size());

    let arch = bench.parse_arch("02101200")?;
    let canon = bench.canonicalize(&arch);
    println!("{arch} -> canonical {canon}");
    println!("  flops {} params {}", bench.flops(&arch), bench.params(&arch));
    assert_eq!(bench.flops(&arch), bench.flops(&canon));

    let classes = bench.enumerate()?.filter(|a| bench.is_canonical(a)).count();
    println!("{classes} distinct networks after identity dedup");

    let widest = mobile.parse_arch(&"c".repeat(21))?;
    println!("{}", mobile.describe(&widest));
    println!("largest mobilenet-21 arch: {:.1}M FLOPs", mobile.flops(&widest) as f64 / 1e6);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
