//! Checks that the AD pass with nothing masked reproduces plain inference on
//! every synthetic architecture family.

use convad::equivalence::{verify_equivalence, EquivalenceConfig};
use convad::synthetic::Architecture;

fn main() -> convad::Result<()> {
    let cfg = EquivalenceConfig::default();
    let mut all = true;
    for arch in Architecture::ALL {
        let report = verify_equivalence(&arch.build(1), &cfg)?;
        let worst = report
            .max_deviation
            .iter()
            .map(|(_, d)| *d)
            .fold(0.0, f32::max);
        println!(
            "{:<22} {} trials, max deviation {worst:e}",
            arch.name(),
            report.trials
        );
        if let Some(d) = &report.first_divergence {
            println!("  {d}");
            all = false;
        }
    }
    std::process::exit(if all { 0 } else { 1 });
}
