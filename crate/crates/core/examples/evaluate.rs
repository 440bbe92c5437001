//! Runs the robustness protocol on the synthetic colour-square detector and
//! prints the per-(engine, γ) report.
//!
//! ```text
//! cargo run --release --example evaluate -- [images] [backgrounds]
//! ```

use std::time::Instant;

use convad::eval::{run_suite, SuiteConfig};
use convad::synthetic::{color_square_detector, square_dataset};
use convad::Engine;

fn main() -> convad::Result<()> {
    let mut args = std::env::args()
        .skip(1)
        .map(|a| a.parse::<usize>().expect("numeric argument"));
    let images = args.next().unwrap_or(20);
    let backgrounds = args.next().unwrap_or(100);

    let model = color_square_detector();
    let dataset = square_dataset(images, 1);
    let pool = square_dataset(180, 2);
    let mut cfg = SuiteConfig::new(Engine::ALL.to_vec(), vec![0.0, 0.1, 0.3, 0.5, 0.7, 0.9], 42);
    cfg.backgrounds = backgrounds;

    let start = Instant::now();
    let report = run_suite(&model, &dataset, &pool, &cfg)?;
    print!("{}", report.to_csv());
    eprintln!("{} images in {:.1?}", images, start.elapsed());
    Ok(())
}
