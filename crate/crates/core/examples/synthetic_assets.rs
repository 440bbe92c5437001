//! Writes the synthetic models and image folders used throughout the docs.
//!
//! ```text
//! cargo run --example synthetic_assets -- assets/
//! ```
//!
//! Produces `detector.json` + `detector.adw` (colour-square classifier),
//! `golden.json` + `golden.adw`, `golden.png`, `half.pgm`, and the
//! `dataset/` and `pool/` folders for `convad evaluate`.

use std::path::PathBuf;

use convad::dataset::{save_image, write_dataset};
use convad::synthetic::{self, GOLDEN_SEED};

fn main() -> convad::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "assets".into()));
    std::fs::create_dir_all(&out).map_err(|e| convad::Error::Io {
        path: out.clone(),
        source: e,
    })?;

    let detector = synthetic::color_square_detector();
    detector.save(&out.join("detector.json"), &out.join("detector.adw"))?;
    write_dataset(
        &out.join("dataset"),
        &synthetic::square_dataset(20, 1),
        detector.labels(),
    )?;
    write_dataset(
        &out.join("pool"),
        &synthetic::square_dataset(180, 2),
        detector.labels(),
    )?;

    let golden = synthetic::golden_cnn(GOLDEN_SEED);
    golden.save(&out.join("golden.json"), &out.join("golden.adw"))?;
    save_image(&synthetic::golden_input(), &out.join("golden.png"))?;
    synthetic::golden_half_mask().write_pgm(&out.join("half.pgm"))?;

    println!("wrote assets to {}", out.display());
    Ok(())
}
