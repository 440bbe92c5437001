//! Masked inference on the colour-square detector: hide half of a red
//! square and compare the AD pass with every pixel-fill baseline.
//! Also prints the mask at each checkpoint of the AD pass.

use convad::engine::{ad_forward_traced, AdConfig};
use convad::synthetic::{color_square_detector, square_image, SquareSpec};
use convad::{BinaryMask, Engine};

fn main() -> convad::Result<()> {
    let model = color_square_detector();
    let spec = SquareSpec::canonical(0);
    let input = square_image(&spec);
    // keep only the left two columns of the square
    let mask = BinaryMask::from_fn(16, 16, |_, x| x < spec.left + 2);
    let cfg = AdConfig::default();

    let plain = model.forward(&input)?;
    println!("plain      {:?}", fmt(plain.data(), model.labels()));
    for engine in Engine::ALL {
        let p = engine.probabilities(&model, &input, &mask, &cfg)?;
        println!("{:<10} {:?}", engine.name(), fmt(p.data(), model.labels()));
    }

    let trace = ad_forward_traced(&model, &input, &mask, &cfg)?;
    for (pos, state) in trace.states.iter().enumerate() {
        if state.deactivated {
            let m = state.mask.as_ref().expect("checkpoints carry a mask");
            println!(
                "checkpoint {pos}: {}x{} mask, {} of {} cells kept",
                m.height(),
                m.width(),
                m.count_ones(),
                m.len()
            );
        }
    }
    Ok(())
}

fn fmt(p: &[f32], labels: &[String]) -> Vec<String> {
    labels
        .iter()
        .zip(p)
        .map(|(l, v)| format!("{l}={v:.3}"))
        .collect()
}
