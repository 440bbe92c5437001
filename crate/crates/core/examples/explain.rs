//! Responsibility landscape and explanations at several confidence
//! thresholds for one synthetic image.

use convad::explain::{build_landscape, extract_explanation, verify_explanation, ExplainConfig};
use convad::synthetic::{color_square_detector, square_image, SquareSpec};
use convad::{BinaryMask, Engine};

fn main() -> convad::Result<()> {
    let model = color_square_detector();
    let spec = SquareSpec {
        color: 2,
        top: 3,
        left: 8,
        ..SquareSpec::canonical(2)
    };
    let input = square_image(&spec);
    let cfg = ExplainConfig::default();
    let seed = 7;

    let landscape = build_landscape(&model, &input, Engine::Ad, &cfg, seed)?;
    let max = landscape.values().iter().copied().fold(0.0, f32::max);
    println!("responsibility (0-9):");
    for y in 0..16 {
        let row: String = (0..16)
            .map(|x| {
                char::from_digit((9.0 * landscape.get(y, x) / max).round() as u32, 10).unwrap()
            })
            .collect();
        println!("  {row}");
    }

    for gamma in [0.0, 0.5, 0.9] {
        let e = extract_explanation(&model, &input, &landscape, Engine::Ad, gamma, &cfg, seed)?;
        let v = verify_explanation(&model, &input, &e, &cfg.ad)?;
        println!(
            "gamma {gamma}: {} pixels, confidence {:.3}, sufficient {}, counterfactual {}",
            e.pixel_set.count_ones(),
            e.confidence,
            v.sufficient,
            v.counterfactual
        );
        show(&e.pixel_set);
    }
    Ok(())
}

fn show(m: &BinaryMask) {
    for y in 0..m.height() {
        let row: String = (0..m.width())
            .map(|x| if m.get(y, x) { '#' } else { '.' })
            .collect();
        println!("  {row}");
    }
}
