//! Position attribution on a straddling window: a 2×2 kernel over a mask
//! with one occluded column, then thresholding at two values of τ.

use convad::attribution::{position_attribution_conv, threshold_mask};
use convad::{BinaryMask, ConvGeometry};

fn print_mask(m: &BinaryMask) {
    for y in 0..m.height() {
        let row: String = (0..m.width())
            .map(|x| if m.get(y, x) { '#' } else { '.' })
            .collect();
        println!("  {row}");
    }
}

fn main() -> convad::Result<()> {
    let mask =
        BinaryMask::from_rows(&[&[1, 0, 1, 1], &[1, 0, 1, 1], &[1, 1, 1, 1], &[1, 1, 1, 1]])?;
    println!("input mask:");
    print_mask(&mask);

    let phi = position_attribution_conv(&mask, &ConvGeometry::conv(1, 1, 2))?;
    println!("attribution:");
    for row in phi.data().chunks(phi.shape()[1]) {
        println!("  {row:.2?}");
    }
    for tau in [0.0, 0.5] {
        println!("threshold tau = {tau}:");
        print_mask(&threshold_mask(&phi, tau)?);
    }
    Ok(())
}
