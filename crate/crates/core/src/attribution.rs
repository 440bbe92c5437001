//! Position attribution: for every cell of a layer's output, the fraction of
//! the cells feeding it (its window in the previous representation) that are
//! unmasked, and the thresholding that turns those fractions back into a
//! binary mask.
//!
//! Padding cells are not part of any window: the denominator counts only
//! positions that exist in the input. A window that covers padding alone has
//! no input dependence and attributes `1`.

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::tensor::{ConvGeometry, Tensor};

/// Windowed mean of the mask (a mean-value kernel of the layer's geometry)
/// over valid positions only. Returns an `[H', W']` tensor.
fn windowed_fraction(op: &'static str, mask: &BinaryMask, geom: &ConvGeometry) -> Result<Tensor> {
    let (h, w) = mask.dims();
    let (oh, ow) = geom.output_size_for(op, h, w)?;
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut valid = 0u32;
            let mut kept = 0u32;
            for ky in 0..geom.kernel_h {
                let iy = (oy * geom.stride_h + ky * geom.dilation_h) as isize - geom.pad_h as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..geom.kernel_w {
                    let ix =
                        (ox * geom.stride_w + kx * geom.dilation_w) as isize - geom.pad_w as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    valid += 1;
                    kept += mask.get(iy as usize, ix as usize) as u32;
                }
            }
            out.push(if valid == 0 {
                1.0
            } else {
                kept as f32 / valid as f32
            });
        }
    }
    Tensor::new(vec![oh, ow], out)
}

/// Attribution through a convolution with geometry `geom`.
pub fn position_attribution_conv(mask: &BinaryMask, geom: &ConvGeometry) -> Result<Tensor> {
    windowed_fraction("conv attribution", mask, geom)
}

/// Attribution through a max or average pooling window.
pub fn position_attribution_pool(mask: &BinaryMask, window: &ConvGeometry) -> Result<Tensor> {
    windowed_fraction("pool attribution", mask, window)
}

/// Attribution through nearest upsampling: every output cell has exactly one
/// source cell, so the result is the mask replicated into blocks.
pub fn position_attribution_upsample(mask: &BinaryMask, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::InvalidArgument(
            "upsample factor must be positive".into(),
        ));
    }
    let (h, w) = mask.dims();
    Tensor::from_fn(vec![h * factor, w * factor], |i| {
        let (y, x) = (i / (w * factor), i % (w * factor));
        mask.get(y / factor, x / factor) as u8 as f32
    })
}

/// Joins the mask of the running representation with the mask of the branch
/// concatenated onto it. With `include_external` the external branch's
/// unmasked features count (`max(a, b)`); otherwise its influence is
/// suppressed and `a` is returned.
pub fn position_attribution_concat(
    mask_a: &BinaryMask,
    mask_b: &BinaryMask,
    include_external: bool,
) -> Result<BinaryMask> {
    if mask_a.dims() != mask_b.dims() {
        return Err(Error::shape(
            "concat attribution",
            "mask cells",
            mask_a.len(),
            mask_b.len(),
        ));
    }
    if include_external {
        mask_a.union(mask_b)
    } else {
        Ok(mask_a.clone())
    }
}

/// `M'[a, b] = 1(Φ[a, b] > τ)`: strict, so ties deactivate.
pub fn threshold_mask(phi: &Tensor, tau: f32) -> Result<BinaryMask> {
    let (h, w) = match phi.shape() {
        [h, w] => (*h, *w),
        other => {
            return Err(Error::InvalidTensor(format!(
                "attribution grid must be [H, W], got {other:?}"
            )))
        }
    };
    BinaryMask::new(h, w, phi.data().iter().map(|&v| (v > tau) as u8).collect())
}

/// Repeats a spatial mask across `channels` in `[C, H, W]` flat order,
/// giving a `1 × (C·H·W)` mask for a flattened representation.
pub fn flatten_mask(mask: &BinaryMask, channels: usize) -> BinaryMask {
    let data = mask.data().repeat(channels);
    BinaryMask::new(1, data.len(), data).expect("binary data from a valid mask")
}
