//! Numeric kernels every layer is built from.
//!
//! All kernels are pure functions over borrowed tensors. Accumulation is in
//! `f32` with a fixed iteration order, so identical inputs always produce
//! bit-identical outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ConvGeometry, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Silu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Silu => x / (1.0 + (-x).exp()),
        }
    }
}

/// Half-open range of output indices whose tap `offset` (already scaled by
/// dilation) lands inside `[0, input)` on one axis.
#[inline]
fn valid_outputs(
    out: usize,
    input: usize,
    stride: usize,
    pad: usize,
    offset: usize,
) -> (usize, usize) {
    // in = o*stride + offset - pad  must satisfy 0 <= in < input
    let lo = if pad > offset {
        (pad - offset).div_ceil(stride)
    } else {
        0
    };
    let hi = if input + pad > offset {
        ((input + pad - offset - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// 2-D cross-correlation with zero padding.
///
/// `weights` is `[C_out, C_in, kh, kw]` and `bias` is `[C_out]`. Each output
/// element is `bias + Σ_c Σ_ky Σ_kx`, summed in that order.
pub fn conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    geom: &ConvGeometry,
) -> Result<Tensor> {
    const OP: &str = "conv2d";
    let (c, h, w) = input.dims3()?;
    if c != geom.in_channels {
        return Err(Error::shape(OP, "input channels", geom.in_channels, c));
    }
    let expected = [
        geom.out_channels,
        geom.in_channels,
        geom.kernel_h,
        geom.kernel_w,
    ];
    if weights.rank() != 4 {
        return Err(Error::shape(OP, "weight rank", 4, weights.rank()));
    }
    for (axis, (&want, &got)) in ["out_channels", "in_channels", "kernel_h", "kernel_w"]
        .iter()
        .zip(expected.iter().zip(weights.shape()))
    {
        if want != got {
            return Err(Error::shape(OP, format!("weight {axis}"), want, got));
        }
    }
    if bias.len() != geom.out_channels {
        return Err(Error::shape(
            OP,
            "bias length",
            geom.out_channels,
            bias.len(),
        ));
    }
    let (oh, ow) = geom.output_size_for(OP, h, w)?;
    let (kh, kw) = (geom.kernel_h, geom.kernel_w);
    let x = input.data();
    let wt = weights.data();
    let mut out = vec![0.0f32; geom.out_channels * oh * ow];

    for (oc, plane) in out.chunks_exact_mut(oh * ow).enumerate() {
        plane.fill(bias.data()[oc]);
        for ic in 0..c {
            let src = &x[ic * h * w..(ic + 1) * h * w];
            for ky in 0..kh {
                let dy = ky * geom.dilation_h;
                let (y0, y1) = valid_outputs(oh, h, geom.stride_h, geom.pad_h, dy);
                for kx in 0..kw {
                    let k = wt[((oc * c + ic) * kh + ky) * kw + kx];
                    let dx = kx * geom.dilation_w;
                    let (x0, x1) = valid_outputs(ow, w, geom.stride_w, geom.pad_w, dx);
                    for oy in y0..y1 {
                        let iy = oy * geom.stride_h + dy - geom.pad_h;
                        let row = &src[iy * w..(iy + 1) * w];
                        let dst = &mut plane[oy * ow..(oy + 1) * ow];
                        for (ox, d) in dst.iter_mut().enumerate().take(x1).skip(x0) {
                            *d += k * row[ox * geom.stride_w + dx - geom.pad_w];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![geom.out_channels, oh, ow], out)
}

/// Per-channel windowed max or mean. Padding cells are ignored: they never
/// win a max and are not counted in a mean.
pub fn pool2d(input: &Tensor, window: &ConvGeometry, mode: PoolMode) -> Result<Tensor> {
    const OP: &str = "pool2d";
    let (c, h, w) = input.dims3()?;
    let (oh, ow) = window.output_size_for(OP, h, w)?;
    let span_h = window.dilation_h * (window.kernel_h - 1) + 1;
    let span_w = window.dilation_w * (window.kernel_w - 1) + 1;
    if 2 * window.pad_h > span_h || 2 * window.pad_w > span_w {
        return Err(Error::InvalidGeometry {
            op: OP,
            reason: "padding may be at most half the window extent".into(),
        });
    }
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = match mode {
                    PoolMode::Max => f32::NEG_INFINITY,
                    PoolMode::Avg => 0.0,
                };
                let mut count = 0usize;
                for ky in 0..window.kernel_h {
                    let iy = (oy * window.stride_h + ky * window.dilation_h) as isize
                        - window.pad_h as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..window.kernel_w {
                        let ix = (ox * window.stride_w + kx * window.dilation_w) as isize
                            - window.pad_w as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let v = src[iy as usize * w + ix as usize];
                        match mode {
                            PoolMode::Max => acc = acc.max(v),
                            PoolMode::Avg => acc += v,
                        }
                        count += 1;
                    }
                }
                if count == 0 {
                    return Err(Error::InvalidGeometry {
                        op: OP,
                        reason: format!("window at ({oy}, {ox}) covers only padding"),
                    });
                }
                out.push(match mode {
                    PoolMode::Max => acc,
                    PoolMode::Avg => acc / count as f32,
                });
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

pub fn elementwise(input: &Tensor, f: Activation) -> Tensor {
    input.map(|v| f.apply(v))
}

/// Inference-mode batch normalisation:
/// `(x − mean) / sqrt(var + eps) · gamma + beta`, per channel.
pub fn batchnorm_infer(
    input: &Tensor,
    mean: &Tensor,
    var: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f32,
) -> Result<Tensor> {
    const OP: &str = "batchnorm";
    let (c, h, w) = input.dims3()?;
    for (name, t) in [
        ("mean", mean),
        ("var", var),
        ("gamma", gamma),
        ("beta", beta),
    ] {
        if t.len() != c {
            return Err(Error::shape(OP, format!("{name} length"), c, t.len()));
        }
    }
    if let Some((channel, &value)) = var.data().iter().enumerate().find(|(_, &v)| v < 0.0) {
        return Err(Error::NegativeVariance { channel, value });
    }
    let mut out = input.clone();
    for (ch, plane) in out.data_mut().chunks_exact_mut(h * w).enumerate() {
        let m = mean.data()[ch];
        let scale = gamma.data()[ch] / (var.data()[ch] + eps).sqrt();
        let shift = beta.data()[ch];
        for v in plane {
            *v = (*v - m) * scale + shift;
        }
    }
    Ok(out)
}

/// Nearest-neighbour upsampling: each pixel becomes a `factor`×`factor` block.
pub fn upsample_nearest(input: &Tensor, factor: usize) -> Result<Tensor> {
    if factor < 2 {
        return Err(Error::InvalidArgument(format!(
            "upsample factor must be at least 2, got {factor}"
        )));
    }
    let (c, h, w) = input.dims3()?;
    let (oh, ow) = (h * factor, w * factor);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            let row = &x[(ch * h + oy / factor) * w..(ch * h + oy / factor + 1) * w];
            out.extend((0..ow).map(|ox| row[ox / factor]));
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Stacks `b`'s channels after `a`'s.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    const OP: &str = "concat";
    let (ca, ha, wa) = a.dims3()?;
    let (cb, hb, wb) = b.dims3()?;
    if ha != hb {
        return Err(Error::shape(OP, "height", ha, hb));
    }
    if wa != wb {
        return Err(Error::shape(OP, "width", wa, wb));
    }
    if cb == 0 {
        return Ok(a.clone());
    }
    if ca == 0 {
        return Ok(b.clone());
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::new(vec![ca + cb, ha, wa], data)
}

/// Fully connected layer `W·x + b` with `W` of shape `[M, N]`.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    const OP: &str = "dense";
    if input.rank() != 1 {
        return Err(Error::shape(OP, "input rank", 1, input.rank()));
    }
    let n = input.len();
    let (m, wn) = match weights.shape() {
        [m, wn] => (*m, *wn),
        _ => return Err(Error::shape(OP, "weight rank", 2, weights.rank())),
    };
    if wn != n {
        return Err(Error::shape(OP, "weight columns", n, wn));
    }
    if bias.len() != m {
        return Err(Error::shape(OP, "bias length", m, bias.len()));
    }
    let x = input.data();
    let out = weights
        .data()
        .chunks_exact(n)
        .zip(bias.data())
        .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (w, v)| acc + w * v))
        .collect();
    Tensor::new(vec![m], out)
}

/// Softmax over all elements, with max subtraction for stability.
pub fn softmax(input: &Tensor) -> Tensor {
    let max = input
        .data()
        .iter()
        .copied()
        .fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = input.data().iter().map(|&v| (v - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    let data = exps.into_iter().map(|e| e / sum).collect();
    Tensor::new(input.shape().to_vec(), data).expect("shape preserved")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::full(vec![1, 3, 3], 1.0).unwrap();
        let w = t(&[1, 1, 1, 1], &[1.0]);
        let b = t(&[1], &[0.0]);
        let y = conv2d(&x, &w, &b, &ConvGeometry::conv(1, 1, 1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_mean_kernel() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let w = t(&[1, 1, 2, 2], &[0.25; 4]);
        let b = t(&[1], &[0.0]);
        let y = conv2d(&x, &w, &b, &ConvGeometry::conv(1, 1, 2)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[2.5]);
    }

    #[test]
    fn conv_reports_offending_dimension() {
        let x = Tensor::zeros(vec![2, 4, 4]).unwrap();
        let w = Tensor::zeros(vec![1, 3, 3, 3]).unwrap();
        let b = Tensor::zeros(vec![1]).unwrap();
        let err = conv2d(&x, &w, &b, &ConvGeometry::conv(2, 1, 3)).unwrap_err();
        assert!(err.to_string().contains("weight in_channels"), "{err}");
        let err = conv2d(&x, &w, &b, &ConvGeometry::conv(3, 1, 3)).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
    }

    #[test]
    fn pooling_small_cases() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let g = ConvGeometry::window(2, 2);
        assert_eq!(pool2d(&x, &g, PoolMode::Max).unwrap().data(), &[4.0]);
        assert_eq!(pool2d(&x, &g, PoolMode::Avg).unwrap().data(), &[2.5]);
        assert!(pool2d(&x, &ConvGeometry::window(3, 1), PoolMode::Max).is_err());
        assert!(pool2d(
            &x,
            &ConvGeometry::window(2, 1).with_padding(2),
            PoolMode::Max
        )
        .is_err());
    }

    #[test]
    fn activations() {
        let x = t(&[3], &[-1.0, 0.0, 2.0]);
        assert_eq!(elementwise(&x, Activation::Relu).data(), &[0.0, 0.0, 2.0]);
        let z = t(&[1], &[0.0]);
        assert_eq!(elementwise(&z, Activation::Tanh).data(), &[0.0]);
        assert_eq!(elementwise(&z, Activation::Sigmoid).data(), &[0.5]);
        assert_eq!(elementwise(&z, Activation::Silu).data(), &[0.0]);
    }

    #[test]
    fn batchnorm_cases() {
        let x = t(&[2, 1, 2], &[1.0, -2.0, 3.0, 0.5]);
        let zeros = t(&[2], &[0.0, 0.0]);
        let ones = t(&[2], &[1.0, 1.0]);
        assert_eq!(
            batchnorm_infer(&x, &zeros, &ones, &ones, &zeros, 0.0).unwrap(),
            x
        );

        let c = Tensor::full(vec![2, 2, 2], 3.0).unwrap();
        let mean = t(&[2], &[3.0, 3.0]);
        let beta = t(&[2], &[5.0, 5.0]);
        let y = batchnorm_infer(&c, &mean, &ones, &ones, &beta, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 5.0));

        let neg = t(&[2], &[1.0, -0.1]);
        assert!(matches!(
            batchnorm_infer(&x, &zeros, &neg, &ones, &zeros, 0.0),
            Err(Error::NegativeVariance { channel: 1, .. })
        ));
    }

    #[test]
    fn upsample_cases() {
        let one = t(&[1, 1, 1], &[1.0]);
        assert_eq!(upsample_nearest(&one, 2).unwrap().data(), &[1.0; 4]);
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = upsample_nearest(&x, 2).unwrap();
        assert_eq!(
            y.data(),
            &[
                1.0, 1.0, 2.0, 2.0, //
                1.0, 1.0, 2.0, 2.0, //
                3.0, 3.0, 4.0, 4.0, //
                3.0, 3.0, 4.0, 4.0,
            ]
        );
        assert!(upsample_nearest(&x, 1).is_err());
    }

    #[test]
    fn concat_cases() {
        let a = t(&[1, 1, 1], &[5.0]);
        let b = t(&[1, 1, 1], &[7.0]);
        let ab = concat_channels(&a, &b).unwrap();
        assert_eq!(ab.shape(), &[2, 1, 1]);
        assert_eq!(ab.data(), &[5.0, 7.0]);

        let x = Tensor::from_fn(vec![3, 4, 4], |i| i as f32).unwrap();
        assert_eq!(
            concat_channels(&x, &Tensor::empty_channels(4, 4)).unwrap(),
            x
        );
        let y = Tensor::zeros(vec![2, 4, 4]).unwrap();
        assert_eq!(concat_channels(&x, &y).unwrap().shape(), &[5, 4, 4]);
        let z = Tensor::zeros(vec![2, 4, 3]).unwrap();
        assert!(concat_channels(&x, &z).is_err());
    }

    #[test]
    fn dense_cases() {
        let x = t(&[2], &[3.0, -4.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let zero_b = t(&[2], &[0.0, 0.0]);
        assert_eq!(dense(&x, &eye, &zero_b).unwrap(), x);
        let w0 = Tensor::zeros(vec![2, 2]).unwrap();
        let b = t(&[2], &[1.0, 2.0]);
        assert_eq!(dense(&x, &w0, &b).unwrap().data(), &[1.0, 2.0]);
        assert!(dense(&x, &Tensor::zeros(vec![2, 3]).unwrap(), &b).is_err());
    }

    #[test]
    fn softmax_cases() {
        let y = softmax(&t(&[2], &[0.0, 0.0]));
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = softmax(&t(&[2], &[1000.0, 0.0]));
        assert!(y.data().iter().all(|v| v.is_finite()));
        assert!((y.data()[0] - 1.0).abs() < 1e-6);
        assert!(y.data()[1] < 1e-6);
    }
}
