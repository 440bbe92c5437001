//! Dense row-major `f32` tensors and convolution/pooling window geometry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense tensor in row-major order.
///
/// Feature maps are `[C, H, W]`, vectors are `[N]`. Every dimension is at
/// least one, with the single exception of [`Tensor::empty_channels`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::InvalidTensor(
                "rank 0 tensors are not supported".into(),
            ));
        }
        if let Some(axis) = shape.iter().position(|&d| d == 0) {
            return Err(Error::InvalidTensor(format!("dimension {axis} has size 0")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Vec<usize>, value: f32) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    /// A `[0, H, W]` feature map: the neutral element of channel concatenation.
    pub fn empty_channels(height: usize, width: usize) -> Self {
        Tensor {
            shape: vec![0, height, width],
            data: Vec::new(),
        }
    }

    /// Builds a tensor from a function of the flat index.
    pub fn from_fn(shape: Vec<usize>, f: impl FnMut(usize) -> f32) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, (0..n).map(f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(C, H, W)` of a rank-3 feature map.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::InvalidTensor(format!(
                "expected a [C, H, W] feature map, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Index of the largest element; the first one wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Option<f32> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f32::max),
        )
    }
}

fn one() -> usize {
    1
}

/// Window geometry shared by convolution, pooling and the matching
/// position-attribution operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub kernel_h: usize,
    pub kernel_w: usize,
    #[serde(default = "one")]
    pub stride_h: usize,
    #[serde(default = "one")]
    pub stride_w: usize,
    #[serde(default)]
    pub pad_h: usize,
    #[serde(default)]
    pub pad_w: usize,
    #[serde(default = "one")]
    pub dilation_h: usize,
    #[serde(default = "one")]
    pub dilation_w: usize,
    #[serde(default)]
    pub in_channels: usize,
    #[serde(default)]
    pub out_channels: usize,
}

impl ConvGeometry {
    /// Square `kernel`×`kernel` convolution, stride 1, no padding.
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvGeometry {
            kernel_h: kernel,
            kernel_w: kernel,
            stride_h: 1,
            stride_w: 1,
            pad_h: 0,
            pad_w: 0,
            dilation_h: 1,
            dilation_w: 1,
            in_channels,
            out_channels,
        }
    }

    /// Square pooling window; channel counts are left at zero.
    pub fn window(kernel: usize, stride: usize) -> Self {
        ConvGeometry::conv(0, 0, kernel).with_stride(stride)
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride_h = stride;
        self.stride_w = stride;
        self
    }

    pub fn with_padding(mut self, pad: usize) -> Self {
        self.pad_h = pad;
        self.pad_w = pad;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation_h = dilation;
        self.dilation_w = dilation;
        self
    }

    pub fn validate(&self, op: &'static str) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::InvalidGeometry {
                op,
                reason: reason.to_string(),
            })
        };
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return bad("kernel size must be at least 1");
        }
        if self.stride_h == 0 || self.stride_w == 0 {
            return bad("stride must be at least 1");
        }
        if self.dilation_h == 0 || self.dilation_w == 0 {
            return bad("dilation must be at least 1");
        }
        Ok(())
    }

    /// Output spatial size for an `in_h`×`in_w` input:
    /// `floor((in + 2·pad − dilation·(k−1) − 1) / stride) + 1`.
    pub fn output_size(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        self.output_size_for("window", in_h, in_w)
    }

    pub(crate) fn output_size_for(
        &self,
        op: &'static str,
        in_h: usize,
        in_w: usize,
    ) -> Result<(usize, usize)> {
        self.validate(op)?;
        let axis = |input: usize, pad: usize, dil: usize, k: usize, stride: usize, name: &str| {
            let span = dil * (k - 1) + 1;
            let padded = input + 2 * pad;
            if padded < span {
                Err(Error::InvalidGeometry {
                    op,
                    reason: format!(
                        "{name}: dilated kernel extent {span} exceeds padded input {padded}"
                    ),
                })
            } else {
                Ok((padded - span) / stride + 1)
            }
        };
        let h = axis(
            in_h,
            self.pad_h,
            self.dilation_h,
            self.kernel_h,
            self.stride_h,
            "height",
        )?;
        let w = axis(
            in_w,
            self.pad_w,
            self.dilation_w,
            self.kernel_w,
            self.stride_w,
            "width",
        )?;
        Ok((h, w))
    }
}
