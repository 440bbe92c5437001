//! Sequential CNN graphs with single-source concat skips, checkpoint
//! annotation, and the plain (unmasked) forward pass.

mod manifest;
mod weights;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use manifest::{load_model, Manifest, Preprocessing, MANIFEST_VERSION};
pub use weights::{WeightStore, BLOB_MAGIC};

use crate::error::{Error, Result};
use crate::ops::{self, Activation, PoolMode};
use crate::tensor::{ConvGeometry, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Relu,
    Tanh,
    Sigmoid,
    Silu,
    Batchnorm,
    Maxpool,
    Avgpool,
    Upsample,
    Concat,
    Flatten,
    Dense,
    Softmax,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Relu => "relu",
            LayerKind::Tanh => "tanh",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::Silu => "silu",
            LayerKind::Batchnorm => "batchnorm",
            LayerKind::Maxpool => "maxpool",
            LayerKind::Avgpool => "avgpool",
            LayerKind::Upsample => "upsample",
            LayerKind::Concat => "concat",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense => "dense",
            LayerKind::Softmax => "softmax",
        }
    }

    /// Dimensionality-altering operations get a checkpoint on each side.
    pub fn is_dimension_altering(self) -> bool {
        matches!(
            self,
            LayerKind::Maxpool
                | LayerKind::Avgpool
                | LayerKind::Upsample
                | LayerKind::Concat
                | LayerKind::Flatten
        )
    }

    pub fn activation(self) -> Option<Activation> {
        match self {
            LayerKind::Relu => Some(Activation::Relu),
            LayerKind::Tanh => Some(Activation::Tanh),
            LayerKind::Sigmoid => Some(Activation::Sigmoid),
            LayerKind::Silu => Some(Activation::Silu),
            _ => None,
        }
    }

    fn param_count(self) -> usize {
        match self {
            LayerKind::Conv | LayerKind::Dense => 2,
            LayerKind::Batchnorm => 4,
            _ => 0,
        }
    }
}

const DEFAULT_BN_EPS: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<ConvGeometry>,
    /// Blob names: `[weight, bias]` for conv/dense, `[mean, var, gamma, beta]`
    /// for batchnorm.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concat_source: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f32>,
}

impl LayerSpec {
    pub fn new(kind: LayerKind) -> Self {
        LayerSpec {
            kind,
            geometry: None,
            params: Vec::new(),
            concat_source: None,
            factor: None,
            eps: None,
        }
    }

    pub fn conv(geometry: ConvGeometry, weight: &str, bias: &str) -> Self {
        LayerSpec {
            geometry: Some(geometry),
            params: vec![weight.into(), bias.into()],
            ..Self::new(LayerKind::Conv)
        }
    }

    pub fn pool(mode: PoolMode, window: ConvGeometry) -> Self {
        let kind = match mode {
            PoolMode::Max => LayerKind::Maxpool,
            PoolMode::Avg => LayerKind::Avgpool,
        };
        LayerSpec {
            geometry: Some(window),
            ..Self::new(kind)
        }
    }

    pub fn upsample(factor: usize) -> Self {
        LayerSpec {
            factor: Some(factor),
            ..Self::new(LayerKind::Upsample)
        }
    }

    pub fn concat(source: usize) -> Self {
        LayerSpec {
            concat_source: Some(source),
            ..Self::new(LayerKind::Concat)
        }
    }

    pub fn batchnorm(prefix: &str, eps: f32) -> Self {
        LayerSpec {
            params: ["mean", "var", "gamma", "beta"]
                .iter()
                .map(|p| format!("{prefix}.{p}"))
                .collect(),
            eps: Some(eps),
            ..Self::new(LayerKind::Batchnorm)
        }
    }

    pub fn dense(weight: &str, bias: &str) -> Self {
        LayerSpec {
            params: vec![weight.into(), bias.into()],
            ..Self::new(LayerKind::Dense)
        }
    }

    fn err(&self, layer: usize, reason: impl Into<String>) -> Error {
        Error::Layer {
            layer,
            kind: self.kind.name(),
            reason: reason.into(),
        }
    }
}

/// The ordered layer list, its input geometry and class labels.
///
/// Checkpoint positions index the gaps between layers: position `p` sits
/// immediately before layer `p` (equivalently, after layer `p - 1`), so `0` is
/// the input and `layers.len()` the final output.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    layers: Vec<LayerSpec>,
    input_shape: [usize; 3],
    labels: Vec<String>,
    checkpoints: BTreeSet<usize>,
}

impl ModelGraph {
    pub fn new(
        input_shape: [usize; 3],
        labels: Vec<String>,
        layers: Vec<LayerSpec>,
    ) -> Result<Self> {
        if input_shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "input shape {input_shape:?} has a zero dimension"
            )));
        }
        for (i, layer) in layers.iter().enumerate() {
            if let Some(src) = layer.concat_source {
                if layer.kind != LayerKind::Concat {
                    return Err(layer.err(i, "concat_source is only valid on concat layers"));
                }
                if src >= i {
                    return Err(layer.err(
                        i,
                        format!("concat_source {src} must refer to a strictly earlier layer"),
                    ));
                }
            } else if layer.kind == LayerKind::Concat {
                return Err(layer.err(i, "missing concat_source"));
            }
            if layer.params.len() != layer.kind.param_count() {
                return Err(layer.err(
                    i,
                    format!(
                        "expects {} parameter blobs, got {}",
                        layer.kind.param_count(),
                        layer.params.len()
                    ),
                ));
            }
            let needs_geometry = matches!(
                layer.kind,
                LayerKind::Conv | LayerKind::Maxpool | LayerKind::Avgpool
            );
            if needs_geometry && layer.geometry.is_none() {
                return Err(layer.err(i, "missing geometry"));
            }
            if layer.kind == LayerKind::Upsample && layer.factor.is_none_or(|f| f < 2) {
                return Err(layer.err(i, "upsample needs an integer factor of at least 2"));
            }
        }
        let checkpoints = annotate_checkpoints(&layers);
        Ok(ModelGraph {
            layers,
            input_shape,
            labels,
            checkpoints,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn checkpoints(&self) -> &BTreeSet<usize> {
        &self.checkpoints
    }

    pub fn is_checkpoint(&self, position: usize) -> bool {
        self.checkpoints.contains(&position)
    }

    /// Replaces the checkpoint table. Only meant for negative-control tests
    /// that need a deliberately wrong annotation.
    #[doc(hidden)]
    pub fn with_checkpoints_overridden(mut self, checkpoints: BTreeSet<usize>) -> Self {
        self.checkpoints = checkpoints;
        self
    }

    /// Propagates shapes through every layer, checking parameter blobs.
    /// Returns the output shape of each layer.
    pub fn validate(&self, weights: &WeightStore) -> Result<Vec<Vec<usize>>> {
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(self.layers.len());
        let mut cur = self.input_shape.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let param = |k: usize, expected: &[usize]| -> Result<()> {
                let name = &layer.params[k];
                let t = weights.get(name).ok_or_else(|| Error::DanglingBlob {
                    layer: i,
                    name: name.clone(),
                })?;
                if t.shape() != expected {
                    return Err(Error::BlobShape {
                        layer: i,
                        name: name.clone(),
                        expected: expected.to_vec(),
                        actual: t.shape().to_vec(),
                    });
                }
                Ok(())
            };
            let spatial = |cur: &[usize]| -> Result<(usize, usize, usize)> {
                match cur {
                    [c, h, w] => Ok((*c, *h, *w)),
                    _ => Err(layer.err(i, format!("needs a [C, H, W] input, got {cur:?}"))),
                }
            };
            let next = match layer.kind {
                LayerKind::Conv => {
                    let g = layer.geometry.expect("checked in new");
                    let (c, h, w) = spatial(&cur)?;
                    if c != g.in_channels {
                        return Err(layer.err(
                            i,
                            format!("input has {c} channels, geometry expects {}", g.in_channels),
                        ));
                    }
                    param(0, &[g.out_channels, g.in_channels, g.kernel_h, g.kernel_w])?;
                    param(1, &[g.out_channels])?;
                    let (oh, ow) = g
                        .output_size(h, w)
                        .map_err(|e| layer.err(i, e.to_string()))?;
                    vec![g.out_channels, oh, ow]
                }
                LayerKind::Relu | LayerKind::Tanh | LayerKind::Sigmoid | LayerKind::Silu => {
                    cur.clone()
                }
                LayerKind::Softmax => cur.clone(),
                LayerKind::Batchnorm => {
                    let (c, _, _) = spatial(&cur)?;
                    for k in 0..4 {
                        param(k, &[c])?;
                    }
                    if let Some((k, _)) = weights
                        .get(&layer.params[1])
                        .into_iter()
                        .flat_map(|t| t.data().iter().enumerate())
                        .find(|(_, &v)| v < 0.0)
                    {
                        return Err(layer.err(i, format!("negative variance in channel {k}")));
                    }
                    cur.clone()
                }
                LayerKind::Maxpool | LayerKind::Avgpool => {
                    let g = layer.geometry.expect("checked in new");
                    let (c, h, w) = spatial(&cur)?;
                    let (oh, ow) = g
                        .output_size(h, w)
                        .map_err(|e| layer.err(i, e.to_string()))?;
                    let span_h = g.dilation_h * (g.kernel_h - 1) + 1;
                    let span_w = g.dilation_w * (g.kernel_w - 1) + 1;
                    if 2 * g.pad_h > span_h || 2 * g.pad_w > span_w {
                        return Err(layer.err(i, "padding may be at most half the window extent"));
                    }
                    vec![c, oh, ow]
                }
                LayerKind::Upsample => {
                    let f = layer.factor.expect("checked in new");
                    let (c, h, w) = spatial(&cur)?;
                    vec![c, h * f, w * f]
                }
                LayerKind::Concat => {
                    let src = layer.concat_source.expect("checked in new");
                    let (c, h, w) = spatial(&cur)?;
                    let (sc, sh, sw) = spatial(&shapes[src])?;
                    if (sh, sw) != (h, w) {
                        return Err(layer.err(
                            i,
                            format!("source layer {src} is {sh}x{sw}, current input is {h}x{w}"),
                        ));
                    }
                    vec![c + sc, h, w]
                }
                LayerKind::Flatten => {
                    let (c, h, w) = spatial(&cur)?;
                    vec![c * h * w]
                }
                LayerKind::Dense => {
                    if cur.len() != 1 {
                        return Err(layer.err(i, format!("needs a flat input, got {cur:?}")));
                    }
                    let n = cur[0];
                    let w = weights
                        .get(&layer.params[0])
                        .ok_or_else(|| Error::DanglingBlob {
                            layer: i,
                            name: layer.params[0].clone(),
                        })?;
                    let m = match w.shape() {
                        [m, _] => *m,
                        other => {
                            return Err(Error::BlobShape {
                                layer: i,
                                name: layer.params[0].clone(),
                                expected: vec![0, n],
                                actual: other.to_vec(),
                            })
                        }
                    };
                    param(0, &[m, n])?;
                    param(1, &[m])?;
                    vec![m]
                }
            };
            shapes.push(next.clone());
            cur = next;
        }
        Ok(shapes)
    }
}

/// Places checkpoints from layer kinds and order alone: one immediately
/// before every convolution (the input checkpoint for a leading conv) and one
/// on each side of every dimensionality-altering layer.
pub fn annotate_checkpoints(layers: &[LayerSpec]) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for (i, layer) in layers.iter().enumerate() {
        if layer.kind == LayerKind::Conv {
            out.insert(i);
        }
        if layer.kind.is_dimension_altering() {
            out.insert(i);
            out.insert(i + 1);
        }
    }
    out
}

/// A validated graph together with its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    graph: ModelGraph,
    weights: WeightStore,
    shapes: Vec<Vec<usize>>,
    preprocessing: Option<Preprocessing>,
}

impl Model {
    pub fn new(graph: ModelGraph, weights: WeightStore) -> Result<Self> {
        let shapes = graph.validate(&weights)?;
        Ok(Model {
            graph,
            weights,
            shapes,
            preprocessing: None,
        })
    }

    pub fn with_preprocessing(mut self, pre: Preprocessing) -> Result<Self> {
        let c = self.graph.input_shape[0];
        if pre.mean.len() != c || pre.std.len() != c {
            return Err(Error::InvalidArgument(format!(
                "preprocessing needs {c} mean/std entries"
            )));
        }
        self.preprocessing = Some(pre);
        Ok(self)
    }

    pub fn graph(&self) -> &ModelGraph {
        &self.graph
    }

    pub fn weights(&self) -> &WeightStore {
        &self.weights
    }

    pub fn preprocessing(&self) -> Option<&Preprocessing> {
        self.preprocessing.as_ref()
    }

    /// Output shape of every layer, as computed at validation.
    pub fn layer_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    /// Shape entering layer `index`.
    pub fn layer_input_shape(&self, index: usize) -> &[usize] {
        match index {
            0 => &self.graph.input_shape,
            i => &self.shapes[i - 1],
        }
    }

    pub fn labels(&self) -> &[String] {
        self.graph.labels()
    }

    pub fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape() != self.graph.input_shape {
            return Err(Error::InvalidTensor(format!(
                "model expects input {:?}, got {:?}",
                self.graph.input_shape,
                input.shape()
            )));
        }
        Ok(())
    }

    fn blob(&self, name: &str) -> &Tensor {
        self.weights.get(name).expect("validated at construction")
    }

    /// Runs layer `index` on `z`. `outputs` holds the outputs of every
    /// earlier layer, used by concat.
    pub(crate) fn apply_layer(
        &self,
        index: usize,
        z: &Tensor,
        outputs: &[Tensor],
    ) -> Result<Tensor> {
        let layer = &self.graph.layers[index];
        let p = |k: usize| self.blob(&layer.params[k]);
        Ok(match layer.kind {
            LayerKind::Conv => {
                ops::conv2d(z, p(0), p(1), layer.geometry.as_ref().expect("validated"))?
            }
            LayerKind::Relu | LayerKind::Tanh | LayerKind::Sigmoid | LayerKind::Silu => {
                ops::elementwise(z, layer.kind.activation().expect("activation kind"))
            }
            LayerKind::Batchnorm => ops::batchnorm_infer(
                z,
                p(0),
                p(1),
                p(2),
                p(3),
                layer.eps.unwrap_or(DEFAULT_BN_EPS),
            )?,
            LayerKind::Maxpool => ops::pool2d(
                z,
                layer.geometry.as_ref().expect("validated"),
                PoolMode::Max,
            )?,
            LayerKind::Avgpool => ops::pool2d(
                z,
                layer.geometry.as_ref().expect("validated"),
                PoolMode::Avg,
            )?,
            LayerKind::Upsample => ops::upsample_nearest(z, layer.factor.expect("validated"))?,
            LayerKind::Concat => {
                ops::concat_channels(z, &outputs[layer.concat_source.expect("validated")])?
            }
            LayerKind::Flatten => z.clone().reshape(vec![z.len()])?,
            LayerKind::Dense => ops::dense(z, p(0), p(1))?,
            LayerKind::Softmax => ops::softmax(z),
        })
    }

    /// Plain inference; no mask logic runs.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self
            .forward_traced(input)?
            .pop()
            .expect("at least the input"))
    }

    /// Plain inference returning the input followed by every layer's output.
    pub fn forward_traced(&self, input: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(input)?;
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.graph.layers.len());
        let mut z = input.clone();
        for i in 0..self.graph.layers.len() {
            z = self.apply_layer(i, &z, &outputs)?;
            outputs.push(z.clone());
        }
        let mut trace = Vec::with_capacity(outputs.len() + 1);
        trace.push(input.clone());
        trace.extend(outputs);
        Ok(trace)
    }

    /// Class probabilities: the final output, passed through softmax unless
    /// the graph already ends with one.
    pub fn probabilities(&self, output: Tensor) -> Tensor {
        match self.graph.layers.last() {
            Some(l) if l.kind == LayerKind::Softmax => output,
            _ => ops::softmax(&output),
        }
    }
}
