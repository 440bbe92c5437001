//! The activation-deactivation forward pass and the pixel-occlusion baseline.
//!
//! An AD pass threads a binary spatial mask alongside the activations. After
//! every convolution and dimensionality-altering layer the mask is replaced by
//! the thresholded position attribution of that layer; at every checkpoint
//! the activations at masked positions are set to zero, across all channels.
//! The first checkpoint (position 0) applies the caller's mask unchanged.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attribution::{
    flatten_mask, position_attribution_concat, position_attribution_conv,
    position_attribution_pool, position_attribution_upsample, threshold_mask,
};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::model::{LayerKind, Model};
use crate::ops;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdConfig {
    tau: f32,
    /// Whether a concatenated branch's unmasked features keep positions
    /// active (see [`position_attribution_concat`]).
    pub include_external: bool,
}

impl AdConfig {
    pub fn new(tau: f32) -> Result<Self> {
        if !(0.0..1.0).contains(&tau) {
            return Err(Error::InvalidArgument(format!(
                "tau must lie in [0, 1), got {tau}"
            )));
        }
        Ok(AdConfig {
            tau,
            include_external: true,
        })
    }

    pub fn tau(&self) -> f32 {
        self.tau
    }
}

impl Default for AdConfig {
    fn default() -> Self {
        AdConfig {
            tau: 0.0,
            include_external: true,
        }
    }
}

/// Activation and mask at one position of an AD pass.
///
/// `mask` is `None` once the representation no longer maps onto spatial
/// positions (after a dense layer).
#[derive(Debug, Clone, PartialEq)]
pub struct AdState {
    pub activation: Tensor,
    pub mask: Option<BinaryMask>,
    pub deactivated: bool,
}

/// One [`AdState`] per position: the input, then the output of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdTrace {
    pub states: Vec<AdState>,
}

impl AdTrace {
    pub fn output(&self) -> &Tensor {
        &self.states.last().expect("non-empty trace").activation
    }

    pub fn masks(&self) -> impl Iterator<Item = Option<&BinaryMask>> {
        self.states.iter().map(|s| s.mask.as_ref())
    }
}

/// Mask after layer `index`, given the mask entering it and the masks at all
/// earlier positions (for concat sources).
fn step_mask(
    model: &Model,
    index: usize,
    mask: Option<&BinaryMask>,
    history: &[Option<BinaryMask>],
    cfg: &AdConfig,
) -> Result<Option<BinaryMask>> {
    let layer = &model.graph().layers()[index];
    let need = || {
        mask.ok_or_else(|| Error::Layer {
            layer: index,
            kind: layer.kind.name(),
            reason: "no spatial mask is available at this depth".into(),
        })
    };
    Ok(match layer.kind {
        LayerKind::Conv => {
            let g = layer.geometry.as_ref().expect("validated");
            Some(threshold_mask(
                &position_attribution_conv(need()?, g)?,
                cfg.tau,
            )?)
        }
        LayerKind::Maxpool | LayerKind::Avgpool => {
            let g = layer.geometry.as_ref().expect("validated");
            Some(threshold_mask(
                &position_attribution_pool(need()?, g)?,
                cfg.tau,
            )?)
        }
        LayerKind::Upsample => {
            let f = layer.factor.expect("validated");
            Some(threshold_mask(
                &position_attribution_upsample(need()?, f)?,
                cfg.tau,
            )?)
        }
        LayerKind::Concat => {
            let src = layer.concat_source.expect("validated");
            let other = history[src + 1].as_ref().ok_or_else(|| Error::Layer {
                layer: index,
                kind: "concat",
                reason: format!("source layer {src} has no spatial mask"),
            })?;
            Some(position_attribution_concat(
                need()?,
                other,
                cfg.include_external,
            )?)
        }
        LayerKind::Flatten => {
            let c = model.layer_input_shape(index)[0];
            Some(flatten_mask(need()?, c))
        }
        LayerKind::Dense => None,
        LayerKind::Relu
        | LayerKind::Tanh
        | LayerKind::Sigmoid
        | LayerKind::Silu
        | LayerKind::Batchnorm
        | LayerKind::Softmax => mask.cloned(),
    })
}

/// Zeroes every activation at a masked position. Feature maps broadcast the
/// spatial mask over channels; flat vectors need a `1 × N` mask.
pub fn deactivate(z: &mut Tensor, mask: &BinaryMask) -> Result<()> {
    let plane = mask.len();
    let ok = match z.shape() {
        [_, h, w] => (*h, *w) == mask.dims(),
        [n] => *n == plane,
        _ => false,
    };
    if !ok {
        return Err(Error::Mask(format!(
            "mask {:?} does not fit representation {:?}",
            mask.dims(),
            z.shape()
        )));
    }
    let m = mask.data();
    for chunk in z.data_mut().chunks_exact_mut(plane) {
        for (v, &keep) in chunk.iter_mut().zip(m) {
            if keep == 0 {
                *v = 0.0;
            }
        }
    }
    Ok(())
}

fn check_mask(model: &Model, input: &Tensor, mask: &BinaryMask) -> Result<()> {
    model.check_input(input)?;
    let [_, h, w] = model.graph().input_shape();
    if mask.dims() != (h, w) {
        return Err(Error::Mask(format!(
            "mask is {}x{}, input is {h}x{w}",
            mask.height(),
            mask.width()
        )));
    }
    Ok(())
}

/// Mask at every position of an AD pass, without computing activations.
pub fn propagate_masks(
    model: &Model,
    mask: &BinaryMask,
    cfg: &AdConfig,
) -> Result<Vec<Option<BinaryMask>>> {
    let [_, h, w] = model.graph().input_shape();
    if mask.dims() != (h, w) {
        return Err(Error::Mask(format!(
            "mask is {:?}, input is {h}x{w}",
            mask.dims()
        )));
    }
    let mut history = vec![Some(mask.clone())];
    for i in 0..model.graph().layers().len() {
        let next = step_mask(model, i, history[i].as_ref(), &history, cfg)?;
        history.push(next);
    }
    Ok(history)
}

/// AD forward pass returning the final output.
pub fn ad_forward(
    model: &Model,
    input: &Tensor,
    mask: &BinaryMask,
    cfg: &AdConfig,
) -> Result<Tensor> {
    Ok(run_ad(model, input, mask, cfg, &mut |_, _| {}, false)?
        .states
        .pop()
        .expect("non-empty")
        .activation)
}

/// AD forward pass keeping the activation and mask at every position.
pub fn ad_forward_traced(
    model: &Model,
    input: &Tensor,
    mask: &BinaryMask,
    cfg: &AdConfig,
) -> Result<AdTrace> {
    run_ad(model, input, mask, cfg, &mut |_, _| {}, true)
}

/// Like [`ad_forward_traced`], but `hook(position, mask)` may rewrite the mask
/// used for deactivation at each checkpoint. Used to build negative controls.
#[doc(hidden)]
pub fn ad_forward_with_hook(
    model: &Model,
    input: &Tensor,
    mask: &BinaryMask,
    cfg: &AdConfig,
    hook: &mut dyn FnMut(usize, &mut BinaryMask),
) -> Result<AdTrace> {
    run_ad(model, input, mask, cfg, hook, true)
}

fn run_ad(
    model: &Model,
    input: &Tensor,
    mask: &BinaryMask,
    cfg: &AdConfig,
    hook: &mut dyn FnMut(usize, &mut BinaryMask),
    keep_trace: bool,
) -> Result<AdTrace> {
    check_mask(model, input, mask)?;
    let graph = model.graph();
    let layers = graph.layers();

    let checkpoint = |pos: usize,
                      z: &mut Tensor,
                      m: Option<&BinaryMask>,
                      hook: &mut dyn FnMut(usize, &mut BinaryMask)|
     -> Result<bool> {
        if !graph.is_checkpoint(pos) {
            return Ok(false);
        }
        let m = m.ok_or_else(|| Error::Mask(format!("checkpoint {pos} has no spatial mask")))?;
        let mut m = m.clone();
        hook(pos, &mut m);
        deactivate(z, &m)?;
        Ok(true)
    };

    let mut masks: Vec<Option<BinaryMask>> = vec![Some(mask.clone())];
    let mut z = input.clone();
    let deactivated = checkpoint(0, &mut z, masks[0].as_ref(), hook)?;

    // Post-checkpoint outputs of every layer; concat reads its source here.
    let mut outputs: Vec<Tensor> = Vec::with_capacity(layers.len());
    let mut states = Vec::new();
    if keep_trace {
        states.push(AdState {
            activation: z.clone(),
            mask: masks[0].clone(),
            deactivated,
        });
    }

    for (i, layer) in layers.iter().enumerate() {
        z = if layer.kind == LayerKind::Concat {
            let src = layer.concat_source.expect("validated");
            let mut other = outputs[src].clone();
            if let Some(m) = &masks[src + 1] {
                deactivate(&mut other, m)?;
            }
            ops::concat_channels(&z, &other)?
        } else {
            model.apply_layer(i, &z, &outputs)?
        };
        let next = step_mask(model, i, masks[i].as_ref(), &masks, cfg)?;
        masks.push(next);
        let deactivated = checkpoint(i + 1, &mut z, masks[i + 1].as_ref(), hook)?;
        if keep_trace {
            states.push(AdState {
                activation: z.clone(),
                mask: masks[i + 1].clone(),
                deactivated,
            });
        }
        outputs.push(z.clone());
    }

    if !keep_trace {
        states.push(AdState {
            activation: z,
            mask: masks.pop().flatten(),
            deactivated: false,
        });
    }
    Ok(AdTrace { states })
}

/// Pixel value used for occluded positions by the classical baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OcclusionPolicy {
    Min,
    Max,
    Avg,
    Zero,
}

impl OcclusionPolicy {
    pub const ALL: [OcclusionPolicy; 4] = [
        OcclusionPolicy::Min,
        OcclusionPolicy::Max,
        OcclusionPolicy::Avg,
        OcclusionPolicy::Zero,
    ];

    /// Replacement value for one channel plane.
    pub fn value(self, plane: &[f32]) -> f32 {
        match self {
            OcclusionPolicy::Min => plane.iter().copied().fold(f32::INFINITY, f32::min),
            OcclusionPolicy::Max => plane.iter().copied().fold(f32::NEG_INFINITY, f32::max),
            // f64 accumulation keeps the mean of a constant plane exact
            OcclusionPolicy::Avg => {
                (plane.iter().map(|&v| v as f64).sum::<f64>() / plane.len() as f64) as f32
            }
            OcclusionPolicy::Zero => 0.0,
        }
    }
}

/// Replaces masked pixels with the per-channel policy value.
pub fn occlude(input: &Tensor, mask: &BinaryMask, policy: OcclusionPolicy) -> Result<Tensor> {
    let (_, h, w) = input.dims3()?;
    if mask.dims() != (h, w) {
        return Err(Error::Mask(format!(
            "mask is {:?}, input is {h}x{w}",
            mask.dims()
        )));
    }
    let mut out = input.clone();
    for plane in out.data_mut().chunks_exact_mut(h * w) {
        let fill = policy.value(plane);
        for (v, &keep) in plane.iter_mut().zip(mask.data()) {
            if keep == 0 {
                *v = fill;
            }
        }
    }
    Ok(out)
}

/// Classical occlusion: edit the pixels, then run the plain forward pass.
pub fn occlusion_forward(
    model: &Model,
    input: &Tensor,
    mask: &BinaryMask,
    policy: OcclusionPolicy,
) -> Result<Tensor> {
    check_mask(model, input, mask)?;
    model.forward(&occlude(input, mask, policy)?)
}

/// The mutation engine used to evaluate a partially hidden input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Engine {
    Ad,
    Occlusion(OcclusionPolicy),
}

impl Engine {
    pub const ALL: [Engine; 5] = [
        Engine::Ad,
        Engine::Occlusion(OcclusionPolicy::Min),
        Engine::Occlusion(OcclusionPolicy::Max),
        Engine::Occlusion(OcclusionPolicy::Avg),
        Engine::Occlusion(OcclusionPolicy::Zero),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Engine::Ad => "ad",
            Engine::Occlusion(OcclusionPolicy::Min) => "min",
            Engine::Occlusion(OcclusionPolicy::Max) => "max",
            Engine::Occlusion(OcclusionPolicy::Avg) => "avg",
            Engine::Occlusion(OcclusionPolicy::Zero) => "zero",
        }
    }

    /// Final model output for `input` restricted to the unmasked cells.
    pub fn run(
        self,
        model: &Model,
        input: &Tensor,
        mask: &BinaryMask,
        cfg: &AdConfig,
    ) -> Result<Tensor> {
        match self {
            Engine::Ad => ad_forward(model, input, mask, cfg),
            Engine::Occlusion(p) => occlusion_forward(model, input, mask, p),
        }
    }

    /// Class probabilities for the restricted input.
    pub fn probabilities(
        self,
        model: &Model,
        input: &Tensor,
        mask: &BinaryMask,
        cfg: &AdConfig,
    ) -> Result<Tensor> {
        Ok(model.probabilities(self.run(model, input, mask, cfg)?))
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Engine::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown engine `{s}` (expected ad|min|max|avg|zero)"
                ))
            })
    }
}

impl Serialize for Engine {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Engine {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
