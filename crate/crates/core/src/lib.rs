//! Convolutional inference with activation-deactivation (AD) masking.
//!
//! A masked forward pass zeroes the intermediate activations that derive from
//! occluded input regions instead of painting over pixels. On top of the
//! engine sit a responsibility-ranked causal explainer and a robustness
//! evaluation harness that compares AD against classical pixel occlusion.

pub mod attribution;
pub mod cli;
pub mod dataset;
pub mod engine;
pub mod equivalence;
pub mod error;
pub mod eval;
pub mod explain;
pub mod mask;
pub mod model;
pub mod ops;
pub mod synthetic;
pub mod tensor;

pub use engine::{ad_forward, occlusion_forward, AdConfig, Engine, OcclusionPolicy};
pub use error::{Error, Result};
pub use mask::BinaryMask;
pub use model::{load_model, LayerKind, LayerSpec, Model, ModelGraph, WeightStore};
pub use tensor::{ConvGeometry, Tensor};
