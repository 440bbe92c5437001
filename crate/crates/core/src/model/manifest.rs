//! JSON model manifest.
//!
//! ```json
//! {
//!   "version": 1,
//!   "input_shape": [3, 16, 16],
//!   "labels": ["red", "green"],
//!   "preprocessing": {"mean": [0, 0, 0], "std": [1, 1, 1]},
//!   "layers": [{"kind": "conv", "geometry": {...}, "params": ["c1.w", "c1.b"]}, ...]
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerSpec, Model, ModelGraph, WeightStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_VERSION: u32 = 1;

/// Per-channel input normalisation, `(pixel − mean) / std`, applied to
/// images scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Preprocessing {
    pub fn apply(&self, image: &Tensor) -> Result<Tensor> {
        let (c, h, w) = image.dims3()?;
        if self.mean.len() != c || self.std.len() != c {
            return Err(Error::shape(
                "preprocessing",
                "channels",
                self.mean.len(),
                c,
            ));
        }
        let mut out = image.clone();
        for (ch, plane) in out.data_mut().chunks_exact_mut(h * w).enumerate() {
            let (m, s) = (self.mean[ch], self.std[ch]);
            for v in plane {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub input_shape: [usize; 3],
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocessing: Option<Preprocessing>,
    pub layers: Vec<LayerSpec>,
}

impl Manifest {
    pub fn from_model(model: &Model) -> Self {
        Manifest {
            version: MANIFEST_VERSION,
            input_shape: model.graph().input_shape(),
            labels: model.labels().to_vec(),
            preprocessing: model.preprocessing().cloned(),
            layers: model.graph().layers().to_vec(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| Error::Schema {
            location: format!("line {} column {}", e.line(), e.column()),
            reason: e.to_string(),
        })?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Schema {
                location: "version".into(),
                reason: format!(
                    "unsupported version {}, expected {MANIFEST_VERSION}",
                    m.version
                ),
            });
        }
        if let Some(p) = &m.preprocessing {
            if p.mean.len() != m.input_shape[0] || p.std.len() != m.input_shape[0] {
                return Err(Error::Schema {
                    location: "preprocessing".into(),
                    reason: "mean/std length must equal the input channel count".into(),
                });
            }
            if let Some(k) = p.std.iter().position(|&s| s <= 0.0 || !s.is_finite()) {
                return Err(Error::Schema {
                    location: format!("preprocessing.std[{k}]"),
                    reason: "std must be positive".into(),
                });
            }
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises")
    }

    pub fn into_model(self, weights: WeightStore) -> Result<Model> {
        let graph = ModelGraph::new(self.input_shape, self.labels, self.layers)?;
        let model = Model::new(graph, weights)?;
        match self.preprocessing {
            Some(p) => model.with_preprocessing(p),
            None => Ok(model),
        }
    }
}

/// Loads and fully validates a manifest + blob pair; checkpoints are
/// annotated on construction.
pub fn load_model(manifest_path: &Path, blob_path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest = Manifest::parse(&text)?;
    let weights = WeightStore::read(blob_path)?;
    manifest.into_model(weights)
}

impl Model {
    /// Writes the manifest and blob file for this model.
    pub fn save(&self, manifest_path: &Path, blob_path: &Path) -> Result<()> {
        std::fs::write(manifest_path, Manifest::from_model(self).to_json())
            .map_err(|e| Error::io(manifest_path, e))?;
        self.weights().write(blob_path)
    }
}
