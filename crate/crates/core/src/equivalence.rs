//! Empirical check that an AD pass with nothing masked reproduces the plain
//! forward pass, layer by layer.

use std::fmt;

use crate::engine::{ad_forward_with_hook, AdConfig};
use crate::error::Result;
use crate::mask::BinaryMask;
use crate::model::Model;
use crate::synthetic::{random_input, rng};

pub const DEFAULT_TOLERANCE: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceConfig {
    pub trials: usize,
    pub taus: Vec<f32>,
    pub seed: u64,
    pub tolerance: f32,
    /// Inputs are drawn uniformly from this range.
    pub input_range: (f32, f32),
}

impl Default for EquivalenceConfig {
    fn default() -> Self {
        EquivalenceConfig {
            trials: 100,
            taus: vec![0.0, 0.25, 0.49],
            seed: 0,
            tolerance: DEFAULT_TOLERANCE,
            input_range: (-1.0, 1.0),
        }
    }
}

/// Where an AD pass first departed from the plain pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub tau: f32,
    pub trial: usize,
    /// Position in the trace: `0` is the input, `i + 1` the output of layer `i`.
    pub position: usize,
    pub deviation: f32,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.position {
            0 => write!(f, "input differs")?,
            p => write!(f, "layer {} output differs", p - 1)?,
        }
        write!(
            f,
            " by {:e} (trial {}, tau {})",
            self.deviation, self.trial, self.tau
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub trials: usize,
    /// Largest final-output deviation per τ, in the configured order.
    pub max_deviation: Vec<(f32, f32)>,
    pub first_divergence: Option<Divergence>,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.first_divergence.is_none()
    }
}

/// Runs `trials` random inputs through both passes at every τ.
pub fn verify_equivalence(model: &Model, cfg: &EquivalenceConfig) -> Result<EquivalenceReport> {
    verify_equivalence_with_hook(model, cfg, &mut |_, _| {})
}

/// Like [`verify_equivalence`], but `hook(position, mask)` may rewrite the
/// mask at each checkpoint. Used to plant faults in negative controls.
#[doc(hidden)]
pub fn verify_equivalence_with_hook(
    model: &Model,
    cfg: &EquivalenceConfig,
    hook: &mut dyn FnMut(usize, &mut BinaryMask),
) -> Result<EquivalenceReport> {
    let shape = model.graph().input_shape();
    let ones = BinaryMask::ones(shape[1], shape[2]);
    let mut max_deviation = Vec::with_capacity(cfg.taus.len());
    let mut first_divergence = None;
    for &tau in &cfg.taus {
        let ad = AdConfig::new(tau)?;
        let mut r = rng(cfg.seed);
        let mut worst = 0.0f32;
        for trial in 0..cfg.trials {
            let x = random_input(shape, cfg.input_range.0, cfg.input_range.1, &mut r);
            let plain = model.forward_traced(&x)?;
            let masked = ad_forward_with_hook(model, &x, &ones, &ad, hook)?;
            let dev = |p: usize| {
                plain[p]
                    .max_abs_diff(&masked.states[p].activation)
                    .unwrap_or(f32::INFINITY)
            };
            let out = dev(plain.len() - 1);
            // NaN compares false; treat it as a divergence too
            let out = if out.is_nan() { f32::INFINITY } else { out };
            worst = worst.max(out);
            if out > cfg.tolerance && first_divergence.is_none() {
                let position = (0..plain.len())
                    .find(|&p| {
                        let d = dev(p);
                        d.is_nan() || d > cfg.tolerance
                    })
                    .unwrap_or(plain.len() - 1);
                first_divergence = Some(Divergence {
                    tau,
                    trial,
                    position,
                    deviation: dev(position),
                });
            }
        }
        max_deviation.push((tau, worst));
    }
    Ok(EquivalenceReport {
        trials: cfg.trials,
        max_deviation,
        first_divergence,
    })
}
