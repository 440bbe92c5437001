//! Responsibility-ranked causal explanations.
//!
//! [`build_landscape`] estimates how responsible each pixel is for the
//! model's top-1 class by recursive quadrant partitioning: every minimal set
//! of quadrants that alone keeps the class shares one unit of responsibility
//! among its members, and the search recurses into those quadrants.
//! [`extract_explanation`] then grows the most responsible superpixels until
//! the restricted input keeps the class at a confidence floor, requires that
//! hiding the set flips the decision, and prunes what is not needed.
//!
//! All evaluations of a partially hidden input go through an [`Engine`]:
//! the AD pass or a pixel-occlusion baseline.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{AdConfig, Engine};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::model::Model;
use crate::synthetic::rng;
use crate::tensor::Tensor;

/// Search parameters shared by landscape building and extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplainConfig {
    /// Independent partition passes, each with fresh random split offsets.
    pub iterations: usize,
    /// Smallest quadrant side in pixels; regions are split only while every
    /// quadrant keeps at least this side (so 2 gives 4-pixel cells).
    pub min_cell_side: usize,
    /// Side of the square superpixels ranked during extraction.
    pub superpixel: usize,
    /// Superpixels added per growth step.
    pub chunk: usize,
    pub ad: AdConfig,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            iterations: 20,
            min_cell_side: 2,
            superpixel: 2,
            chunk: 1,
            ad: AdConfig::default(),
        }
    }
}

impl ExplainConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations == 0
            || self.min_cell_side == 0
            || self.superpixel == 0
            || self.chunk == 0
        {
            return Err(Error::InvalidArgument(
                "iterations, min_cell_side, superpixel and chunk must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Non-negative per-pixel responsibility.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyLandscape {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl SaliencyLandscape {
    pub fn zeros(height: usize, width: usize) -> Self {
        SaliencyLandscape {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Row-major index of the first maximal pixel.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    fn add_rect(&mut self, r: Rect, amount: f32) {
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                self.values[y * self.width + x] += amount;
            }
        }
    }

    /// Summed responsibility of each `side × side` superpixel, row-major.
    pub fn superpixel_scores(&self, side: usize) -> Vec<f64> {
        let grid = SuperpixelGrid::new(self.height, self.width, side);
        (0..grid.len())
            .map(|i| {
                let r = grid.rect(i);
                let mut s = 0.0f64;
                for y in r.y0..r.y1 {
                    for x in r.x0..r.x1 {
                        s += self.get(y, x) as f64;
                    }
                }
                s
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Rect {
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
}

impl Rect {
    fn paint(self, mask: &mut BinaryMask) {
        for y in self.y0..self.y1 {
            for x in self.x0..self.x1 {
                mask.set(y, x, true);
            }
        }
    }
}

/// Tiling of an image into square superpixels; edge tiles may be smaller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuperpixelGrid {
    pub height: usize,
    pub width: usize,
    pub side: usize,
}

impl SuperpixelGrid {
    pub fn new(height: usize, width: usize, side: usize) -> Self {
        SuperpixelGrid {
            height,
            width,
            side,
        }
    }

    pub fn rows(&self) -> usize {
        self.height.div_ceil(self.side)
    }

    pub fn cols(&self) -> usize {
        self.width.div_ceil(self.side)
    }

    pub fn len(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn rect(&self, i: usize) -> Rect {
        let (r, c) = (i / self.cols(), i % self.cols());
        Rect {
            y0: r * self.side,
            y1: ((r + 1) * self.side).min(self.height),
            x0: c * self.side,
            x1: ((c + 1) * self.side).min(self.width),
        }
    }

    /// Pixel mask covering the given superpixels.
    pub fn mask(&self, tiles: impl IntoIterator<Item = usize>) -> BinaryMask {
        let mut m = BinaryMask::zeros(self.height, self.width);
        for t in tiles {
            self.rect(t).paint(&mut m);
        }
        m
    }
}

/// Top-1 class and its probability under `engine` with `mask` kept.
fn evaluate(
    model: &Model,
    input: &Tensor,
    mask: &BinaryMask,
    engine: Engine,
    ad: &AdConfig,
) -> Result<(usize, f32)> {
    let p = engine.probabilities(model, input, mask, ad)?;
    let k = p.argmax();
    Ok((k, p.data()[k]))
}

/// The plain prediction: class and confidence `c₀`.
pub fn original_prediction(model: &Model, input: &Tensor) -> Result<(usize, f32)> {
    let p = model.probabilities(model.forward(input)?);
    let k = p.argmax();
    Ok((k, p.data()[k]))
}

struct LandscapeSearch<'a> {
    model: &'a Model,
    input: &'a Tensor,
    engine: Engine,
    cfg: &'a ExplainConfig,
    target: usize,
    landscape: SaliencyLandscape,
}

impl LandscapeSearch<'_> {
    fn keeps_class(&self, mask: &BinaryMask) -> Result<bool> {
        let p = self
            .engine
            .probabilities(self.model, self.input, mask, &self.cfg.ad)?;
        Ok(p.argmax() == self.target)
    }

    /// Split point of `[lo, hi)` near its middle, jittered by up to a quarter
    /// of the span while leaving both halves at least `min` long.
    fn split(lo: usize, hi: usize, min: usize, rng: &mut impl Rng) -> usize {
        let span = hi - lo;
        let mid = lo + span / 2;
        let jitter = span / 4;
        let (a, b) = (
            (lo + min).max(mid.saturating_sub(jitter)),
            (hi - min).min(mid + jitter),
        );
        if a >= b {
            mid.clamp(lo + min, hi - min)
        } else {
            rng.gen_range(a..=b)
        }
    }

    fn visit(&mut self, region: Rect, context: &BinaryMask, rng: &mut impl Rng) -> Result<()> {
        let min = self.cfg.min_cell_side;
        if region.y1 - region.y0 < 2 * min || region.x1 - region.x0 < 2 * min {
            return Ok(());
        }
        let sy = Self::split(region.y0, region.y1, min, rng);
        let sx = Self::split(region.x0, region.x1, min, rng);
        let quads = [
            Rect {
                y0: region.y0,
                y1: sy,
                x0: region.x0,
                x1: sx,
            },
            Rect {
                y0: region.y0,
                y1: sy,
                x0: sx,
                x1: region.x1,
            },
            Rect {
                y0: sy,
                y1: region.y1,
                x0: region.x0,
                x1: sx,
            },
            Rect {
                y0: sy,
                y1: region.y1,
                x0: sx,
                x1: region.x1,
            },
        ];
        let with = |subset: usize| {
            let mut m = context.clone();
            for (q, r) in quads.iter().enumerate() {
                if subset & (1 << q) != 0 {
                    r.paint(&mut m);
                }
            }
            m
        };

        let mut passes = [false; 16];
        for (subset, pass) in passes.iter_mut().enumerate() {
            *pass = self.keeps_class(&with(subset))?;
        }
        // Context alone already decides: nothing here is responsible.
        if passes[0] {
            return Ok(());
        }
        let minimal: Vec<usize> = (1..16usize)
            .filter(|&s| passes[s] && (1..s).all(|t| t & s != t || !passes[t]))
            .collect();
        for &s in &minimal {
            let share = 1.0 / s.count_ones() as f32;
            for (q, r) in quads.iter().enumerate() {
                if s & (1 << q) != 0 {
                    self.landscape.add_rect(*r, share);
                }
            }
        }
        for (q, r) in quads.iter().enumerate() {
            if let Some(&s) = minimal.iter().find(|&&s| s & (1 << q) != 0) {
                let ctx = with(s & !(1 << q));
                self.visit(*r, &ctx, rng)?;
            }
        }
        Ok(())
    }
}

/// Responsibility landscape for the model's top-1 class on `input`.
/// Deterministic for a fixed `seed`.
pub fn build_landscape(
    model: &Model,
    input: &Tensor,
    engine: Engine,
    cfg: &ExplainConfig,
    seed: u64,
) -> Result<SaliencyLandscape> {
    cfg.validate()?;
    let (target, _) = original_prediction(model, input)?;
    let [_, h, w] = model.graph().input_shape();
    let mut search = LandscapeSearch {
        model,
        input,
        engine,
        cfg,
        target,
        landscape: SaliencyLandscape::zeros(h, w),
    };
    let mut rng = rng(seed);
    let whole = Rect {
        y0: 0,
        y1: h,
        x0: 0,
        x1: w,
    };
    let empty = BinaryMask::zeros(h, w);
    for _ in 0..cfg.iterations {
        search.visit(whole, &empty, &mut rng)?;
    }
    Ok(search.landscape)
}

/// A pixel set that keeps the model's decision, with the measurements that
/// justify it.
#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    /// `1` for pixels in the explanation.
    pub pixel_set: BinaryMask,
    /// Probability of `class` on the input restricted to `pixel_set`.
    pub confidence: f32,
    pub gamma: f32,
    pub size_fraction: f32,
    pub engine: Engine,
    pub seed: u64,
    pub class: usize,
    /// `c₀`, the plain confidence on the full input.
    pub original_confidence: f32,
    /// Whether hiding `pixel_set` flips the decision (class change or
    /// confidence below `gamma · c₀`). Only the full-image fallback can lack it.
    pub counterfactual: bool,
}

/// JSON sidecar written next to an explanation's PGM mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub engine: Engine,
    pub gamma: f32,
    pub confidence: f32,
    pub size_fraction: f32,
    pub seed: u64,
}

impl Explanation {
    pub fn record(&self) -> ExplanationRecord {
        ExplanationRecord {
            engine: self.engine,
            gamma: self.gamma,
            confidence: self.confidence,
            size_fraction: self.size_fraction,
            seed: self.seed,
        }
    }

    /// Writes `<stem>.pgm` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.pixel_set.write_pgm(&dir.join(format!("{stem}.pgm")))?;
        let json = dir.join(format!("{stem}.json"));
        let mut text = serde_json::to_string_pretty(&self.record())?;
        text.push('\n');
        std::fs::write(&json, text).map_err(|e| Error::io(&json, e))
    }
}

/// Outcome of re-running the explanation conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verification {
    /// Restricted input keeps the class at confidence `≥ γ · c₀`.
    pub sufficient: bool,
    /// Hiding the set changes the class or drops confidence below `γ · c₀`.
    pub counterfactual: bool,
    pub confidence: f32,
}

impl Verification {
    pub fn holds(&self) -> bool {
        self.sufficient && self.counterfactual
    }
}

/// Checks both conditions for an arbitrary pixel set by running the engine.
pub fn check_pixel_set(
    model: &Model,
    input: &Tensor,
    pixels: &BinaryMask,
    engine: Engine,
    gamma: f32,
    ad: &AdConfig,
) -> Result<Verification> {
    let (class, c0) = original_prediction(model, input)?;
    let floor = gamma * c0;
    let kept = engine.probabilities(model, input, pixels, ad)?;
    let confidence = kept.data()[class];
    let hidden = engine.probabilities(model, input, &pixels.complement(), ad)?;
    Ok(Verification {
        sufficient: kept.argmax() == class && confidence >= floor,
        counterfactual: hidden.argmax() != class || hidden.data()[class] < floor,
        confidence,
    })
}

/// Re-executes an explanation under its own engine.
pub fn verify_explanation(
    model: &Model,
    input: &Tensor,
    explanation: &Explanation,
    ad: &AdConfig,
) -> Result<Verification> {
    check_pixel_set(
        model,
        input,
        &explanation.pixel_set,
        explanation.engine,
        explanation.gamma,
        ad,
    )
}

/// Probability of the explanation's class on the restricted input.
pub fn explanation_confidence(
    model: &Model,
    input: &Tensor,
    explanation: &Explanation,
    ad: &AdConfig,
) -> Result<f32> {
    let p = explanation
        .engine
        .probabilities(model, input, &explanation.pixel_set, ad)?;
    Ok(p.data()[explanation.class])
}

/// Superpixels ordered by summed responsibility, highest first; ties go to
/// the lower row-major index.
pub fn superpixel_ranking(landscape: &SaliencyLandscape, side: usize) -> Vec<usize> {
    let scores = landscape.superpixel_scores(side);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Greedy extraction at confidence threshold `gamma ∈ [0, 1]`.
///
/// Ranked superpixels are added `chunk` at a time until the restricted input
/// keeps the class at `≥ γ · c₀` and hiding the set flips the decision. One
/// backward sweep then drops, least responsible first, every chunk whose
/// removal keeps both conditions. When no prefix satisfies both, the whole
/// image is returned.
pub fn extract_explanation(
    model: &Model,
    input: &Tensor,
    landscape: &SaliencyLandscape,
    engine: Engine,
    gamma: f32,
    cfg: &ExplainConfig,
    seed: u64,
) -> Result<Explanation> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!(
            "gamma {gamma} must lie in [0, 1]"
        )));
    }
    let [_, h, w] = model.graph().input_shape();
    if landscape.dims() != (h, w) {
        return Err(Error::Mask(format!(
            "landscape is {:?}, input is {h}x{w}",
            landscape.dims()
        )));
    }
    let (class, c0) = original_prediction(model, input)?;
    let floor = gamma * c0;
    let grid = SuperpixelGrid::new(h, w, cfg.superpixel);
    let chunks: Vec<Vec<usize>> = superpixel_ranking(landscape, cfg.superpixel)
        .chunks(cfg.chunk)
        .map(<[usize]>::to_vec)
        .collect();

    let selection = |active: &[bool]| {
        grid.mask(
            chunks
                .iter()
                .zip(active)
                .filter(|(_, &a)| a)
                .flat_map(|(c, _)| c.iter().copied()),
        )
    };
    // Confidence of the kept set when both conditions hold.
    let holds = |active: &[bool]| -> Result<Option<f32>> {
        let mask = selection(active);
        let (k, conf) = evaluate(model, input, &mask, engine, &cfg.ad)?;
        if k != class || conf < floor {
            return Ok(None);
        }
        let hidden = engine.probabilities(model, input, &mask.complement(), &cfg.ad)?;
        let flips = hidden.argmax() != class || hidden.data()[class] < floor;
        Ok(flips.then_some(conf))
    };

    let mut active = vec![false; chunks.len()];
    let mut found = None;
    for k in 0..chunks.len() {
        active[k] = true;
        if let Some(conf) = holds(&active)? {
            found = Some((k, conf));
            break;
        }
    }

    let Some((last, mut confidence)) = found else {
        let full = BinaryMask::ones(h, w);
        let p = engine.probabilities(model, input, &full, &cfg.ad)?;
        return Ok(Explanation {
            pixel_set: full,
            confidence: p.data()[class],
            gamma,
            size_fraction: 1.0,
            engine,
            seed,
            class,
            original_confidence: c0,
            counterfactual: false,
        });
    };

    for k in (0..=last).rev() {
        if active.iter().filter(|&&a| a).count() == 1 {
            break;
        }
        active[k] = false;
        match holds(&active)? {
            Some(conf) => confidence = conf,
            None => active[k] = true,
        }
    }

    let pixel_set = selection(&active);
    let size_fraction = pixel_set.count_ones() as f32 / (h * w) as f32;
    Ok(Explanation {
        pixel_set,
        confidence,
        gamma,
        size_fraction,
        engine,
        seed,
        class,
        original_confidence: c0,
        counterfactual: true,
    })
}

/// Landscape plus extraction with the same seed.
pub fn explain(
    model: &Model,
    input: &Tensor,
    engine: Engine,
    gamma: f32,
    cfg: &ExplainConfig,
    seed: u64,
) -> Result<Explanation> {
    let landscape = build_landscape(model, input, engine, cfg, seed)?;
    extract_explanation(model, input, &landscape, engine, gamma, cfg, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{self, SquareSpec};

    #[test]
    fn grid_tiles_cover_image() {
        let g = SuperpixelGrid::new(5, 4, 2);
        assert_eq!((g.rows(), g.cols()), (3, 2));
        assert!(g.mask(0..g.len()).is_all_ones());
        assert_eq!(g.mask([5]).count_ones(), 2);
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        let mut l = SaliencyLandscape::zeros(4, 4);
        l.add_rect(
            Rect {
                y0: 2,
                y1: 4,
                x0: 0,
                x1: 2,
            },
            1.0,
        );
        assert_eq!(superpixel_ranking(&l, 2), vec![2, 0, 1, 3]);
    }

    #[test]
    fn constant_model_has_flat_landscape() {
        let m = synthetic::constant_model();
        let x = Tensor::full(synthetic::SQUARE_INPUT.to_vec(), 0.5).unwrap();
        let l = build_landscape(&m, &x, Engine::Ad, &ExplainConfig::default(), 3).unwrap();
        assert!(l.values().iter().all(|&v| v == l.values()[0]));
    }

    #[test]
    fn full_image_at_gamma_one_on_constant_model() {
        let m = synthetic::constant_model();
        let x = Tensor::full(synthetic::SQUARE_INPUT.to_vec(), 0.5).unwrap();
        let e = explain(&m, &x, Engine::Ad, 1.0, &ExplainConfig::default(), 1).unwrap();
        assert!(e.pixel_set.is_all_ones());
        assert_eq!(e.confidence, e.original_confidence);
        assert!(!e.counterfactual);
    }

    #[test]
    fn detector_explanations_verify() {
        let m = synthetic::color_square_detector();
        let cfg = ExplainConfig::default();
        for color in 0..3 {
            let x = synthetic::square_image(&SquareSpec::canonical(color));
            let l = build_landscape(&m, &x, Engine::Ad, &cfg, 9).unwrap();
            for gamma in [0.0, 0.5, 0.9] {
                let e = extract_explanation(&m, &x, &l, Engine::Ad, gamma, &cfg, 9).unwrap();
                let v = verify_explanation(&m, &x, &e, &cfg.ad).unwrap();
                assert!(v.holds(), "color {color} gamma {gamma}: {v:?}");
                assert_eq!(v.confidence, e.confidence);
                assert!(e.size_fraction < 0.5);
            }
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let m = synthetic::color_square_detector();
        let x = synthetic::square_image(&SquareSpec::canonical(1));
        let cfg = ExplainConfig::default();
        let a = explain(&m, &x, Engine::Ad, 0.7, &cfg, 4).unwrap();
        let b = explain(&m, &x, Engine::Ad, 0.7, &cfg, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gamma_out_of_range() {
        let m = synthetic::constant_model();
        let x = Tensor::full(synthetic::SQUARE_INPUT.to_vec(), 0.5).unwrap();
        let l = SaliencyLandscape::zeros(16, 16);
        assert!(
            extract_explanation(&m, &x, &l, Engine::Ad, 1.5, &ExplainConfig::default(), 0).is_err()
        );
    }

    #[test]
    fn sidecar_schema() {
        let dir = tempfile::tempdir().unwrap();
        let m = synthetic::constant_model();
        let x = Tensor::full(synthetic::SQUARE_INPUT.to_vec(), 0.5).unwrap();
        let e = explain(
            &m,
            &x,
            Engine::Occlusion(crate::OcclusionPolicy::Zero),
            1.0,
            &ExplainConfig::default(),
            2,
        )
        .unwrap();
        e.write(dir.path(), "img").unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("img.json")).unwrap())
                .unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 5);
        assert_eq!(v["engine"], "zero");
        assert_eq!(
            BinaryMask::read(&dir.path().join("img.pgm")).unwrap(),
            e.pixel_set
        );
    }
}
