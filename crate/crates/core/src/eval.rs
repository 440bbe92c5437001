//! Robustness evaluation of explanations.
//!
//! An explanation is *planted* onto a background: its pixels come from the
//! original image, everything else from the background. Its robustness ρ is
//! the fraction of backgrounds on which the plain model still predicts the
//! original class. Two background families are used: solid colours, and
//! images of other classes drawn from a pool.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;

use crate::dataset::LabeledImage;
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::explain::{build_landscape, extract_explanation, ExplainConfig, Explanation};
use crate::mask::BinaryMask;
use crate::model::{Model, Preprocessing};
use crate::synthetic::rng;
use crate::tensor::Tensor;

pub const DEFAULT_BACKGROUNDS: usize = 100;
pub const REPORT_HEADER: &str = "engine,gamma,rho_solid,rho_iid,mean_size,mean_confidence,n";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackgroundKind {
    SolidColor,
    Iid,
}

/// Backgrounds already in model input space.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundSet {
    pub kind: BackgroundKind,
    pub items: Vec<Tensor>,
    pub seed: u64,
}

/// `count` constant images whose RGB colour is uniform over `[0, 1]³`, in
/// pixel space (before preprocessing).
pub fn solid_colors(seed: u64, count: usize, shape: [usize; 3]) -> Vec<Tensor> {
    let mut r = rng(seed);
    let [c, h, w] = shape;
    (0..count)
        .map(|_| {
            let color: Vec<f32> = (0..c).map(|_| r.gen::<f32>()).collect();
            Tensor::from_fn(shape.to_vec(), |i| color[i / (h * w)]).expect("non-empty shape")
        })
        .collect()
}

/// Solid-colour backgrounds, normalised like model inputs.
pub fn solid_backgrounds(
    seed: u64,
    count: usize,
    shape: [usize; 3],
    preprocessing: Option<&Preprocessing>,
) -> Result<BackgroundSet> {
    let items = solid_colors(seed, count, shape)
        .into_iter()
        .map(|t| match preprocessing {
            Some(p) => p.apply(&t),
            None => Ok(t),
        })
        .collect::<Result<_>>()?;
    Ok(BackgroundSet {
        kind: BackgroundKind::SolidColor,
        items,
        seed,
    })
}

/// `count` pool images sampled without replacement, skipping every image
/// labelled `exclude`.
pub fn iid_backgrounds(
    seed: u64,
    count: usize,
    pool: &[LabeledImage],
    exclude: usize,
) -> Result<BackgroundSet> {
    let eligible: Vec<&LabeledImage> = pool.iter().filter(|p| p.label != exclude).collect();
    if eligible.len() < count {
        return Err(Error::Dataset(format!(
            "background pool has {} images outside class {exclude}, {count} needed",
            eligible.len()
        )));
    }
    let mut r = rng(seed);
    let items = sample(&mut r, eligible.len(), count)
        .into_iter()
        .map(|i| eligible[i].image.clone())
        .collect();
    Ok(BackgroundSet {
        kind: BackgroundKind::Iid,
        items,
        seed,
    })
}

/// Composite with the explanation's pixels from `original` and the rest
/// from `background`.
pub fn plant(pixels: &BinaryMask, original: &Tensor, background: &Tensor) -> Result<Tensor> {
    if original.shape() != background.shape() {
        return Err(Error::InvalidTensor(format!(
            "original {:?} and background {:?} differ",
            original.shape(),
            background.shape()
        )));
    }
    let (_, h, w) = original.dims3()?;
    if pixels.dims() != (h, w) {
        return Err(Error::Mask(format!(
            "mask is {:?}, image is {h}x{w}",
            pixels.dims()
        )));
    }
    let mut out = background.clone();
    let m = pixels.data();
    for (plane, src) in out
        .data_mut()
        .chunks_exact_mut(h * w)
        .zip(original.data().chunks_exact(h * w))
    {
        for ((o, &s), &keep) in plane.iter_mut().zip(src).zip(m) {
            if keep != 0 {
                *o = s;
            }
        }
    }
    Ok(out)
}

/// ρ together with the plain prediction on every composite, in background
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct Robustness {
    pub rho: f64,
    pub predictions: Vec<usize>,
}

impl Robustness {
    /// ρ recounted from the stored predictions.
    pub fn recount(predictions: &[usize], class: usize) -> f64 {
        predictions.iter().filter(|&&p| p == class).count() as f64 / predictions.len() as f64
    }
}

/// Fraction of backgrounds whose composite the plain forward pass assigns
/// to `class`.
pub fn rho_robustness(
    model: &Model,
    pixels: &BinaryMask,
    class: usize,
    original: &Tensor,
    backgrounds: &BackgroundSet,
) -> Result<Robustness> {
    if backgrounds.items.is_empty() {
        return Err(Error::InvalidArgument("background set is empty".into()));
    }
    let predictions = backgrounds
        .items
        .iter()
        .map(|b| Ok(model.forward(&plant(pixels, original, b)?)?.argmax()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Robustness {
        rho: Robustness::recount(&predictions, class),
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub engines: Vec<Engine>,
    pub gammas: Vec<f32>,
    pub backgrounds: usize,
    pub explain: ExplainConfig,
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    pub jobs: usize,
}

impl SuiteConfig {
    pub fn new(engines: Vec<Engine>, gammas: Vec<f32>, seed: u64) -> Self {
        SuiteConfig {
            engines,
            gammas,
            backgrounds: DEFAULT_BACKGROUNDS,
            explain: ExplainConfig::default(),
            seed,
            jobs: 1,
        }
    }
}

/// Measurements for one (image, engine, γ).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub image: String,
    pub engine: Engine,
    pub gamma: f32,
    pub explanation: Explanation,
    pub solid: Robustness,
    pub iid: Robustness,
}

/// Aggregate over all images for one (engine, γ).
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub engine: Engine,
    pub gamma: f32,
    pub rho_solid: f64,
    pub rho_iid: f64,
    pub mean_size: f64,
    pub mean_confidence: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub samples: Vec<SampleResult>,
    pub solid_seed: u64,
}

impl EvalReport {
    pub fn row(&self, engine: Engine, gamma: f32) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.engine == engine && r.gamma == gamma)
    }

    /// `report.csv` contents. Fixed precision keeps reruns byte-identical.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{:.6},{:.6},{:.6},{:.6},{}",
                r.engine, r.gamma, r.rho_solid, r.rho_iid, r.mean_size, r.mean_confidence, r.n
            )
            .expect("write to string");
        }
        s
    }

    /// Per-sample table, including every composite's predicted class so ρ
    /// can be recounted offline.
    pub fn samples_csv(&self) -> String {
        let mut s = String::from("image,engine,gamma,class,size,confidence,rho_solid,rho_iid,solid_predictions,iid_predictions\n");
        let join = |p: &[usize]| p.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        for r in &self.samples {
            writeln!(
                s,
                "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{},{}",
                r.image,
                r.engine,
                r.gamma,
                r.explanation.class,
                r.explanation.size_fraction,
                r.explanation.confidence,
                r.solid.rho,
                r.iid.rho,
                join(&r.solid.predictions),
                join(&r.iid.predictions)
            )
            .expect("write to string");
        }
        s
    }
}

fn evaluate_image(
    model: &Model,
    index: usize,
    item: &LabeledImage,
    solid: &BackgroundSet,
    pool: &[LabeledImage],
    cfg: &SuiteConfig,
) -> Result<Vec<SampleResult>> {
    let predicted = model.forward(&item.image)?.argmax();
    if predicted != item.label {
        log::warn!(
            "{}: labelled {} but classified as {}",
            item.name,
            model.labels()[item.label],
            model.labels()[predicted]
        );
    }
    let image_seed = cfg.seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let iid = iid_backgrounds(image_seed, cfg.backgrounds, pool, predicted)?;
    let mut out = Vec::with_capacity(cfg.engines.len() * cfg.gammas.len());
    for &engine in &cfg.engines {
        let landscape = build_landscape(model, &item.image, engine, &cfg.explain, image_seed)?;
        for &gamma in &cfg.gammas {
            let e = extract_explanation(
                model,
                &item.image,
                &landscape,
                engine,
                gamma,
                &cfg.explain,
                image_seed,
            )?;
            let solid_rho = rho_robustness(model, &e.pixel_set, e.class, &item.image, solid)?;
            let iid_rho = rho_robustness(model, &e.pixel_set, e.class, &item.image, &iid)?;
            log::debug!(
                "{} {engine} γ={gamma}: size {:.3}",
                item.name,
                e.size_fraction
            );
            out.push(SampleResult {
                image: item.name.clone(),
                engine,
                gamma,
                explanation: e,
                solid: solid_rho,
                iid: iid_rho,
            });
        }
    }
    Ok(out)
}

/// Explains every image with every engine at every γ and measures ρ against
/// solid-colour and pool backgrounds. IID backgrounds exclude the class the
/// model assigns to the image.
pub fn run_suite(
    model: &Model,
    dataset: &[LabeledImage],
    pool: &[LabeledImage],
    cfg: &SuiteConfig,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::Dataset("empty dataset".into()));
    }
    if cfg.engines.is_empty() || cfg.gammas.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one engine and one gamma".into(),
        ));
    }
    if let Some(g) = cfg.gammas.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(Error::InvalidArgument(format!(
            "gamma {g} must lie in [0, 1]"
        )));
    }
    let solid = solid_backgrounds(
        cfg.seed,
        cfg.backgrounds,
        model.graph().input_shape(),
        model.preprocessing(),
    )?;

    let jobs = cfg.jobs.clamp(1, dataset.len());
    let per_image: Vec<Result<Vec<SampleResult>>> = if jobs == 1 {
        dataset
            .iter()
            .enumerate()
            .map(|(i, item)| evaluate_image(model, i, item, &solid, pool, cfg))
            .collect()
    } else {
        let mut slots: Vec<Option<Result<Vec<SampleResult>>>> =
            (0..dataset.len()).map(|_| None).collect();
        std::thread::scope(|s| {
            for (w, chunk) in slots.chunks_mut(dataset.len().div_ceil(jobs)).enumerate() {
                let start = w * dataset.len().div_ceil(jobs);
                let solid = &solid;
                s.spawn(move || {
                    for (k, slot) in chunk.iter_mut().enumerate() {
                        let i = start + k;
                        *slot = Some(evaluate_image(model, i, &dataset[i], solid, pool, cfg));
                    }
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.expect("every slot filled"))
            .collect()
    };
    let samples: Vec<SampleResult> = per_image
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut rows = Vec::new();
    for &engine in &cfg.engines {
        for &gamma in &cfg.gammas {
            let group: Vec<&SampleResult> = samples
                .iter()
                .filter(|s| s.engine == engine && s.gamma == gamma)
                .collect();
            let n = group.len();
            let mean = |f: &dyn Fn(&SampleResult) -> f64| {
                group.iter().map(|s| f(s)).sum::<f64>() / n as f64
            };
            rows.push(ReportRow {
                engine,
                gamma,
                rho_solid: mean(&|s| s.solid.rho),
                rho_iid: mean(&|s| s.iid.rho),
                mean_size: mean(&|s| s.explanation.size_fraction as f64),
                mean_confidence: mean(&|s| s.explanation.confidence as f64),
                n,
            });
        }
    }
    Ok(EvalReport {
        rows,
        samples,
        solid_seed: cfg.seed,
    })
}

/// Writes `report.csv`, `samples.csv` and `explanations/<image>_<engine>_<gamma>.{pgm,json}`.
pub fn write_report(report: &EvalReport, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (name, text) in [
        ("report.csv", report.to_csv()),
        ("samples.csv", report.samples_csv()),
    ] {
        let p = out.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    let dir = out.join("explanations");
    for s in &report.samples {
        s.explanation
            .write(&dir, &format!("{}_{}_{}", s.image, s.engine, s.gamma))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    #[test]
    fn solid_colors_are_reproducible() {
        let a = solid_colors(7, 3, [3, 2, 2]);
        assert_eq!(a, solid_colors(7, 3, [3, 2, 2]));
        assert_eq!(a.len(), 3);
        for t in &a {
            for plane in t.data().chunks(4) {
                assert!(plane.iter().all(|&v| v == plane[0]));
            }
        }
    }

    #[test]
    fn solid_color_mean_is_centred() {
        let items = solid_colors(11, 1000, [3, 1, 1]);
        for ch in 0..3 {
            let mean = items.iter().map(|t| t.data()[ch] as f64).sum::<f64>() / 1000.0;
            assert!((mean - 0.5).abs() < 0.05, "channel {ch}: {mean}");
        }
    }

    #[test]
    fn pool_too_small() {
        let pool = synthetic::square_dataset(50, 1);
        assert!(iid_backgrounds(0, 100, &pool, 0).is_err());
        let set = iid_backgrounds(0, 30, &pool, 0).unwrap();
        assert_eq!(set.items.len(), 30);
    }

    #[test]
    fn iid_excludes_class() {
        let pool = synthetic::square_dataset(30, 2);
        let set = iid_backgrounds(3, 20, &pool, 1).unwrap();
        for b in &set.items {
            let src = pool.iter().find(|p| p.image == *b).unwrap();
            assert_ne!(src.label, 1);
        }
    }

    #[test]
    fn plant_cases() {
        let x = Tensor::from_fn(vec![2, 2, 2], |i| i as f32).unwrap();
        let b = Tensor::full(vec![2, 2, 2], -1.0).unwrap();
        assert_eq!(plant(&BinaryMask::ones(2, 2), &x, &b).unwrap(), x);
        assert_eq!(plant(&BinaryMask::zeros(2, 2), &x, &b).unwrap(), b);
        let m = BinaryMask::from_rows(&[&[1, 0], &[0, 1]]).unwrap();
        let p = plant(&m, &x, &b).unwrap();
        assert_eq!(p.data(), &[0.0, -1.0, -1.0, 3.0, 4.0, -1.0, -1.0, 7.0]);
        assert_eq!(plant(&m, &x, &p).unwrap(), p);
        assert!(plant(&m, &x, &Tensor::zeros(vec![2, 2, 3]).unwrap()).is_err());
    }

    #[test]
    fn rho_extremes() {
        let m = synthetic::color_square_detector();
        let x = synthetic::square_image(&synthetic::SquareSpec::canonical(0));
        let solid = solid_backgrounds(1, 20, synthetic::SQUARE_INPUT, m.preprocessing()).unwrap();
        let full = rho_robustness(&m, &BinaryMask::ones(16, 16), 0, &x, &solid).unwrap();
        assert_eq!(full.rho, 1.0);
        let pool: Vec<_> = synthetic::square_dataset(30, 4)
            .into_iter()
            .filter(|p| p.label != 0)
            .collect();
        let iid = iid_backgrounds(2, 15, &pool, 0).unwrap();
        assert_eq!(
            rho_robustness(&m, &BinaryMask::zeros(16, 16), 0, &x, &iid)
                .unwrap()
                .rho,
            0.0
        );
    }

    #[test]
    fn small_suite_shape() {
        let m = synthetic::color_square_detector();
        let data = synthetic::square_dataset(5, 8);
        let pool = synthetic::square_dataset(45, 9);
        let mut cfg = SuiteConfig::new(
            vec![Engine::Ad, Engine::Occlusion(crate::OcclusionPolicy::Zero)],
            vec![0.0, 0.9],
            5,
        );
        cfg.backgrounds = 20;
        cfg.explain.iterations = 4;
        let report = run_suite(&m, &data, &pool, &cfg).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert!(report.rows.iter().all(|r| r.n == 5));
        let csv = report.to_csv();
        assert_eq!(csv.lines().next().unwrap(), REPORT_HEADER);
        assert_eq!(csv.lines().count(), 5);

        cfg.jobs = 3;
        assert_eq!(run_suite(&m, &data, &pool, &cfg).unwrap().to_csv(), csv);
    }
}
