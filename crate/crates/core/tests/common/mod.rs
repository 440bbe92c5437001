//! Reference implementations shared by the integration suites.
#![allow(dead_code)]

use convad::attribution::{
    flatten_mask, position_attribution_concat, position_attribution_conv,
    position_attribution_pool, position_attribution_upsample,
};
use convad::engine::{propagate_masks, AdConfig};
use convad::explain::{
    build_landscape, check_pixel_set, extract_explanation, original_prediction, verify_explanation,
    ExplainConfig, SuperpixelGrid,
};
use convad::synthetic::Architecture;
use convad::{BinaryMask, ConvGeometry, Tensor};
use convad::{Engine, Model};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Input cells feeding output cell `(a, b)`: every in-bounds `(k, l)` that
/// some kernel tap lands on. Built by scanning the whole input grid rather
/// than walking the window.
pub fn window_members(
    h: usize,
    w: usize,
    g: &ConvGeometry,
    a: usize,
    b: usize,
) -> Vec<(usize, usize)> {
    let hits = |out: usize, inp: usize, stride: usize, dil: usize, pad: usize, k: usize| {
        (0..k).any(|t| out * stride + t * dil == inp + pad)
    };
    let mut cells = Vec::new();
    for k in 0..h {
        for l in 0..w {
            if hits(a, k, g.stride_h, g.dilation_h, g.pad_h, g.kernel_h)
                && hits(b, l, g.stride_w, g.dilation_w, g.pad_w, g.kernel_w)
            {
                cells.push((k, l));
            }
        }
    }
    cells
}

/// Exact unmasked fraction per output cell as `(kept, valid)` counts.
pub fn phi_counts(
    mask: &BinaryMask,
    g: &ConvGeometry,
    oh: usize,
    ow: usize,
) -> Vec<(usize, usize)> {
    let (h, w) = mask.dims();
    let mut out = Vec::with_capacity(oh * ow);
    for a in 0..oh {
        for b in 0..ow {
            let cells = window_members(h, w, g, a, b);
            let kept = cells.iter().filter(|&&(k, l)| mask.get(k, l)).count();
            out.push((kept, cells.len()));
        }
    }
    out
}

/// Compares an attribution grid with the counts; an empty window counts as 1.
pub fn matches_counts(phi: &Tensor, counts: &[(usize, usize)], tol: f64) -> bool {
    phi.len() == counts.len()
        && phi.data().iter().zip(counts).all(|(&v, &(k, n))| {
            let want = if n == 0 { 1.0 } else { k as f64 / n as f64 };
            (v as f64 - want).abs() <= tol && (0.0..=1.0).contains(&v)
        })
}

pub fn random_mask(h: usize, w: usize, rng: &mut ChaCha8Rng) -> BinaryMask {
    let density: f64 = rng.gen();
    BinaryMask::from_fn(h, w, |_, _| rng.gen_bool(density))
}

pub fn random_geometry(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ConvGeometry {
    loop {
        let mut g = ConvGeometry::conv(1, 1, rng.gen_range(1..5))
            .with_stride(rng.gen_range(1..4))
            .with_padding(rng.gen_range(0..3))
            .with_dilation(rng.gen_range(1..3));
        g.kernel_w = rng.gen_range(1..5);
        g.pad_w = rng.gen_range(0..3);
        if g.output_size(h, w).is_ok() {
            return g;
        }
    }
}

pub fn random_pool_window(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ConvGeometry {
    loop {
        let k = rng.gen_range(1..5);
        let g = ConvGeometry::window(k, rng.gen_range(1..4)).with_padding(rng.gen_range(0..=k / 2));
        if g.output_size(h, w).is_ok() {
            return g;
        }
    }
}

/// Result of one randomized check: number of cases and failures.
#[derive(Debug, Default, Clone, Copy)]
pub struct Tally {
    pub cases: usize,
    pub failures: usize,
}

impl Tally {
    pub fn record(&mut self, ok: bool) {
        self.cases += 1;
        self.failures += (!ok) as usize;
    }
}

/// 1000 randomized cases for each attribution operator against the oracles.
pub fn phi_oracle_suite(rng: &mut ChaCha8Rng, cases: usize) -> [(&'static str, Tally); 5] {
    let mut conv = Tally::default();
    let mut pool = Tally::default();
    let mut up = Tally::default();
    let mut concat = Tally::default();
    let mut flat = Tally::default();
    for _ in 0..cases {
        let (h, w) = (rng.gen_range(1..12), rng.gen_range(1..12));
        let m = random_mask(h, w, rng);

        let g = random_geometry(rng, h, w);
        let (oh, ow) = g.output_size(h, w).unwrap();
        let phi = position_attribution_conv(&m, &g).unwrap();
        conv.record(
            phi.shape() == [oh, ow] && matches_counts(&phi, &phi_counts(&m, &g, oh, ow), 1e-6),
        );

        let pw = random_pool_window(rng, h, w);
        let (oh, ow) = pw.output_size(h, w).unwrap();
        let counts = phi_counts(&m, &pw, oh, ow);
        let ok = match position_attribution_pool(&m, &pw) {
            Ok(phi) => phi.shape() == [oh, ow] && matches_counts(&phi, &counts, 1e-6),
            Err(_) => false,
        };
        pool.record(ok);

        let f = rng.gen_range(1..5);
        let phi = position_attribution_upsample(&m, f).unwrap();
        let ok = phi.shape() == [h * f, w * f]
            && (0..h * f).all(|a| {
                (0..w * f).all(|b| phi.data()[a * w * f + b] == m.get(a / f, b / f) as u8 as f32)
            });
        up.record(ok);

        let other = random_mask(h, w, rng);
        let include = rng.gen_bool(0.5);
        let joined = position_attribution_concat(&m, &other, include).unwrap();
        let ok = (0..h).all(|y| {
            (0..w).all(|x| {
                joined.get(y, x)
                    == if include {
                        m.get(y, x) || other.get(y, x)
                    } else {
                        m.get(y, x)
                    }
            })
        });
        concat.record(ok);

        let c = rng.gen_range(1..4);
        let fm = flatten_mask(&m, c);
        let ok = fm.dims() == (1, c * h * w)
            && (0..c * h * w).all(|i| fm.get(0, i) == m.get((i % (h * w)) / w, i % w));
        flat.record(ok);
    }
    [
        ("conv", conv),
        ("pool", pool),
        ("upsample", up),
        ("concat", concat),
        ("flatten", flat),
    ]
}

/// Propagates nested masks `m1 ⊆ m2` through random architectures and
/// checks that every updated mask stays binary and nested.
pub fn monotonicity_suite(rng: &mut ChaCha8Rng, traces: usize) -> Tally {
    let models: Vec<_> = Architecture::ALL
        .iter()
        .map(|a| a.build(rng.gen()))
        .collect();
    let [_, h, w] = Architecture::INPUT;
    let mut t = Tally::default();
    for i in 0..traces {
        let model = &models[i % models.len()];
        let m2 = random_mask(h, w, rng);
        let m1 = m2.intersection(&random_mask(h, w, rng)).unwrap();
        let cfg = AdConfig::new(rng.gen_range(0.0..0.99)).unwrap();
        let p1 = propagate_masks(model, &m1, &cfg).unwrap();
        let p2 = propagate_masks(model, &m2, &cfg).unwrap();
        let ok = p1.iter().zip(&p2).all(|(a, b)| match (a, b) {
            (Some(a), Some(b)) => {
                a.is_subset_of(b) && a.data().iter().chain(b.data()).all(|&v| v <= 1)
            }
            (None, None) => true,
            _ => false,
        });
        t.record(ok);
    }
    t
}

/// Probability of the original class and the top-1 class for every subset
/// of a superpixel grid, indexed by the subset's bitmask.
fn subset_table(m: &Model, x: &Tensor, grid: &SuperpixelGrid, ad: &AdConfig) -> Vec<(usize, f32)> {
    let class = original_prediction(m, x).unwrap().0;
    (0..1usize << grid.len())
        .map(|s| {
            let mask = grid.mask((0..grid.len()).filter(|&i| s & (1 << i) != 0));
            let p = Engine::Ad.probabilities(m, x, &mask, ad).unwrap();
            (p.argmax(), p.data()[class])
        })
        .collect()
}

/// Smallest subset satisfying both conditions, read from the table:
/// sufficiency from `s`, the counterfactual from its complement.
fn exhaustive_minimum(table: &[(usize, f32)], class: usize, floor: f32) -> Option<usize> {
    let all = table.len() - 1;
    (0..table.len())
        .filter(|&s| {
            let (k, c) = table[s];
            let (hk, hc) = table[all & !s];
            k == class && c >= floor && (hk != class || hc < floor)
        })
        .min_by_key(|&s| (s.count_ones(), s))
}

#[derive(Debug, Clone, Copy)]
pub struct BruteForceCase {
    pub gamma: f32,
    /// Superpixels in the greedy explanation.
    pub greedy: usize,
    pub greedy_holds: bool,
    /// Superpixels in the smallest explaining subset.
    pub minimum: usize,
    pub checker_accepts_minimum: bool,
}

/// Compares the greedy AD explanation with every subset of the 4×4 grid of
/// 4-pixel superpixels on a 16×16 input.
pub fn brute_force_case(m: &Model, x: &Tensor, gammas: &[f32]) -> Vec<BruteForceCase> {
    let cfg = ExplainConfig {
        superpixel: 4,
        ..ExplainConfig::default()
    };
    let [_, h, w] = m.graph().input_shape();
    let grid = SuperpixelGrid::new(h, w, 4);
    assert_eq!(grid.len(), 16, "brute force needs a 16x16 input");
    let (class, c0) = original_prediction(m, x).unwrap();
    let table = subset_table(m, x, &grid, &cfg.ad);
    let landscape = build_landscape(m, x, Engine::Ad, &cfg, 0).unwrap();
    gammas
        .iter()
        .map(|&gamma| {
            let best = exhaustive_minimum(&table, class, gamma * c0)
                .expect("the full grid always qualifies");
            let tiles = (0..16).filter(|&i| best & (1 << i) != 0);
            let v = check_pixel_set(m, x, &grid.mask(tiles), Engine::Ad, gamma, &cfg.ad).unwrap();
            let e = extract_explanation(m, x, &landscape, Engine::Ad, gamma, &cfg, 0).unwrap();
            BruteForceCase {
                gamma,
                greedy: e.pixel_set.count_ones() / 16,
                greedy_holds: verify_explanation(m, x, &e, &cfg.ad).unwrap().holds(),
                minimum: best.count_ones() as usize,
                checker_accepts_minimum: v.holds(),
            }
        })
        .collect()
}
