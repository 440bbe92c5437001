//! Seeded synthetic models and images.
//!
//! * [`Architecture`] builds randomly initialised graphs covering every layer
//!   family (plain convs, pooling, upsampling, concat skips, flatten + dense).
//! * [`golden_cnn`] is a small fixed-seed classifier with a pinned output.
//! * [`color_square_detector`] is a hand-weighted classifier whose decision is
//!   transparent: it reports the colour of a saturated square, and "none"
//!   when there is not enough coloured evidence.
//! * [`square_dataset`] draws labelled images for that detector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::LabeledImage;
use crate::model::{LayerKind, LayerSpec, Model, ModelGraph, Preprocessing, WeightStore};
use crate::ops::PoolMode;
use crate::tensor::{ConvGeometry, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Incrementally builds a graph and its weights.
struct Builder<'r> {
    layers: Vec<LayerSpec>,
    weights: WeightStore,
    rng: &'r mut ChaCha8Rng,
}

impl<'r> Builder<'r> {
    fn new(rng: &'r mut ChaCha8Rng) -> Self {
        Builder {
            layers: Vec::new(),
            weights: WeightStore::new(),
            rng,
        }
    }

    fn uniform(&mut self, shape: Vec<usize>, scale: f32) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-scale..scale)).collect();
        Tensor::new(shape, data).expect("consistent shape")
    }

    fn push(&mut self, layer: LayerSpec) -> usize {
        self.layers.push(layer);
        self.layers.len() - 1
    }

    fn conv(&mut self, geom: ConvGeometry) -> usize {
        let i = self.layers.len();
        let fan_in = (geom.in_channels * geom.kernel_h * geom.kernel_w) as f32;
        let w = self.uniform(
            vec![
                geom.out_channels,
                geom.in_channels,
                geom.kernel_h,
                geom.kernel_w,
            ],
            (3.0 / fan_in).sqrt(),
        );
        let b = self.uniform(vec![geom.out_channels], 0.1);
        let (wn, bn) = (format!("l{i}.weight"), format!("l{i}.bias"));
        self.weights.insert(&wn, w).unwrap();
        self.weights.insert(&bn, b).unwrap();
        self.push(LayerSpec::conv(geom, &wn, &bn))
    }

    fn dense(&mut self, inputs: usize, outputs: usize) -> usize {
        let i = self.layers.len();
        let w = self.uniform(vec![outputs, inputs], (3.0 / inputs as f32).sqrt());
        let b = self.uniform(vec![outputs], 0.1);
        let (wn, bn) = (format!("l{i}.weight"), format!("l{i}.bias"));
        self.weights.insert(&wn, w).unwrap();
        self.weights.insert(&bn, b).unwrap();
        self.push(LayerSpec::dense(&wn, &bn))
    }

    fn batchnorm(&mut self, channels: usize) -> usize {
        let i = self.layers.len();
        let prefix = format!("l{i}");
        let mean = self.uniform(vec![channels], 0.5);
        let rng = &mut *self.rng;
        let var = Tensor::from_fn(vec![channels], |_| rng.gen_range(0.5..1.0)).unwrap();
        let gamma = self.uniform(vec![channels], 1.0).map(|v| 1.0 + 0.5 * v);
        let beta = self.uniform(vec![channels], 0.2);
        for (name, t) in [
            ("mean", mean),
            ("var", var),
            ("gamma", gamma),
            ("beta", beta),
        ] {
            self.weights.insert(format!("{prefix}.{name}"), t).unwrap();
        }
        self.push(LayerSpec::batchnorm(&prefix, 1e-5))
    }

    fn op(&mut self, kind: LayerKind) -> usize {
        self.push(LayerSpec::new(kind))
    }

    fn finish(self, input_shape: [usize; 3], labels: usize) -> Model {
        let labels = (0..labels).map(|i| format!("class{i}")).collect();
        let graph = ModelGraph::new(input_shape, labels, self.layers)
            .expect("synthetic graph is well formed");
        Model::new(graph, self.weights).expect("synthetic weights are consistent")
    }
}

/// Layer families used to exercise the AD pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    ConvOnly,
    ConvPool,
    ConvUpsample,
    ConvConcatSkip,
    ConvFlattenDense,
    /// Batchnorm, pooling, upsampling and a concat skip in one U-shaped graph.
    Mixed,
}

impl Architecture {
    pub const ALL: [Architecture; 6] = [
        Architecture::ConvOnly,
        Architecture::ConvPool,
        Architecture::ConvUpsample,
        Architecture::ConvConcatSkip,
        Architecture::ConvFlattenDense,
        Architecture::Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::ConvOnly => "conv-only",
            Architecture::ConvPool => "conv+pool",
            Architecture::ConvUpsample => "conv+upsample",
            Architecture::ConvConcatSkip => "conv+concat-skip",
            Architecture::ConvFlattenDense => "conv+flatten+dense",
            Architecture::Mixed => "pool+concat+upsample",
        }
    }

    pub const INPUT: [usize; 3] = [3, 12, 12];

    /// A randomly initialised model of this family on a 3×12×12 input.
    pub fn build(self, seed: u64) -> Model {
        let mut r = rng(seed);
        let mut b = Builder::new(&mut r);
        let c = ConvGeometry::conv;
        match self {
            Architecture::ConvOnly => {
                b.conv(c(3, 4, 3).with_padding(1));
                b.op(LayerKind::Relu);
                b.conv(c(4, 4, 3).with_stride(2));
                b.op(LayerKind::Tanh);
                b.conv(c(4, 4, 3).with_padding(2).with_dilation(2));
                b.conv(c(4, 2, 1));
            }
            Architecture::ConvPool => {
                b.conv(c(3, 4, 3).with_padding(1));
                b.op(LayerKind::Relu);
                b.push(LayerSpec::pool(PoolMode::Max, ConvGeometry::window(2, 2)));
                b.conv(c(4, 6, 3).with_padding(1));
                b.op(LayerKind::Sigmoid);
                b.push(LayerSpec::pool(
                    PoolMode::Avg,
                    ConvGeometry::window(3, 2).with_padding(1),
                ));
                b.conv(c(6, 3, 2));
            }
            Architecture::ConvUpsample => {
                b.conv(c(3, 4, 3).with_stride(2).with_padding(1));
                b.op(LayerKind::Relu);
                b.push(LayerSpec::upsample(2));
                b.conv(c(4, 4, 3).with_padding(1));
                b.op(LayerKind::Silu);
                b.push(LayerSpec::upsample(3));
                b.conv(c(4, 2, 3));
            }
            Architecture::ConvConcatSkip => {
                b.conv(c(3, 4, 3).with_padding(1));
                let skip = b.op(LayerKind::Relu);
                b.conv(c(4, 4, 3).with_padding(1));
                b.op(LayerKind::Relu);
                b.push(LayerSpec::concat(skip));
                b.conv(c(8, 3, 3));
            }
            Architecture::ConvFlattenDense => {
                b.conv(c(3, 4, 3));
                b.op(LayerKind::Relu);
                b.push(LayerSpec::pool(PoolMode::Max, ConvGeometry::window(2, 2)));
                b.conv(c(4, 4, 3));
                b.op(LayerKind::Relu);
                b.op(LayerKind::Flatten);
                b.dense(4 * 3 * 3, 8);
                b.op(LayerKind::Relu);
                b.dense(8, 3);
                b.op(LayerKind::Softmax);
            }
            Architecture::Mixed => {
                b.conv(c(3, 4, 3).with_padding(1));
                b.batchnorm(4);
                let skip = b.op(LayerKind::Relu);
                b.push(LayerSpec::pool(PoolMode::Max, ConvGeometry::window(2, 2)));
                b.conv(c(4, 4, 3).with_padding(1));
                b.op(LayerKind::Relu);
                b.push(LayerSpec::upsample(2));
                b.push(LayerSpec::concat(skip));
                b.conv(c(8, 4, 3).with_padding(1));
                b.op(LayerKind::Relu);
                b.push(LayerSpec::pool(PoolMode::Avg, ConvGeometry::window(12, 12)));
                b.op(LayerKind::Flatten);
                b.dense(4, 3);
                b.op(LayerKind::Softmax);
            }
        }
        let classes = match self {
            Architecture::ConvFlattenDense | Architecture::Mixed => 3,
            _ => 0,
        };
        b.finish(Self::INPUT, classes)
    }
}

/// Uniform random `[C, H, W]` tensor in `[lo, hi)`.
pub fn random_input(shape: [usize; 3], lo: f32, hi: f32, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi)).expect("non-empty shape")
}

/// Small fixed six-layer classifier on a 3×8×8 input with 3 classes:
/// conv → relu → maxpool → conv → flatten → dense.
pub fn golden_cnn(seed: u64) -> Model {
    let mut r = rng(seed);
    let mut b = Builder::new(&mut r);
    b.conv(ConvGeometry::conv(3, 4, 3).with_padding(1));
    b.op(LayerKind::Relu);
    b.push(LayerSpec::pool(PoolMode::Max, ConvGeometry::window(2, 2)));
    b.conv(ConvGeometry::conv(4, 4, 3).with_padding(1));
    b.op(LayerKind::Flatten);
    b.dense(4 * 4 * 4, 3);
    b.finish(GOLDEN_INPUT, 3)
}

/// Seed the pinned golden fixtures use for [`golden_cnn`] and [`golden_input`].
pub const GOLDEN_SEED: u64 = 42;

/// Input for the golden model. Every value is a multiple of `1/255`, so the
/// tensor survives an 8-bit image round trip unchanged.
pub fn golden_input() -> Tensor {
    let mut r = rng(GOLDEN_SEED + 1);
    Tensor::from_fn(GOLDEN_INPUT.to_vec(), |_| r.gen::<u8>() as f32 / 255.0)
        .expect("non-empty shape")
}

/// Mask keeping the left half of the golden input.
pub fn golden_half_mask() -> crate::mask::BinaryMask {
    crate::mask::BinaryMask::from_fn(GOLDEN_INPUT[1], GOLDEN_INPUT[2], |_, x| {
        x < GOLDEN_INPUT[2] / 2
    })
}

pub const GOLDEN_INPUT: [usize; 3] = [3, 8, 8];

/// Classifier whose output never depends on its input.
pub fn constant_model() -> Model {
    let mut ws = WeightStore::new();
    ws.insert("c.w", Tensor::zeros(vec![1, 3, 1, 1]).unwrap())
        .unwrap();
    ws.insert("c.b", Tensor::zeros(vec![1]).unwrap()).unwrap();
    ws.insert("d.w", Tensor::zeros(vec![2, 256]).unwrap())
        .unwrap();
    ws.insert("d.b", Tensor::new(vec![2], vec![1.5, 0.0]).unwrap())
        .unwrap();
    let layers = vec![
        LayerSpec::conv(ConvGeometry::conv(3, 1, 1), "c.w", "c.b"),
        LayerSpec::new(LayerKind::Flatten),
        LayerSpec::dense("d.w", "d.b"),
        LayerSpec::new(LayerKind::Softmax),
    ];
    let graph =
        ModelGraph::new(SQUARE_INPUT, vec!["always".into(), "never".into()], layers).unwrap();
    Model::new(graph, ws).unwrap()
}

pub const SQUARE_INPUT: [usize; 3] = [3, 16, 16];
pub const SQUARE_SIDE: usize = 5;
pub const SQUARE_LABELS: [&str; 4] = ["red", "green", "blue", "none"];
/// Index of the "no coloured evidence" class.
pub const NONE_CLASS: usize = 3;

/// Per-pixel excess of one channel over the mean of the other two, minus a
/// margin, is the only evidence this model looks at.
const COLOR_MARGIN: f32 = 0.45;
/// Confident logit margin of a full square over the "none" class.
const FULL_SQUARE_LOGIT: f32 = 9.0;
/// Fraction of a full square's evidence needed to beat "none".
const DECISION_FRACTION: f32 = 0.55;

/// The transparent colour-square classifier on 3×16×16 inputs in `[0, 1]`.
///
/// Layers: 1×1 colour-excess conv → relu → 3×3 mean conv → relu → 2×2
/// maxpool → 3×3 mean conv → relu → global average pool → flatten → dense
/// → softmax. Class `k < 3` wins when channel `k`'s saturated area exceeds
/// roughly 55% of a 5×5 square; otherwise "none".
pub fn color_square_detector() -> Model {
    let build = |scale: f32, none_bias: f32| -> Model {
        let mut ws = WeightStore::new();
        let mut excess = vec![0.0f32; 9];
        for o in 0..3 {
            for i in 0..3 {
                excess[o * 3 + i] = if o == i { 1.0 } else { -0.5 };
            }
        }
        ws.insert("excess.w", Tensor::new(vec![3, 3, 1, 1], excess).unwrap())
            .unwrap();
        ws.insert("excess.b", Tensor::full(vec![3], -COLOR_MARGIN).unwrap())
            .unwrap();
        let mean3 = |name: &str, ws: &mut WeightStore| {
            let w = Tensor::from_fn(vec![3, 3, 3, 3], |i| {
                let (o, c) = (i / 27, (i / 9) % 3);
                if o == c {
                    1.0 / 9.0
                } else {
                    0.0
                }
            })
            .unwrap();
            ws.insert(format!("{name}.w"), w).unwrap();
            ws.insert(format!("{name}.b"), Tensor::zeros(vec![3]).unwrap())
                .unwrap();
        };
        mean3("smooth1", &mut ws);
        mean3("smooth2", &mut ws);
        let mut head = vec![0.0f32; 12];
        for k in 0..3 {
            head[k * 3 + k] = scale;
        }
        ws.insert("head.w", Tensor::new(vec![4, 3], head).unwrap())
            .unwrap();
        ws.insert(
            "head.b",
            Tensor::new(vec![4], vec![0.0, 0.0, 0.0, none_bias]).unwrap(),
        )
        .unwrap();

        let layers = vec![
            LayerSpec::conv(ConvGeometry::conv(3, 3, 1), "excess.w", "excess.b"),
            LayerSpec::new(LayerKind::Relu),
            LayerSpec::conv(
                ConvGeometry::conv(3, 3, 3).with_padding(1),
                "smooth1.w",
                "smooth1.b",
            ),
            LayerSpec::new(LayerKind::Relu),
            LayerSpec::pool(PoolMode::Max, ConvGeometry::window(2, 2)),
            LayerSpec::conv(
                ConvGeometry::conv(3, 3, 3).with_padding(1),
                "smooth2.w",
                "smooth2.b",
            ),
            LayerSpec::new(LayerKind::Relu),
            LayerSpec::pool(PoolMode::Avg, ConvGeometry::window(8, 8)),
            LayerSpec::new(LayerKind::Flatten),
            LayerSpec::dense("head.w", "head.b"),
            LayerSpec::new(LayerKind::Softmax),
        ];
        let labels = SQUARE_LABELS.iter().map(|s| s.to_string()).collect();
        let graph = ModelGraph::new(SQUARE_INPUT, labels, layers).expect("detector graph");
        Model::new(graph, ws)
            .expect("detector weights")
            .with_preprocessing(Preprocessing {
                mean: vec![0.0; 3],
                std: vec![1.0; 3],
            })
            .expect("three channels")
    };

    // Calibrate the head on a canonical square so a full square sits
    // FULL_SQUARE_LOGIT above "none" and the decision boundary at
    // DECISION_FRACTION of its evidence.
    let probe = build(1.0, 0.0);
    let canonical = square_image(&SquareSpec::canonical(0));
    let trace = probe.forward_traced(&canonical).expect("probe forward");
    let evidence = trace[9].data()[0];
    let scale = FULL_SQUARE_LOGIT / evidence;
    build(scale, DECISION_FRACTION * FULL_SQUARE_LOGIT)
}

/// Everything needed to render one synthetic image deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareSpec {
    pub color: usize,
    pub top: usize,
    pub left: usize,
    pub side: usize,
    /// Background noise seed.
    pub seed: u64,
}

impl SquareSpec {
    /// Centred 5×5 square on a fixed background.
    pub fn canonical(color: usize) -> Self {
        SquareSpec {
            color,
            top: 5,
            left: 5,
            side: SQUARE_SIDE,
            seed: 0,
        }
    }
}

/// Grey noise in `[0, 0.6)` with a saturated square of channel
/// `spec.color`.
pub fn square_image(spec: &SquareSpec) -> Tensor {
    let [c, h, w] = SQUARE_INPUT;
    let mut r = rng(spec
        .seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(17));
    let mut img = vec![0.0f32; c * h * w];
    for y in 0..h {
        for x in 0..w {
            let v: f32 = r.gen_range(0.0..0.6);
            for ch in 0..c {
                img[(ch * h + y) * w + x] = (v + r.gen_range(-0.03..0.03f32)).clamp(0.0, 1.0);
            }
        }
    }
    for y in spec.top..(spec.top + spec.side).min(h) {
        for x in spec.left..(spec.left + spec.side).min(w) {
            for ch in 0..c {
                img[(ch * h + y) * w + x] = if ch == spec.color {
                    r.gen_range(0.85..1.0)
                } else {
                    r.gen_range(0.0..0.2)
                };
            }
        }
    }
    Tensor::new(SQUARE_INPUT.to_vec(), img).unwrap()
}

/// Image whose quadrant `quadrant` (0 = top-left, row-major) is entirely a
/// saturated colour, on the usual grey background.
pub fn quadrant_image(color: usize, quadrant: usize, seed: u64) -> Tensor {
    let half = SQUARE_INPUT[1] / 2;
    square_image(&SquareSpec {
        color,
        top: (quadrant / 2) * half,
        left: (quadrant % 2) * half,
        side: half,
        seed,
    })
}

/// `count` labelled square images with colours cycling red, green, blue and
/// random square positions.
pub fn square_dataset(count: usize, seed: u64) -> Vec<LabeledImage> {
    let mut r = rng(seed);
    let span = SQUARE_INPUT[1] - SQUARE_SIDE;
    (0..count)
        .map(|i| {
            let spec = SquareSpec {
                color: i % 3,
                top: r.gen_range(1..span),
                left: r.gen_range(1..span),
                side: SQUARE_SIDE,
                seed: r.gen(),
            };
            LabeledImage {
                name: format!("{}_{i:03}", SQUARE_LABELS[spec.color]),
                label: spec.color,
                image: square_image(&spec),
            }
        })
        .collect()
}
