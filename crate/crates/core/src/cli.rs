//! Command-line front end: `infer`, `explain`, `evaluate` and
//! `verify-equivalence`.
//!
//! Exit codes: `0` success, `1` a verification failed, `2` bad usage or an
//! input/output error. Logs go to stderr, results to stdout or files.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dataset::{load_dataset, load_image, LabeledImage};
use crate::engine::{AdConfig, Engine, OcclusionPolicy};
use crate::equivalence::{verify_equivalence_with_hook, EquivalenceConfig};
use crate::error::{Error, Result};
use crate::eval::{run_suite, write_report, SuiteConfig, DEFAULT_BACKGROUNDS};
use crate::explain::{explain, ExplainConfig};
use crate::mask::BinaryMask;
use crate::model::{load_model, Model};

#[derive(Debug, Parser)]
#[command(
    name = "convad",
    version,
    about = "CNN inference with activation-deactivation masking"
)]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classify one image, optionally with a mask applied.
    Infer(InferArgs),
    /// Extract a causal explanation for one image.
    Explain(ExplainArgs),
    /// Run the robustness protocol over an image folder.
    Evaluate(EvaluateArgs),
    /// Check that AD with an all-ones mask matches plain inference.
    VerifyEquivalence(VerifyArgs),
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Model manifest (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Weight blob; defaults to the manifest path with extension `.adw`.
    #[arg(long)]
    weights: Option<PathBuf>,
}

impl ModelArgs {
    fn load(&self) -> Result<Model> {
        let weights = self
            .weights
            .clone()
            .unwrap_or_else(|| self.model.with_extension("adw"));
        load_model(&self.model, &weights)
    }
}

#[derive(Debug, Args)]
struct InferArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Input image (PNG or PPM), resized to the model input.
    #[arg(long)]
    image: PathBuf,
    /// Mask (PGM, or run-length JSON with a `.json` extension).
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Run the AD pass with the mask.
    #[arg(long, conflicts_with = "occlude")]
    ad: bool,
    /// Replace masked pixels with a fill value instead.
    #[arg(long, value_parser = parse_policy)]
    occlude: Option<OcclusionPolicy>,
    /// AD attribution threshold in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    tau: f32,
    /// Number of classes to print.
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    /// Print every class probability as JSON instead.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct SearchArgs {
    /// AD attribution threshold in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    tau: f32,
    /// Partition passes used to rank pixels.
    #[arg(long, default_value_t = 20)]
    iterations: usize,
    /// Superpixel side in pixels.
    #[arg(long, default_value_t = 2)]
    superpixel: usize,
    /// Smallest partition cell side in pixels.
    #[arg(long, default_value_t = 2)]
    min_cell: usize,
}

impl SearchArgs {
    fn config(&self) -> Result<ExplainConfig> {
        Ok(ExplainConfig {
            iterations: self.iterations,
            min_cell_side: self.min_cell,
            superpixel: self.superpixel,
            chunk: 1,
            ad: AdConfig::new(self.tau)?,
        })
    }
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Input image (PNG or PPM), resized to the model input.
    #[arg(long)]
    image: PathBuf,
    /// ad, min, max, avg or zero.
    #[arg(long, default_value = "ad")]
    engine: Engine,
    /// Confidence threshold in [0, 1], relative to the original confidence.
    #[arg(long)]
    gamma: f32,
    /// Seed for the partition offsets.
    #[arg(long)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Folder with one subdirectory per class label.
    #[arg(long)]
    dataset: PathBuf,
    /// Folder of background images in the same layout; defaults to the dataset.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Comma-separated engines (ad, min, max, avg, zero).
    #[arg(long, value_delimiter = ',', default_value = "ad,min,max,avg,zero")]
    engines: Vec<Engine>,
    /// Comma-separated confidence thresholds in [0, 1].
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.3,0.5,0.7,0.9")]
    gammas: Vec<f32>,
    /// Backgrounds per family.
    #[arg(long, default_value_t = DEFAULT_BACKGROUNDS)]
    backgrounds: usize,
    /// Seed for partitioning and background sampling.
    #[arg(long)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; output does not depend on it.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Random inputs per threshold.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Comma-separated attribution thresholds.
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.49")]
    tau: Vec<f32>,
    /// Seed for the random inputs.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest allowed absolute output difference.
    #[arg(long, default_value_t = crate::equivalence::DEFAULT_TOLERANCE)]
    tolerance: f32,
    /// Zero the mask at this checkpoint position (negative control).
    #[arg(long, hide = true)]
    corrupt_checkpoint: Option<usize>,
}

fn parse_policy(s: &str) -> std::result::Result<OcclusionPolicy, String> {
    match s.parse::<Engine>() {
        Ok(Engine::Occlusion(p)) => Ok(p),
        _ => Err(format!("unknown fill `{s}` (expected min|max|avg|zero)")),
    }
}

/// Result of a subcommand that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    VerificationFailed,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn main_with_args(args: impl IntoIterator<Item = OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .try_init();
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(Outcome::Success) => 0,
        Ok(Outcome::VerificationFailed) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<Outcome> {
    match cli.command {
        Command::Infer(a) => infer(a, out),
        Command::Explain(a) => cmd_explain(a, out),
        Command::Evaluate(a) => evaluate(a, out),
        Command::VerifyEquivalence(a) => verify(a, out),
    }
}

fn emit(out: &mut dyn Write, text: std::fmt::Arguments) -> Result<()> {
    out.write_fmt(text)
        .map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn infer(a: InferArgs, out: &mut dyn Write) -> Result<Outcome> {
    let model = a.model.load()?;
    let input = load_image(&a.image, &model)?;
    let output = match (&a.mask, a.ad, a.occlude) {
        (None, false, None) => model.forward(&input)?,
        (Some(path), true, None) => {
            let mask = BinaryMask::read(path)?;
            Engine::Ad.run(&model, &input, &mask, &AdConfig::new(a.tau)?)?
        }
        (Some(path), false, Some(p)) => {
            let mask = BinaryMask::read(path)?;
            Engine::Occlusion(p).run(&model, &input, &mask, &AdConfig::default())?
        }
        (None, _, _) => {
            return Err(Error::InvalidArgument(
                "--ad and --occlude need --mask".into(),
            ))
        }
        (Some(_), _, _) => {
            return Err(Error::InvalidArgument(
                "--mask needs --ad or --occlude".into(),
            ))
        }
    };
    let probs = model.probabilities(output);
    let labels = model.labels();
    if a.json {
        let v = serde_json::json!({ "labels": labels, "probabilities": probs.data() });
        emit(out, format_args!("{v}\n"))?;
        return Ok(Outcome::Success);
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&i, &j| probs.data()[j].total_cmp(&probs.data()[i]).then(i.cmp(&j)));
    for &k in order.iter().take(a.top_k.max(1)) {
        let label = labels.get(k).cloned().unwrap_or_else(|| k.to_string());
        emit(out, format_args!("{label}\t{:.6}\n", probs.data()[k]))?;
    }
    Ok(Outcome::Success)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_string()
}

fn cmd_explain(a: ExplainArgs, out: &mut dyn Write) -> Result<Outcome> {
    let model = a.model.load()?;
    let input = load_image(&a.image, &model)?;
    let cfg = a.search.config()?;
    let e = explain(&model, &input, a.engine, a.gamma, &cfg, a.seed)?;
    let stem = format!("{}_{}_{}", file_stem(&a.image), a.engine, a.gamma);
    e.write(&a.out, &stem)?;
    emit(
        out,
        format_args!(
            "{}\tsize {:.6}\tconfidence {:.6}\t{}\n",
            model.labels()[e.class],
            e.size_fraction,
            e.confidence,
            a.out.join(format!("{stem}.pgm")).display()
        ),
    )?;
    Ok(Outcome::Success)
}

fn evaluate(a: EvaluateArgs, out: &mut dyn Write) -> Result<Outcome> {
    let model = a.model.load()?;
    let dataset = load_dataset(&a.dataset, &model)?;
    let pool: Vec<LabeledImage> = match &a.pool {
        Some(p) => load_dataset(p, &model)?,
        None => dataset.clone(),
    };
    let mut cfg = SuiteConfig::new(a.engines, a.gammas, a.seed);
    cfg.backgrounds = a.backgrounds;
    cfg.explain = a.search.config()?;
    cfg.jobs = a.jobs;
    log::info!("evaluating {} images", dataset.len());
    let report = run_suite(&model, &dataset, &pool, &cfg)?;
    write_report(&report, &a.out)?;
    emit(out, format_args!("{}", report.to_csv()))?;
    Ok(Outcome::Success)
}

fn verify(a: VerifyArgs, out: &mut dyn Write) -> Result<Outcome> {
    let model = a.model.load()?;
    let cfg = EquivalenceConfig {
        trials: a.trials,
        taus: a.tau,
        seed: a.seed,
        tolerance: a.tolerance,
        ..Default::default()
    };
    let corrupt = a.corrupt_checkpoint;
    let report = verify_equivalence_with_hook(&model, &cfg, &mut |pos, mask| {
        if Some(pos) == corrupt {
            *mask = BinaryMask::zeros(mask.height(), mask.width());
        }
    })?;
    for (tau, dev) in &report.max_deviation {
        emit(out, format_args!("tau {tau}\tmax deviation {dev:e}\n"))?;
    }
    match &report.first_divergence {
        None => {
            emit(out, format_args!("PASS\t{} trials\n", report.trials))?;
            Ok(Outcome::Success)
        }
        Some(d) => {
            emit(out, format_args!("FAIL\t{d}\n"))?;
            Ok(Outcome::VerificationFailed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn seed_is_mandatory() {
        let r = Cli::try_parse_from([
            "convad", "explain", "--model", "m.json", "--image", "x.png", "--gamma", "0.5",
            "--out", "o",
        ]);
        assert!(r.is_err());
        let r = Cli::try_parse_from([
            "convad",
            "evaluate",
            "--model",
            "m.json",
            "--dataset",
            "d",
            "--out",
            "o",
        ]);
        assert!(r.is_err());
    }

    #[test]
    fn lists_parse() {
        let cli = Cli::try_parse_from([
            "convad",
            "evaluate",
            "--model",
            "m.json",
            "--dataset",
            "d",
            "--out",
            "o",
            "--seed",
            "1",
            "--engines",
            "ad,zero",
            "--gammas",
            "0,0.9",
        ])
        .unwrap();
        match cli.command {
            Command::Evaluate(a) => {
                assert_eq!(
                    a.engines,
                    vec![Engine::Ad, Engine::Occlusion(OcclusionPolicy::Zero)]
                );
                assert_eq!(a.gammas, vec![0.0, 0.9]);
            }
            _ => unreachable!(),
        }
        assert!(Cli::try_parse_from([
            "convad",
            "infer",
            "--model",
            "m",
            "--image",
            "i",
            "--occlude",
            "ad"
        ])
        .is_err());
    }
}
