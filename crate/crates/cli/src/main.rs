//! `sundae`: fit a patch codebook, build token datasets, train the hourglass
//! denoiser, then sample, inpaint and evaluate.
//!
//! Every subcommand reads defaults, then `--config` (flat `key=value` text),
//! then its own flags. The resolved config is echoed to stderr in the same
//! format, so it can be saved and replayed with `--config`.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "sundae", version, about = "Step-unrolled denoising on token grids")]
struct Cli {
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat key=value config file, applied before flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a k-means patch codebook to a directory of PGM images (writes CBK1).
    FitCodebook(FitArgs),
    /// Encode a directory of PGM images into a token dataset (writes LDS1).
    BuildDataset(BuildArgs),
    /// Train a denoiser; writes checkpoints and loss.csv into --out.
    Train(TrainArgs),
    /// Sample images from a checkpoint into --out.
    Sample(SampleArgs),
    /// Resample the masked region of an image.
    Inpaint(InpaintArgs),
    /// Report loss, exact likelihood when enumerable, and sample statistics.
    Eval(EvalArgs),
}

type Overrides = Vec<(&'static str, String)>;

fn push<T: ToString>(out: &mut Overrides, key: &'static str, value: &Option<T>) {
    if let Some(v) = value {
        out.push((key, v.to_string()));
    }
}

fn push_path(out: &mut Overrides, key: &'static str, value: &Option<PathBuf>) {
    if let Some(v) = value {
        out.push((key, v.display().to_string()));
    }
}

#[derive(Args)]
struct FitArgs {
    /// Directory of PGM images.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Number of codewords.
    #[arg(long)]
    vocab: Option<usize>,
    /// Patch side in pixels.
    #[arg(long)]
    patch: Option<usize>,
}

#[derive(Args)]
struct CodecArgs {
    /// CBK1 codebook file.
    #[arg(long)]
    codebook: Option<PathBuf>,
    /// Use raw pixels quantized to this many levels (2, 4, 16 or 256).
    #[arg(long)]
    direct_pixels: Option<usize>,
}

impl CodecArgs {
    fn overrides(&self, out: &mut Overrides) {
        push_path(out, "codebook", &self.codebook);
        push(out, "direct_pixels", &self.direct_pixels);
    }
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    images: Option<PathBuf>,
    #[command(flatten)]
    codec: CodecArgs,
    /// Add a horizontally flipped copy of every image.
    #[arg(long)]
    hflip: bool,
    /// Text file with one integer class label per image, in file-name order.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// LDS1 dataset.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Total optimizer steps (including steps already done when resuming).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Denoising steps unrolled per training example.
    #[arg(long)]
    unroll: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Write a numbered checkpoint every K steps.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Block counts as `pre-mid-post`, e.g. 2-4-2.
    #[arg(long)]
    depth: Option<String>,
    #[arg(long)]
    heads: Option<usize>,
    /// Shortening factor k (a perfect square).
    #[arg(long)]
    shorten: Option<usize>,
    /// Number of classes for a class-conditional model.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Args)]
struct SamplingArgs {
    /// Maximum sampling steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Steps before an unchanged sample may freeze.
    #[arg(long)]
    min_steps: Option<usize>,
    /// Fraction of positions rewritten per step.
    #[arg(long)]
    proportion: Option<f64>,
    /// Temperature as `start:end`, or one constant.
    #[arg(long)]
    temp: Option<String>,
    /// Disable freezing; always run every step.
    #[arg(long)]
    no_freeze: bool,
    /// Class label for a conditional checkpoint.
    #[arg(long)]
    class: Option<usize>,
}

impl SamplingArgs {
    fn overrides(&self, out: &mut Overrides) {
        push(out, "sample_steps", &self.steps);
        push(out, "min_steps", &self.min_steps);
        push(out, "proportion", &self.proportion);
        push(out, "temp", &self.temp);
        push(out, "class", &self.class);
        if self.no_freeze {
            out.push(("freeze", "false".into()));
        }
    }
}

#[derive(Args)]
struct SampleArgs {
    /// Model checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    codec: CodecArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Number of samples.
    #[arg(long)]
    batch: Option<usize>,
    /// Also write every intermediate step under `<out>/trace`.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct InpaintArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    codec: CodecArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Input PGM image.
    #[arg(long)]
    image: Option<PathBuf>,
    /// PGM mask; pixels at or above half intensity are resampled.
    #[arg(long)]
    mask: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Held-out LDS1 dataset.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Corruption draws for the loss estimate.
    #[arg(long)]
    draws: Option<usize>,
    /// Samples drawn for marginal statistics (0 skips sampling).
    #[arg(long)]
    samples: Option<usize>,
    /// Unrolled steps for the loss; defaults to the checkpoint's training value.
    #[arg(long)]
    unroll: Option<usize>,
    #[command(flatten)]
    sampling: SamplingArgs,
}

impl Command {
    fn overrides(&self) -> Overrides {
        let mut o = Overrides::new();
        match self {
            Command::FitCodebook(a) => {
                push_path(&mut o, "images", &a.images);
                push(&mut o, "vocab", &a.vocab);
                push(&mut o, "patch", &a.patch);
            }
            Command::BuildDataset(a) => {
                push_path(&mut o, "images", &a.images);
                a.codec.overrides(&mut o);
                if a.hflip {
                    o.push(("hflip", "true".into()));
                }
                push_path(&mut o, "labels", &a.labels);
            }
            Command::Train(a) => {
                push_path(&mut o, "dataset", &a.dataset);
                push(&mut o, "steps", &a.steps);
                push(&mut o, "batch", &a.batch);
                push(&mut o, "unroll", &a.unroll);
                push(&mut o, "lr", &a.lr);
                push(&mut o, "weight_decay", &a.weight_decay);
                push(&mut o, "checkpoint_every", &a.checkpoint_every);
                push_path(&mut o, "resume", &a.resume);
                push(&mut o, "vocab", &a.vocab);
                push(&mut o, "dim", &a.dim);
                push(&mut o, "depth", &a.depth);
                push(&mut o, "heads", &a.heads);
                push(&mut o, "shorten", &a.shorten);
                push(&mut o, "classes", &a.classes);
                push(&mut o, "dropout", &a.dropout);
            }
            Command::Sample(a) => {
                push_path(&mut o, "checkpoint", &a.checkpoint);
                a.codec.overrides(&mut o);
                a.sampling.overrides(&mut o);
                push(&mut o, "sample_batch", &a.batch);
                if a.trace {
                    o.push(("trace", "true".into()));
                }
            }
            Command::Inpaint(a) => {
                push_path(&mut o, "checkpoint", &a.checkpoint);
                a.codec.overrides(&mut o);
                a.sampling.overrides(&mut o);
                push_path(&mut o, "image", &a.image);
                push_path(&mut o, "mask", &a.mask);
            }
            Command::Eval(a) => {
                push_path(&mut o, "checkpoint", &a.checkpoint);
                push_path(&mut o, "dataset", &a.dataset);
                push(&mut o, "draws", &a.draws);
                push(&mut o, "eval_samples", &a.samples);
                push(&mut o, "unroll", &a.unroll);
                a.sampling.overrides(&mut o);
            }
        }
        o
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &cli.out {
        cfg.set("out", &out.display().to_string())?;
    }
    for (k, v) in cli.command.overrides() {
        cfg.set(k, &v)?;
    }
    cfg.sync_seed();
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli)?;
    match cli.command {
        Command::FitCodebook(_) => commands::fit_codebook(cfg),
        Command::BuildDataset(_) => commands::build_dataset(cfg),
        Command::Train(_) => commands::train(cfg),
        Command::Sample(_) => commands::sample(cfg),
        Command::Inpaint(_) => commands::inpaint(cfg),
        Command::Eval(_) => commands::eval(cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version.
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: usage: {}", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.code as u8)
        }
    }
}
