//! `tribosign`: the full workflow from synthetic recordings to reports, one
//! subcommand per stage.

mod config;
mod error;
mod learn;
mod run;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use tribosign_core::pipeline::ModelChoice;

use crate::config::RunConfig;
use crate::error::{classify, one_line, usage, Kind};

#[derive(Parser, Debug)]
#[command(name = "tribosign", version, about = "Sign-language gesture recognition from five-channel glove recordings")]
struct Cli {
    /// Config file of dotted `key = value` lines, e.g. `mfcc.n_mels = 40`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Root seed; every stage derives its randomness from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory under which run directories are created.
    #[arg(long, global = true, env = "TRIBOSIGN_RUN_ROOT", default_value = "runs")]
    run_root: PathBuf,
    /// Exact output directory instead of a derived one under the run root.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labeled corpus.
    Synth(SynthArgs),
    /// Quality-filter a corpus and split its recordings into train/val/test.
    Split(SplitArgs),
    /// Cut recordings into fixed-length windows.
    Segment(SegmentArgs),
    /// Normalize windows and expand the training set.
    Augment(AugmentArgs),
    /// Extract per-channel MFCC features.
    Mfcc(MfccArgs),
    /// Fit a model.
    Train(TrainArgs),
    /// Score a trained model on its test split.
    Evaluate(EvaluateArgs),
    /// Compare test accuracy across window sizes.
    AblateWindow(AblateArgs),
    /// Summarize evaluate, train and ablation runs in one markdown file.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Named difficulty preset (`default` or `easy`).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    recordings_per_class: Option<usize>,
}

#[derive(Args, Debug)]
struct SplitArgs {
    /// Corpus directory (manifest.txt or one subdirectory per class).
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args, Debug)]
struct SegmentArgs {
    /// A `split` run.
    #[arg(long, required_unless_present = "input", conflicts_with = "input")]
    split: Option<PathBuf>,
    /// A single recording CSV.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Class recorded on windows cut from `--input`.
    #[arg(long, default_value = "1")]
    label: String,
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    /// A `segment` run made from a split.
    #[arg(long, required_unless_present = "input", conflicts_with = "input")]
    segment: Option<PathBuf>,
    /// A single window block file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Augmented copies per window.
    #[arg(long)]
    variants: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    warp_sigma: Option<f64>,
    #[arg(long)]
    scale_lo: Option<f64>,
    #[arg(long)]
    scale_hi: Option<f64>,
    #[arg(long)]
    shift_max: Option<usize>,
}

#[derive(Args, Debug)]
struct MfccArgs {
    /// An `augment` run made from a segment run.
    #[arg(long, required_unless_present = "input", conflicts_with = "input")]
    augment: Option<PathBuf>,
    /// A single window block file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// With `--input`, also write each window's tensor as an MFC1 file.
    #[arg(long)]
    dump: bool,
    #[arg(long)]
    n_mels: Option<usize>,
    #[arg(long)]
    n_mfcc: Option<usize>,
    /// `temporal` or `mel`.
    #[arg(long)]
    dct_axis: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// `multibranch` (reads an mfcc run), `simplenn` (an augment run) or
    /// `knn` (a segment run).
    #[arg(long, value_parser = parse_model)]
    model: ModelChoice,
    #[arg(long)]
    input: PathBuf,
    /// Cap on training epochs; patience shrinks to fit.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// A `train` run.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// Corpus directory.
    #[arg(long)]
    data: PathBuf,
    /// Window sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    windows: Option<Vec<usize>>,
    #[arg(long, value_parser = parse_model)]
    model: Option<ModelChoice>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Runs to summarize.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
}

fn parse_model(s: &str) -> std::result::Result<ModelChoice, String> {
    s.parse().map_err(|e: tribosign_core::Error| e.to_string())
}

/// Shared state handed to every command.
pub struct Ctx {
    pub cfg: RunConfig,
    pub run_root: PathBuf,
    pub out: Option<PathBuf>,
}

fn overrides(cli: &Cli) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for s in &cli.set {
        let (k, v) = s.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got '{s}'")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    let mut push = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            out.push((k.to_string(), v));
        }
    };
    push("seed", cli.seed.map(|s| s.to_string()));
    match &cli.command {
        Command::Synth(a) => push("synth.recordings_per_class", a.recordings_per_class.map(|v| v.to_string())),
        Command::Segment(a) => push("window", a.window.map(|v| v.to_string())),
        Command::Augment(a) => {
            push("augment.variants_per_sample", a.variants.map(|v| v.to_string()));
            push("augment.noise_sigma", a.noise_sigma.map(|v| format!("{v:?}")));
            push("augment.warp_sigma", a.warp_sigma.map(|v| format!("{v:?}")));
            push("augment.scale_lo", a.scale_lo.map(|v| format!("{v:?}")));
            push("augment.scale_hi", a.scale_hi.map(|v| format!("{v:?}")));
            push("augment.shift_max", a.shift_max.map(|v| v.to_string()));
        }
        Command::Mfcc(a) => {
            push("mfcc.n_mels", a.n_mels.map(|v| v.to_string()));
            push("mfcc.n_mfcc", a.n_mfcc.map(|v| v.to_string()));
            push("mfcc.dct_axis", a.dct_axis.as_ref().map(|v| format!("{v:?}")));
        }
        Command::Train(a) => {
            let section = match a.model {
                ModelChoice::Multibranch => "train",
                ModelChoice::SimpleNn => "simple_nn",
                ModelChoice::Knn => "knn",
            };
            if a.model != ModelChoice::Knn {
                push(&format!("{section}.batch_size"), a.batch_size.map(|v| v.to_string()));
                push(&format!("{section}.optimizer.lr"), a.lr.map(|v| format!("{v:?}")));
            }
        }
        Command::AblateWindow(a) => {
            push("ablation.windows", a.windows.as_ref().map(|w| format!("{w:?}")));
            push("ablation.model", a.model.map(|m| serde_json::to_string(&m).expect("model name")));
        }
        _ => {}
    }
    Ok(out)
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = config::load(cli.config.as_deref(), &overrides(&cli)?)?;
    if let Command::Synth(SynthArgs { preset: Some(name), recordings_per_class }) = &cli.command {
        let preset = tribosign_core::synth::SynthConfig::preset(name)?;
        cfg.synth = tribosign_core::synth::SynthConfig {
            recordings_per_class: recordings_per_class.unwrap_or(preset.recordings_per_class),
            ..preset
        };
        cfg.finalize()?;
    }
    let mut ctx = Ctx {
        cfg,
        run_root: cli.run_root,
        out: cli.out,
    };
    match cli.command {
        Command::Synth(_) => stages::synth(&mut ctx),
        Command::Split(a) => stages::split(&mut ctx, &a.data),
        Command::Segment(a) => match (a.split, a.input) {
            (Some(split), _) => stages::segment_split(&mut ctx, &split),
            (None, Some(input)) => stages::segment_file(&mut ctx, &input, &a.label),
            (None, None) => Err(usage("segment needs --split or --input")),
        },
        Command::Augment(a) => match (a.segment, a.input) {
            (Some(seg), _) => stages::augment_run(&mut ctx, &seg),
            (None, Some(input)) => stages::augment_file(&mut ctx, &input),
            (None, None) => Err(usage("augment needs --segment or --input")),
        },
        Command::Mfcc(a) => match (a.augment, a.input) {
            (Some(aug), _) => stages::mfcc_run(&mut ctx, &aug),
            (None, Some(input)) => stages::mfcc_file(&mut ctx, &input, a.dump),
            (None, None) => Err(usage("mfcc needs --augment or --input")),
        },
        Command::Train(a) => learn::train(&mut ctx, a.model, &a.input, a.epochs),
        Command::Evaluate(a) => learn::evaluate(&mut ctx, &a.model),
        Command::AblateWindow(a) => learn::ablate(&mut ctx, &a.data),
        Command::Report(a) => learn::report(&mut ctx, &a.runs),
    }
}

fn fail(kind: Kind, message: &str) -> ExitCode {
    eprintln!("error kind={}: {message}", kind.tag());
    ExitCode::from(kind.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            return fail(Kind::Usage, &first);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(classify(&e), &one_line(&e)),
    }
}
