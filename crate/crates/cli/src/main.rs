//! `bagnet3d` command-line tool.

/// `println!` that ignores a closed stdout.
macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use bagnet3d::architecture::Variant;
use bagnet3d::data::{BlobPairing, SyntheticTask};
use bagnet3d::train::Preset;
use bagnet3d::Task;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "bagnet3d", version, about = "3D bag-of-local-features networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its manifest.
    Synth(SynthArgs),
    /// Train a model from a manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Export localized prediction maps for one volume.
    Heatmap(HeatmapArgs),
    /// Print the receptive-field table of a variant or model config.
    Rf(RfArgs),
    /// Dump the header of a .nii, .rawvol or .ckpt file.
    Inspect(InspectArgs),
    /// MAE of always predicting the training-set mean target.
    Baseline(BaselineArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VolumeFormat {
    Rawvol,
    Nii,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// JSON synthetic spec; flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    task: Option<SynthTaskArg>,
    /// Number of volumes.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Volume shape as D,H,W.
    #[arg(long, value_parser = parse_dims)]
    shape: Option<[usize; 3]>,
    #[arg(long, value_enum)]
    pairing: Option<PairingArg>,
    #[arg(long, value_enum, default_value = "rawvol")]
    format: VolumeFormat,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SynthTaskArg {
    TextureRegression,
    TextureClassification,
    GlobalStructure,
}

impl From<SynthTaskArg> for SyntheticTask {
    fn from(t: SynthTaskArg) -> Self {
        match t {
            SynthTaskArg::TextureRegression => SyntheticTask::TextureRegression,
            SynthTaskArg::TextureClassification => SyntheticTask::TextureClassification,
            SynthTaskArg::GlobalStructure => SyntheticTask::GlobalStructure,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PairingArg {
    Orientation,
    AdjacentOpposite,
}

impl From<PairingArg> for BlobPairing {
    fn from(p: PairingArg) -> Self {
        match p {
            PairingArg::Orientation => BlobPairing::Orientation,
            PairingArg::AdjacentOpposite => BlobPairing::AdjacentOpposite,
        }
    }
}

/// Flags shared by commands that build a training configuration.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON training config; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Training crop as D,H,W.
    #[arg(long, value_parser = parse_dims)]
    crop: Option<[usize; 3]>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset manifest; split into train/val/test unless --val-manifest is given.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    val_manifest: Option<PathBuf>,
    #[arg(long)]
    test_manifest: Option<PathBuf>,
    /// Directory for checkpoints and the metrics log.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from a checkpoint; only --epochs may change the stored config.
    #[arg(long, conflicts_with_all = ["config", "task", "variant", "preset", "seed", "crop"])]
    resume: Option<PathBuf>,
    /// Print the resolved config and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MapFormat {
    Csv,
    Pgm,
    Both,
}

#[derive(Debug, Args)]
struct HeatmapArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input volume (.nii or .rawvol).
    #[arg(long)]
    volume: PathBuf,
    /// Optional brain mask used for whitening.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Slice axis: 0 = depth, 1 = height, 2 = width.
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=2))]
    axis: u8,
    /// Slice index in the exported grid; middle slice by default.
    #[arg(long)]
    slice: Option<usize>,
    #[arg(long, value_enum, default_value = "both")]
    format: MapFormat,
    /// Nearest-neighbour upsampling factor applied before slicing.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..=64))]
    upsample: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RfArgs {
    #[arg(long, value_parser = parse_variant, default_value = "rf9")]
    variant: Variant,
    #[arg(long, value_parser = parse_preset, default_value = "paper")]
    preset: Preset,
    /// JSON architecture config; overrides --variant and --preset.
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct InspectArgs {
    path: PathBuf,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    /// Manifest whose mean age is the prediction.
    #[arg(long)]
    manifest: PathBuf,
    /// Manifest scored against that mean; defaults to --manifest.
    #[arg(long)]
    test_manifest: Option<PathBuf>,
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [d, h, w] = parts[..] else {
        return Err(format!("expected D,H,W, got `{s}`"));
    };
    let num = |p: &str| match p.parse::<usize>() {
        Ok(0) | Err(_) => Err(format!("`{p}` is not a positive integer")),
        Ok(v) => Ok(v),
    };
    Ok([num(d)?, num(h)?, num(w)?])
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse().map_err(|e: bagnet3d::Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: bagnet3d::Error| e.to_string())
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: bagnet3d::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Heatmap(a) => commands::heatmap(a),
        Command::Rf(a) => commands::rf(a),
        Command::Inspect(a) => commands::inspect(a),
        Command::Baseline(a) => commands::baseline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
