//! `patk`: command-line front-end for the photoacoustic toolkit.

mod commands;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use patk_core::beamform::BeamformKind;
use patk_core::invert::Penalty;

#[derive(Parser, Debug)]
#[command(name = "patk", version, about = "Photoacoustic limited-view imaging toolkit")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a branching phantom.
    Phantom(PhantomArgs),
    /// Simulate RF data for an object image.
    Simulate(SimulateArgs),
    /// Delay-and-sum beamforming of an RF record.
    Beamform(BeamformArgs),
    /// FISTA deconvolution of an RF record.
    Deconv(DeconvArgs),
    /// NCC / SSIM / sSSIM of predictions against ground truth.
    Metrics(MetricsArgs),
    /// Similarity registration of a moving image onto a reference.
    Register(RegisterArgs),
    /// Build a paired dataset.
    Dataset(DatasetArgs),
    /// Pixelwise mean / std maps of a stack or of noisy acquisitions.
    Uncertainty(UncertaintyArgs),
    /// Tile up to four images side by side.
    Panel(PanelArgs),
}

#[derive(Args, Debug)]
pub struct PhantomArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Grid side in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    /// Pixel pitch, metres.
    #[arg(long)]
    pub pitch: Option<f64>,
    /// Depth of the grid centre, metres.
    #[arg(long)]
    pub depth: Option<f64>,
    /// Apply a random augmentation drawn from this seed.
    #[arg(long)]
    pub augment_seed: Option<u64>,
    /// Ground-truth threshold applied after normalization.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Object image (.patk with grid sidecar).
    #[arg(long)]
    pub object: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub elements: Option<usize>,
    /// Record length; `0` picks the shortest record covering the grid.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BeamformArgs {
    #[arg(long)]
    pub rf: PathBuf,
    #[arg(long, default_value = "dmbf")]
    pub kind: BeamformKind,
    /// Beamform only the central N x N crop of the source grid.
    #[arg(long)]
    pub crop: Option<usize>,
    /// Treat delays outside the record as zero instead of failing.
    #[arg(long)]
    pub zero_fill: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DeconvArgs {
    #[arg(long)]
    pub rf: PathBuf,
    /// Solver settings (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub penalty: Option<Penalty>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub nonneg: bool,
    /// Sweep alpha over five log-spaced values, keeping the best sSSIM
    /// against `--gt`.
    #[arg(long, requires = "gt")]
    pub sweep: bool,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    /// Prediction images, paired in order with `--gt`.
    #[arg(long, num_args = 1..)]
    pub pred: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub gt: Vec<PathBuf>,
    /// Evaluate a dataset's inputs against its targets instead.
    #[arg(long, conflicts_with_all = ["pred", "gt"])]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value = "prediction")]
    pub label: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RegisterArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub moving: PathBuf,
    #[arg(long)]
    pub max_rotation_deg: Option<f64>,
    /// Largest shift as a fraction of the image side.
    #[arg(long)]
    pub max_shift: Option<f64>,
    #[arg(long)]
    pub scale_min: Option<f64>,
    #[arg(long)]
    pub scale_max: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DatasetArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_val: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub kind: Option<BeamformKind>,
    /// Noisy provenance at this SNR (adds response jitter too).
    #[arg(long)]
    pub snr: Option<f64>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct UncertaintyArgs {
    /// 3-D stack tensor (n x H x W).
    #[arg(long, conflicts_with_all = ["inputs", "object"])]
    pub stack: Option<PathBuf>,
    /// Individual 2-D images forming the stack.
    #[arg(long, num_args = 2.., conflicts_with = "object")]
    pub inputs: Vec<PathBuf>,
    /// Object image: simulate `--n-acq` noisy acquisitions and beamform each.
    #[arg(long)]
    pub object: Option<PathBuf>,
    /// Simulation config (TOML) for `--object`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub n_acq: usize,
    #[arg(long, default_value_t = 60.0)]
    pub snr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "dmbf")]
    pub kind: BeamformKind,
    /// Ground truth for the absolute-error map and overlap score.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub q: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PanelArgs {
    #[arg(long, num_args = 1..=4, required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    let res = match cli.command {
        Command::Phantom(a) => commands::phantom(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Beamform(a) => commands::beamform(a),
        Command::Deconv(a) => commands::deconv(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Register(a) => commands::register(a),
        Command::Dataset(a) => commands::dataset(a),
        Command::Uncertainty(a) => commands::uncertainty(a),
        Command::Panel(a) => commands::panel(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
