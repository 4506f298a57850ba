//! The `xmodal` command line. [`run`] parses arguments, executes one
//! subcommand and maps the outcome to a process exit code.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use xmodal_core::retrieval::Direction;
use xmodal_core::store::MixingMap;
use xmodal_core::Error;

mod commands;
mod config;
mod inspect;

pub use config::ConfigFile;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_IO: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "xmodal",
    version,
    about = "Align audio embeddings with CLIP's visual space"
)]
pub struct Cli {
    /// Seed for every stochastic step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on the count.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// error, warn, info, debug, trace or off. Falls back to XMODAL_LOG.
    #[arg(long, global = true)]
    pub log_level: Option<String>,
    /// JSON file with shared defaults (`seed`, `train`, `eval` sections).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired dataset.
    GenSynthetic(GenArgs),
    /// Keep segments whose mean alignment score exceeds a threshold.
    Filter(FilterArgs),
    /// Reduce layer stacks to audio embeddings.
    Fuse(FuseArgs),
    /// Train the audio-to-CLIP projection head.
    Train(TrainArgs),
    /// Replace audio embeddings by their 1024-wide projections.
    Project(ProjectArgs),
    /// Put projected audio in the CLS slot and keep the k closest patches.
    Substitute(SubstituteArgs),
    /// Bidirectional retrieval on the test split.
    Eval(EvalArgs),
    /// Retrieval across raw/aligned interpolation weights.
    Interpolate(InterpolateArgs),
    /// Correlate retrieval gains with generation-score changes.
    Tradeoff(TradeoffArgs),
    /// Summarize an AVEB dataset or AVEP parameter file.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MapArg {
    Random,
    Identity,
}

impl From<MapArg> for MixingMap {
    fn from(m: MapArg) -> Self {
        match m {
            MapArg::Random => MixingMap::Random,
            MapArg::Identity => MixingMap::Identity,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DirectionArg {
    A2v,
    V2a,
    Both,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::A2v => Direction::AudioToVideo,
            DirectionArg::V2a => Direction::VideoToAudio,
            DirectionArg::Both => Direction::Both,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Projected,
    RawPad,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum BudgetArg {
    /// 15 patches.
    Audio,
    /// 150 patches.
    Vision,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long = "d-a", default_value_t = 512)]
    pub d_a: usize,
    #[arg(long, default_value_t = 576)]
    pub patches: usize,
    /// Audio noise level in [0, 1].
    #[arg(long, default_value_t = 0.2)]
    pub noise: f64,
    #[arg(long, value_enum, default_value_t = MapArg::Random)]
    pub map: MapArg,
    #[arg(long, default_value_t = 1.0)]
    pub patch_noise: f64,
    #[arg(long, default_value_t = 0.1)]
    pub test_fraction: f64,
    /// Also emit layer stacks with this many layers.
    #[arg(long, default_value_t = 0)]
    pub layers: usize,
    #[arg(long, default_value_t = 0)]
    pub seq_len: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 8.0)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// final, middle, last-n:N, average or weighted:PATH.
    #[arg(long, default_value = "final")]
    pub strategy: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_params: PathBuf,
    /// Training log destination; printed to stdout when absent.
    #[arg(long)]
    pub out_log: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub plateau_factor: Option<f64>,
    #[arg(long)]
    pub plateau_patience: Option<usize>,
    #[arg(long)]
    pub min_lr: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Without parameters, embeddings are zero-padded or truncated to 1024.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SubstituteArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Patches to keep; overrides --budget.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum)]
    pub budget: Option<BudgetArg>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-segment retained patch indices as JSON lines.
    #[arg(long)]
    pub out_selection: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    #[arg(long)]
    pub pool: Option<usize>,
    /// Test pairs eligible for sampling.
    #[arg(long)]
    pub max_pool: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long, value_enum)]
    pub direction: Option<DirectionArg>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Defaults to projected when --params is given, raw-pad otherwise.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    /// Comma-separated weights on the raw embedding.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TradeoffArgs {
    /// CSV with columns encoder, aligned, top1.
    #[arg(long)]
    pub retrieval: PathBuf,
    /// CSV with columns encoder, aligned, overall_score.
    #[arg(long)]
    pub generation: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub path: PathBuf,
}

fn init_logging(level: Option<&str>) {
    let filter = level
        .map(str::to_owned)
        .or_else(|| std::env::var("XMODAL_LOG").ok())
        .unwrap_or_else(|| "warn".into());
    let _ = env_logger::Builder::new()
        .parse_filters(&filter)
        .format_timestamp(None)
        .try_init();
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_io_or_format() {
        EXIT_IO
    } else {
        EXIT_VALIDATION
    }
}

/// Runs one invocation. `argv` excludes the program name.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = std::iter::once(OsString::from("xmodal")).chain(argv.into_iter().map(Into::into));
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_VALIDATION,
            };
        }
    };
    init_logging(cli.log_level.as_deref());

    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return EXIT_VALIDATION;
        }
    };
    match pool.install(|| commands::dispatch(&cli)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
