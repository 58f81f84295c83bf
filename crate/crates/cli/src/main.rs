//! `mixer-tts`: train, synthesize, align, verify gradients, benchmark and
//! count parameters.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mixer_tts::Error;

/// Exit status for a failed command.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Failure {
            code: 4,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } | Error::Config(_) | Error::Tokenizer(_) | Error::Invalid { .. } => 2,
            Error::AlignmentInfeasible { .. } => 2,
            Error::Parse { .. } | Error::Format(_) | Error::Audio(_) => 3,
            Error::NonFinite { .. } | Error::Shape { .. } | Error::Backward(_) => 4,
        };
        let message = match e {
            Error::Format(m) => m,
            other => other.to_string(),
        };
        Failure { code, message }
    }
}

pub type CmdResult = Result<(), Failure>;

#[derive(Parser, Debug)]
#[command(name = "mixer-tts", version, about = "Mixer-TTS text-to-mel model")]
pub struct Cli {
    /// Print the configuration (defaults merged with --config) and exit.
    #[arg(long, global = true)]
    pub dump_config: bool,

    /// TOML run configuration; missing keys take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed for initialization, batching and random inputs.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train on a manifest, writing checkpoints and metrics.csv.
    Train(TrainArgs),
    /// Generate a mel-spectrogram (MELF file) from text.
    Synthesize(SynthArgs),
    /// Extract aligner durations and the hard alignment path for a clip.
    Align(AlignArgs),
    /// Run the finite-difference gradient suites.
    Gradcheck(GradArgs),
    /// Time inference at several input lengths.
    Bench(BenchArgs),
    /// Print per-module and total parameter counts.
    Params(ParamsArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Total optimizer steps (overrides the config).
    #[arg(long)]
    pub steps: Option<u64>,
    /// Continue from a checkpoint instead of initializing.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Print a progress line every this many steps.
    #[arg(long, default_value_t = 10)]
    pub log_every: u64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub text: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Duration multiplier: 2.0 speaks twice as slowly.
    #[arg(long, default_value_t = 1.0)]
    pub pace: f64,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub audio: PathBuf,
    #[arg(long)]
    pub text: String,
    /// Directory receiving durations.txt and path.txt.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Module {
    All,
    Numerics,
    Aligner,
    Model,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    GeluSign,
}

#[derive(Args, Debug)]
pub struct GradArgs {
    #[arg(long, value_enum, default_value_t = Module::All)]
    pub module: Module,
    /// Random instances per case.
    #[arg(long, default_value_t = mixer_tts::suites::MIN_INSTANCES)]
    pub instances: usize,
    /// Deliberately break a backward rule to confirm the suites notice.
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<Fault>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Trained checkpoint; without one a freshly initialized model from
    /// the configuration is timed.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "128,256,512,1024")]
    pub lengths: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    /// Also write the CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub pace: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Basic,
    Extended,
    Toy,
}

#[derive(Args, Debug)]
pub struct ParamsArgs {
    /// Count a built-in geometry instead of the configured one.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_target(false)
        .init();
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
