use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use karmalevel::Error;
use serde_json::json;

mod commands;
mod manifest;
mod profile;

#[derive(Debug, Parser)]
#[command(name = "karmalevel", version, about = "Endorsement-level prediction for discussion threads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus (JSONL).
    Synth(SynthArgs),
    /// Check every thread of a JSONL corpus and summarize it.
    Validate(ValidateArgs),
    /// Fit per-subreddit karma quantizers.
    FitQuantizer(FitQuantizerArgs),
    /// Label, partition, subsample and encode a corpus.
    BuildDataset(BuildDatasetArgs),
    /// Train a model on a dataset bundle.
    Train(TrainArgs),
    /// Score a checkpoint or a baseline on the test split.
    Eval(EvalArgs),
    /// Mode clustering, feature means and gate values of a latent-mode model.
    Analyze(AnalyzeArgs),
    /// Finite-difference gradient check on a micro-instance.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// none | global | context_conditional
    #[arg(long)]
    pub text: Option<String>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitQuantizerArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Pre-fitted quantizers; fitted on the input when absent.
    #[arg(long)]
    pub quantizer: Option<PathBuf>,
    /// Dataset options (JSON): seed, pivot_level, subsample.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ModelFlags {
    /// Run configuration (JSON) with optional `model` and `train` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// subtree | convstruct | feedfwd1 | feedfwd2 | feedfwd3 | latent
    #[arg(long)]
    pub variant: Option<String>,
    /// none | ungated | gated
    #[arg(long)]
    pub text: Option<String>,
    /// f32 | f64
    #[arg(long)]
    pub precision: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset bundle.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset bundle.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Trained checkpoint. Without it `--variant` must name a baseline
    /// (prior, subtree or convstruct), which is fitted on the spot.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub mod exit {
    pub const OTHER: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const MISSING_FILE: u8 = 3;
    pub const CONFIG: u8 = 4;
    pub const INVALID_DATA: u8 = 5;
    pub const CHECK_FAILED: u8 = 6;
}

/// A command failure: the library error plus how to report it.
#[derive(Debug)]
pub enum Failure {
    Lib(Error),
    /// The command ran but its verdict was negative (invalid corpus,
    /// failed gradient check).
    Verdict { code: u8, kind: &'static str, message: String },
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn code_and_kind(&self) -> (u8, &'static str) {
        match self {
            Failure::Verdict { code, kind, .. } => (*code, kind),
            Failure::Lib(e) => match e {
                Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                    (exit::MISSING_FILE, "missing_file")
                }
                Error::Io { .. } => (exit::OTHER, "io"),
                Error::Config(_) => (exit::CONFIG, "config"),
                Error::MalformedLine { .. } | Error::InvalidThread { .. } => (exit::INVALID_DATA, "invalid_data"),
                Error::InsufficientData(_) => (exit::INVALID_DATA, "insufficient_data"),
                Error::Diverged(_) => (exit::OTHER, "diverged"),
                Error::Checkpoint(_) => (exit::OTHER, "checkpoint"),
                Error::Analysis(_) => (exit::OTHER, "analysis"),
                _ => (exit::OTHER, "error"),
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Lib(e) => e.to_string(),
            Failure::Verdict { message, .. } => message.clone(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { 0 };
            if code == 0 {
                let _ = e.print();
            } else {
                let record = json!({"error": {"kind": "usage", "message": e.kind().to_string(), "exit_code": code}});
                eprintln!("{}", e.render());
                eprintln!("{record}");
            }
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Validate(a) => commands::validate(a),
        Command::FitQuantizer(a) => commands::fit_quantizer(a),
        Command::BuildDataset(a) => commands::build_dataset(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, kind) = f.code_and_kind();
            let record = json!({"error": {"kind": kind, "message": f.message(), "exit_code": code}});
            eprintln!("{record}");
            ExitCode::from(code)
        }
    }
}
