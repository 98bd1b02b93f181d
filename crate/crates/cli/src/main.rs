//! `mmvu`: every pipeline stage as a subcommand.
//!
//! Exit codes: 0 success, 1 validation failure, 2 transport failure,
//! 3 usage error. Diagnostics go to standard error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mmvu_core::{AdapterError, DatagenError, EvalError};

use config::{TransportFlags, UsageError};

#[derive(Debug, Parser)]
#[command(
    name = "mmvu",
    version,
    about = "Paired positive/negative visual question evaluation"
)]
struct Cli {
    /// JSON config file; flags and MMVU_* variables take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More logging on standard error (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and pair a benchmark file.
    Validate {
        #[arg(long)]
        benchmark: PathBuf,
    },
    /// Run the benchmark through a model and write pair outcomes.
    Eval(EvalArgs),
    /// Compute RA/MR from an outcomes file and write report files.
    Metrics {
        #[arg(long)]
        outcomes: PathBuf,
        /// Directory for metrics.json, report.md and report.csv.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Attention statistics from dump files or from a response log.
    Attn(AttnArgs),
    /// Confidence ratios over UF pairs from recorded option logits.
    Logits {
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        /// Output JSON; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Refine an image with its attention dump.
    Var(VarArgs),
    /// Generate paired training data for a set of images.
    Gen(GenArgs),
    /// Remove uncertain rounds and redundant phrases from a dataset.
    Filter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Drop rounds containing the phrase instead of editing them.
        #[arg(long)]
        drop_on_phrase: bool,
        /// Filter counts as JSON; standard output when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compose a training set from base and extra datasets.
    Compose(ComposeArgs),
    /// Render report files from metrics (and optional analysis) JSON.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        analysis: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Compare report.md against this file byte for byte.
        #[arg(long)]
        golden: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct VarFlags {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Odd Gaussian kernel size.
    #[arg(long)]
    pub kernel: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Use raw salience instead of 1 - salience.
    #[arg(long)]
    pub no_invert: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub benchmark: PathBuf,
    /// Outcomes JSONL to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write every response received as a replay log.
    #[arg(long)]
    pub responses_out: Option<PathBuf>,
    /// Directory for attention dumps returned inline by a live endpoint.
    #[arg(long)]
    pub attn_dir: Option<PathBuf>,
    #[command(flatten)]
    pub transport: TransportFlags,
    /// baseline, instruction, cgr, var or cgr+var.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Text-only ablation: send no image.
    #[arg(long)]
    pub no_image: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Ask for option logits on the answer step.
    #[arg(long)]
    pub logits: bool,
    /// Base directory for image references (default: the benchmark's).
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Prompt template directory overriding the built-in assets.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Abort when more than this fraction of items fail.
    #[arg(long)]
    pub max_failure_rate: Option<f64>,
    #[command(flatten)]
    pub var: VarFlags,
}

#[derive(Debug, Args)]
pub struct AttnArgs {
    /// Dump files to summarize individually.
    #[arg(long, num_args = 1.., conflicts_with_all = ["benchmark", "responses"])]
    pub dump: Vec<PathBuf>,
    #[arg(long, requires = "responses")]
    pub benchmark: Option<PathBuf>,
    #[arg(long, requires = "benchmark")]
    pub responses: Option<PathBuf>,
    /// Output JSON; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VarArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub dump: PathBuf,
    /// Refined PNG to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Parameter sidecar JSON to write.
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    #[command(flatten)]
    pub var: VarFlags,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Image files or directories of images.
    #[arg(long, num_args = 1.., required = true)]
    pub images: Vec<PathBuf>,
    /// Prompt version: v0, v1, v2 or v3.
    #[arg(long, default_value = "v3")]
    pub version: String,
    /// dataset.json to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Counts JSON (default: <out stem>.report.json next to --out).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub transport: TransportFlags,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Drop rounds containing the redundant phrase instead of editing them.
    #[arg(long)]
    pub drop_on_phrase: bool,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub extra: Option<PathBuf>,
    /// concat, combine or replace.
    #[arg(long)]
    pub strategy: String,
    /// Negative rounds appended by concat: 1, 2, 4 or all.
    #[arg(long, default_value = "all")]
    pub rounds: String,
    /// Samples swapped by replace.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<AdapterError>() {
            if e.is_transport() {
                return 2;
            }
        }
        match cause.downcast_ref::<EvalError>() {
            Some(EvalError::TooManyFailures { transport, .. }) if *transport > 0 => return 2,
            Some(
                EvalError::IncompatibleMode { .. }
                | EvalError::UnknownStrategy(_)
                | EvalError::InvalidWorkers(_),
            ) => return 3,
            _ => {}
        }
        if let Some(DatagenError::Adapter(e)) = cause.downcast_ref::<DatagenError>() {
            if e.is_transport() {
                return 2;
            }
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 3,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();

    match commands::run(cli.command, cli.config.as_deref()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
