//! `lidcert`: train models, compute and certify locally invariant domains,
//! apply safe updates and run continual-learning experiments.
//!
//! Exit codes: 0 on success, 1 when a run fails, 2 for invalid arguments,
//! configs or input files. Errors are written to stderr as one JSON object.

mod commands;
mod error;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lidcert_harness::ReportFormat;
use serde_json::Value;

use crate::commands::{ContinualArgs, ReportOutput};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "lidcert", version, about = "Certified parameter boxes and safe model updates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a network on one task of the configured stream.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        task: usize,
        /// Start from these parameters instead of a fresh initialization.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute a certified box around a trained model.
    Lid {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        task: usize,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project a proposed parameter update into a certified box.
    Update {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        lid: PathBuf,
        /// JSON file with `delta` and `provenance`.
        #[arg(long)]
        proposal: PathBuf,
        #[arg(long, default_value = "sample_largest_closest")]
        strategy: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a continual-learning algorithm over the configured task stream.
    Continual {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Registered algorithm: zero, buffer or sgd.
        #[arg(long, default_value = "zero")]
        algorithm: String,
        /// Buffer recomputations per task.
        #[arg(long)]
        max_calls: Option<usize>,
        /// Comma-separated seeds or a half-open range such as `0..10`.
        #[arg(long, value_parser = parse_seeds)]
        seeds: Option<Seeds>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Both)]
        format: Format,
    },
    /// Recompute the certificates of every checkpoint in a box file.
    Certify {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        task: usize,
        #[arg(long)]
        lid: PathBuf,
        /// Dataset JSON to certify against instead of the task's
        /// certification split.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Render run records as CSV or JSON, plus a per-step accuracy table.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, default_value = "report")]
        stem: String,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Both,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
            Format::Both => ReportFormat::Both,
        }
    }
}

#[derive(Debug, Clone)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> std::result::Result<Seeds, String> {
    let bad = |_| format!("invalid seed list `{s}`");
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(bad)?, b.trim().parse().map_err(bad)?);
        (a..b).collect()
    } else {
        s.split(',').map(|p| p.trim().parse().map_err(bad)).collect::<std::result::Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(format!("seed list `{s}` is empty"));
    }
    Ok(Seeds(seeds))
}

/// Writes to stdout; a reader that hung up early is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Write { path: "<stdout>".into(), source: e }),
        _ => Ok(()),
    }
}

fn print_json(v: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Run(e.to_string()))?;
    emit(&(text + "\n"))
}

fn run(cli: Cli) -> Result<()> {
    let summary = match cli.command {
        Command::Train { config, task, init, out } => commands::train(config.as_deref(), task, init.as_deref(), &out)?,
        Command::Lid { config, task, model, out } => commands::lid(config.as_deref(), task, &model, &out)?,
        Command::Update { model, lid, proposal, strategy, out } => {
            commands::update(&model, &lid, &proposal, &strategy, &out)?
        }
        Command::Continual { config, algorithm, max_calls, seeds, out_dir, format } => {
            commands::continual(ContinualArgs {
                config: config.as_deref(),
                algorithm: &algorithm,
                max_calls,
                seeds: seeds.map(|s| s.0),
                out_dir,
                format: format.into(),
            })?
        }
        Command::Certify { config, task, lid, data } => commands::certify(config.as_deref(), task, &lid, data.as_deref())?,
        Command::Report { inputs, format, out_dir, stem } => {
            match commands::report(&inputs, format.into(), out_dir.as_deref(), &stem)? {
                ReportOutput::Written(v) => v,
                ReportOutput::Text(t) => return emit(&t),
            }
        }
    };
    print_json(&summary)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::config(e.kind().to_string() + ": " + e.render().to_string().trim());
            eprintln!("{}", err.to_json());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
