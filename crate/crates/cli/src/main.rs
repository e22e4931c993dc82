//! `gvit`: synthesise or ingest sensor recordings, train, evaluate and
//! predict.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration or usage error,
//! 3 I/O error, 4 numeric failure, 5 data error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gvit::Error;

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "gvit", version, about = "Gas identification and concentration estimation with GViT")]
struct Cli {
    /// TOML run configuration; defaults apply to missing fields.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed, overriding the config file.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic recording and its manifest.
    Synth {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long)]
        overwrite: bool,
    },
    /// Turn the recordings listed in a manifest into a split dataset.
    Ingest {
        manifest: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long)]
        overwrite: bool,
    },
    /// Cross-validated training on a dataset directory.
    Train {
        dataset: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Train only this fold.
        #[arg(long, value_name = "K")]
        fold: Option<usize>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Score a trained run on the held-out test split.
    Eval {
        run: PathBuf,
        /// Fold checkpoint to use; defaults to the best validation fold.
        #[arg(long, value_name = "K")]
        fold: Option<usize>,
        /// Also score the KNN comparator.
        #[arg(long)]
        with_knn: bool,
        /// Report directory; defaults to RUN/eval.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Identify the gases in one recording slice.
    Predict {
        run: PathBuf,
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Air recording used as the baseline; defaults to air rows in the slice.
        #[arg(long, value_name = "FILE")]
        air: Option<PathBuf>,
        #[arg(long, value_name = "K")]
        fold: Option<usize>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io { .. } => 3,
        Error::NonFinite(_) => 4,
        Error::Data(_) | Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => 5,
        Error::Dimension { .. } | Error::Domain(_) | Error::Contract(_) => 1,
    }
}

fn run(cli: Cli) -> gvit::Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Synth { out, overwrite } => commands::synth(&cfg, &out, overwrite),
        Command::Ingest {
            manifest,
            out,
            overwrite,
        } => commands::ingest(&cfg, &manifest, &out, overwrite),
        Command::Train {
            dataset,
            out,
            fold,
            overwrite,
        } => commands::train(&cfg, &dataset, &out, fold, overwrite),
        Command::Eval {
            run,
            fold,
            with_knn,
            out,
        } => commands::eval(&cfg, &run, fold, with_knn, out.as_deref()),
        Command::Predict {
            run,
            input,
            air,
            fold,
            out,
        } => commands::predict(&cfg, &run, &input, air.as_deref(), fold, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
