//! `kinegest`: the gesture pipeline from the command line.
//!
//! Exit status is 0 on success, 1 on a usage error and 2 when input data
//! cannot be read or processed. Log verbosity follows `KINEGEST_LOG`
//! (e.g. `KINEGEST_LOG=debug`).

mod commands;
mod svg;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kinegest::defaults;
use kinegest::evaluation::objective::Measure;
use kinegest::forest::MaxFeatures;

#[derive(Debug, Parser)]
#[command(name = "kinegest", version, about = "Kinesthetic gesture recognition pipeline")]
pub struct Cli {
    /// Worker threads for data-parallel stages (default: all cores).
    /// Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Arm definition (TOML) replacing the bundled 7-DoF chain.
    #[arg(long, global = true, value_name = "FILE")]
    pub chain: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset: one CSV per recording plus manifest.json.
    Synth {
        #[arg(long, default_value_t = defaults::PARTICIPANTS)]
        participants: u32,
        #[arg(long, default_value_t = defaults::TRIALS)]
        trials: u32,
        #[arg(long, default_value_t = defaults::DATA_SEED)]
        seed: u64,
        /// Telemetry rate in Hz.
        #[arg(long, default_value_t = 100.0)]
        sample_rate: f64,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Extract the 84-feature table of a dataset as CSV.
    Features {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Fit a random forest on every recording and save it as JSON.
    Train {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value_t = defaults::MODEL_SEED)]
        seed: u64,
        #[command(flatten)]
        forest: ForestArgs,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Run an evaluation protocol and write its report as JSON.
    Eval {
        #[arg(long, value_enum)]
        protocol: ProtocolArg,
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value_t = defaults::EVAL_SEED)]
        seed: u64,
        /// Folds for kfold (default 5) or participant groups for
        /// cross-subject (default 2).
        #[arg(long)]
        folds: Option<usize>,
        /// Share of each class used for training by the inverse protocol.
        #[arg(long, default_value_t = 0.2, value_parser = fraction)]
        train_fraction: f64,
        /// How the inverse protocol selects training rows.
        #[arg(long, value_enum, default_value_t = InverseArg::Folds)]
        inverse_mode: InverseArg,
        #[command(flatten)]
        forest: ForestArgs,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Per-gesture medians and IQRs, Friedman test and Bonferroni-corrected
    /// pairwise Wilcoxon tests over participant medians.
    Stats {
        #[arg(long, value_parser = measure)]
        measure: Measure,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Confusion matrix of an evaluation report as CSV and SVG.
    Report {
        /// Report written by `eval`.
        #[arg(long, value_name = "FILE")]
        eval: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Start the live service (WebSocket at /ws).
    Serve {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Directory of browser assets served at /.
        #[arg(long, value_name = "DIR")]
        static_dir: Option<PathBuf>,
        /// Directory receiving one JSONL log of client messages per session.
        #[arg(long, value_name = "DIR")]
        stroke_log: Option<PathBuf>,
    },
    /// Run a logged session (JSONL of client messages) through the live
    /// pipeline offline.
    Replay {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long, value_name = "FILE")]
        log: PathBuf,
        /// Every server reply, one JSON object per line.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct Input {
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Feature table written by `features`.
    #[arg(long, value_name = "FILE")]
    pub features: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ForestArgs {
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    /// sqrt, all, or a count.
    #[arg(long, default_value = "sqrt", value_parser = max_features)]
    pub max_features: MaxFeatures,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub min_samples_leaf: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProtocolArg {
    Kfold,
    Inverse,
    CrossSubject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InverseArg {
    Folds,
    SingleDraw,
}

fn fraction(s: &str) -> Result<f64, String> {
    let f: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if f > 0.0 && f < 1.0 {
        Ok(f)
    } else {
        Err(format!("{f} is not in (0, 1)"))
    }
}

fn measure(s: &str) -> Result<Measure, String> {
    s.parse()
}

fn max_features(s: &str) -> Result<MaxFeatures, String> {
    match s {
        "sqrt" => Ok(MaxFeatures::Sqrt),
        "all" => Ok(MaxFeatures::All),
        n => match n.parse::<usize>() {
            Ok(k) if k > 0 => Ok(MaxFeatures::Fixed(k)),
            _ => Err(format!("{n:?} is not sqrt, all or a positive count")),
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("KINEGEST_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool is configured once");
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
