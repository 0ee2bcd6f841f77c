//! Operator commands over `agentrl-core`: training runs, evaluation, the
//! rollout-strategy study, a standalone controller service and reports.
//!
//! Each command is a plain function so tests can drive it in-process; the
//! `agentrl` binary only parses flags and maps errors to exit codes.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub mod eval;
pub mod policy;
pub mod report;
pub mod rundir;
pub mod serve;
pub mod study;
pub mod train;

pub use rundir::RunManifest;

/// Environment variable read for the log filter (`info` when unset).
pub const LOG_ENV: &str = "AGENTRL_LOG_LEVEL";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("training aborted: {0}")]
    NonFinite(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    /// 2 for bad input, 3 for a numerically aborted run, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Bind { .. } => 2,
            CliError::NonFinite(_) => 3,
            CliError::Io { .. } | CliError::Failed(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Async,
    Sync,
}

#[derive(Debug, Parser)]
#[command(name = "agentrl", version, about = "Asynchronous multi-task agentic RL at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy and write a fresh run directory under --out.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Success rate of a policy snapshot per task, as CSV.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "bisect,kvstore,gridtext")]
        tasks: Vec<String>,
        /// Number of repeated passes over the evaluation samples.
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        samples: u64,
        #[arg(long, default_value_t = 0.8)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// pass@k of single, mix and cross-policy sampling for two snapshots.
    RolloutStudy {
        #[arg(long)]
        policy_a: PathBuf,
        #[arg(long)]
        policy_b: PathBuf,
        #[arg(long, default_value = "kvstore")]
        task: String,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        k: Vec<usize>,
        /// Attempts per sample for each strategy.
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        samples: u64,
        #[arg(long, default_value_t = 0.8)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the environment controller over TCP until interrupted.
    ServeController {
        #[arg(long, default_value = "127.0.0.1:7070")]
        bind: String,
        #[arg(long, default_value_t = 2)]
        workers: usize,
        #[arg(long, default_value_t = 64)]
        capacity: usize,
        /// Seconds before an idle session is reaped.
        #[arg(long, default_value_t = 30.0)]
        interaction_timeout: f64,
        /// Stop after this many seconds instead of waiting for Ctrl-C.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Throughput summary of a finished run directory, as JSON.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Write a reference policy snapshot.
    MakePolicy {
        #[arg(long, value_enum)]
        kind: policy::PolicyKind,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Installs the stderr logger; safe to call more than once.
pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env(LOG_ENV)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(format!("writing {}", p.display()), e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Runs one parsed command.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train {
            config,
            out,
            seed,
            mode,
            steps,
        } => {
            let overrides = train::Overrides { seed, mode, steps };
            let done = train::cmd_train(config.as_deref(), &out, &overrides)?;
            println!("{}", done.run_dir.display());
            Ok(())
        }
        Command::Eval {
            policy,
            tasks,
            n,
            samples,
            temperature,
            seed,
            out,
        } => {
            let p = policy::load(&policy)?;
            let opts = eval::EvalOptions {
                tasks,
                repeats: n,
                samples,
                temperature,
                seed,
            };
            let table = eval::cmd_eval(&p, &opts)?;
            emit(&eval::to_csv(&table, &opts)?, out.as_ref())
        }
        Command::RolloutStudy {
            policy_a,
            policy_b,
            task,
            k,
            n,
            samples,
            temperature,
            seed,
            out,
        } => {
            let a = policy::load(&policy_a)?;
            let b = policy::load(&policy_b)?;
            let opts = study::StudyOptions {
                task,
                ks: k,
                n,
                samples: (0..samples).collect(),
                temperature,
                seed,
            };
            let rows = study::cmd_rollout_study(a, b, &opts)?;
            emit(&study::to_csv(&rows)?, out.as_ref())
        }
        Command::ServeController {
            bind,
            workers,
            capacity,
            interaction_timeout,
            duration,
        } => {
            let opts = serve::ServeOptions {
                bind,
                workers,
                capacity,
                interaction_timeout,
                duration,
            };
            let stop = serve::interrupt_flag();
            let summary = serve::cmd_serve_controller(&opts, stop, |addr| println!("listening on {addr}"))?;
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
            Ok(())
        }
        Command::Report { run } => {
            let r = report::cmd_report(&run)?;
            println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
            Ok(())
        }
        Command::MakePolicy { kind, out } => policy::save(&policy::make(kind), &out),
    }
}
