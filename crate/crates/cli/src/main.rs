use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use isf_cli::commands::{cmd_codecs, cmd_model, cmd_run, cmd_sweep, CliError, Invocation};
use isf_cli::config::{ConfigError, ExperimentConfig};
use isf_core::orchestrator::{worker_main, Deployment, WorkerLaunch};

#[derive(Parser)]
#[command(name = "isf", version, about = "In-situ workflow experiments: run, sweep, model, compare codecs")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Seed for the producer and checkpoint generators.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Where in-situ workers run; overrides `run.deployment`.
    #[arg(long, global = true, value_enum)]
    deployment: Option<DeploymentArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one workflow as configured in `[run]`.
    Run {
        /// Fit scaling curves from a sweep CSV (for `auto` splits).
        #[arg(long)]
        fit: Option<PathBuf>,
    },
    /// Run the `[sweep]` grid of worker splits and cadences.
    Sweep,
    /// Scan predicted totals over every split.
    Model {
        /// Fit scaling curves from a sweep CSV instead of `[model]`.
        #[arg(long)]
        fit: Option<PathBuf>,
    },
    /// Compare codecs on synthetic checkpoints from `[checkpoint]`.
    Codecs,
    #[command(hide = true)]
    Worker { job: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum DeploymentArg {
    Threads,
    Processes,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ISF_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            // Exit code 2 is reserved for task failures.
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let code = match real_main(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code.clamp(0, 255) as u8)
}

fn real_main(cli: Cli) -> Result<(), CliError> {
    if let Command::Worker { job } = &cli.command {
        return match worker_main(job) {
            0 => Ok(()),
            code => std::process::exit(code),
        };
    }
    let config_path = cli.config.ok_or(ConfigError::Missing("--config"))?;
    let config_bytes = std::fs::read(&config_path).map_err(|e| ConfigError::Io {
        path: config_path.clone(),
        reason: e.to_string(),
    })?;
    let text = String::from_utf8_lossy(&config_bytes);
    let mut config = ExperimentConfig::parse(&text, &config_path)?;
    if let Some(seed) = cli.seed {
        config.override_seed(seed);
    }
    if let (Some(d), Some(run)) = (cli.deployment, config.run.as_mut()) {
        run.deployment = match d {
            DeploymentArg::Threads => Deployment::Threads,
            DeploymentArg::Processes => Deployment::Processes,
        };
    }
    let output = cli.output.unwrap_or_else(|| config.output_dir.clone());
    let program = std::env::current_exe().map_err(|e| CliError::Io {
        path: PathBuf::from("current executable"),
        reason: e.to_string(),
    })?;
    let inv = Invocation {
        config,
        config_path,
        config_bytes,
        output,
        worker: WorkerLaunch {
            program,
            args: vec!["worker".into()],
        },
    };
    match &cli.command {
        Command::Run { fit } => cmd_run(&inv, fit.as_deref()),
        Command::Sweep => cmd_sweep(&inv),
        Command::Model { fit } => cmd_model(&inv, fit.as_deref()),
        Command::Codecs => cmd_codecs(&inv),
        Command::Worker { .. } => unreachable!(),
    }
}
