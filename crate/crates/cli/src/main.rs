//! `pdm` — simulate telemetry, train and evaluate forecasters, predict
//! downtime and serve the HTTP API.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or config error,
//! 3 runtime failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "pdm", version, about = "Predictive maintenance for tubing machines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic telemetry into a data directory.
    Simulate {
        /// TOML config; its `[sim]` section drives the generator.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Length of the run: `1500`, `1500ms`, `90s`, `30m` or `2h`.
        #[arg(long, value_parser = commands::parse_duration)]
        duration: i64,
        /// Data directory to create; receives `telemetry.log`.
        #[arg(long)]
        out: PathBuf,
        /// Replace an existing telemetry log.
        #[arg(long)]
        force: bool,
    },
    /// Stream a telemetry log, in time order, into a store or a running server.
    Replay {
        #[arg(long)]
        file: PathBuf,
        /// Data directory, or a server URL such as `http://127.0.0.1:8080`.
        #[arg(long)]
        target: String,
        /// Readings per second; 0 sends as fast as possible.
        #[arg(long, default_value_t = 0.0)]
        rate: f64,
        #[arg(long, default_value_t = 500)]
        batch: usize,
    },
    /// Train the LSTM (and forest member) on every machine in a data directory.
    Train {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        model_out: PathBuf,
        /// TOML config; `[pipeline]`, `[train]` and `[forest]` are used.
        #[arg(long)]
        train_config: Option<PathBuf>,
        /// Per-epoch loss CSV; defaults to `<model-out>.report.csv`.
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// Score a trained model and the persistence baseline on the validation split.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        /// Also write the scores as JSON.
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// Predict downtime for the machines in a data directory; prints JSON.
    Forecast {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        /// Forecast steps (grid periods).
        #[arg(long, default_value_t = 60)]
        horizon: usize,
        /// Only this machine.
        #[arg(long)]
        machine: Option<String>,
        /// Supplies the default envelope; per-machine envelopes saved by the
        /// server take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate { config, duration, out, force } => commands::simulate(config.as_deref(), duration, &out, force),
        Command::Replay { file, target, rate, batch } => commands::replay(&file, &target, rate, batch),
        Command::Train { data_dir, model_out, train_config, report_out } => {
            commands::train(&data_dir, &model_out, train_config.as_deref(), report_out.as_deref())
        }
        Command::Evaluate { model, data_dir, report_out } => commands::evaluate(&model, &data_dir, report_out.as_deref()),
        Command::Forecast { model, data_dir, horizon, machine, config } => {
            commands::forecast(&model, &data_dir, horizon, machine.as_deref(), config.as_deref())
        }
        Command::Serve { config } => commands::serve(config.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
