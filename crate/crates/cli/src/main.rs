use std::path::PathBuf;
use std::process::ExitCode;

use bdc_estim_cli::commands;
use clap::{Args, Parser, Subcommand};

/// Sensorless speed, temperature and resistance estimation for a brushed DC
/// motor.
#[derive(Parser)]
#[command(name = "bdc-estim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Replace every seed in the configuration (testing only).
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the duty cycle and write the clean trajectory CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "trajectory.csv")]
        out: PathBuf,
    },
    /// Add measurement noise to a trajectory and write the training dataset.
    Dataset {
        #[command(flatten)]
        common: Common,
        /// Clean trajectory CSV.
        trajectory: PathBuf,
        #[arg(long, default_value = "dataset.csv")]
        out: PathBuf,
    },
    /// Train the network on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV.
        dataset: PathBuf,
        /// Model file to write.
        #[arg(long, default_value = "model.txt")]
        out: PathBuf,
        /// Training history CSV; defaults to `train_history.csv` next to the model.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Evaluate a model against a clean trajectory.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Model file.
        model: PathBuf,
        /// Clean trajectory CSV.
        trajectory: PathBuf,
        /// Report directory.
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Run the whole pipeline and check the error thresholds.
    Run {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { common, out } => commands::cmd_simulate(&common.config, &out, common.seed_override),
        Command::Dataset {
            common,
            trajectory,
            out,
        } => commands::cmd_dataset(&common.config, &trajectory, &out, common.seed_override),
        Command::Train {
            common,
            dataset,
            out,
            history,
        } => {
            let history = history.unwrap_or_else(|| out.with_file_name("train_history.csv"));
            commands::cmd_train(&common.config, &dataset, &out, &history, common.seed_override)
        }
        Command::Eval {
            common,
            model,
            trajectory,
            out,
        } => commands::cmd_eval(&common.config, &model, &trajectory, &out, common.seed_override),
        Command::Run { common, out } => commands::cmd_run(&common.config, &out, common.seed_override),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
