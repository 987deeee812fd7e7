//! Subcommand implementations. Each returns the process exit code or a
//! [`CliError`] whose [`CliError::exit_code`] applies.

use std::fs;
use std::path::{Path, PathBuf};

use bdc_estim::estimator::{self, Estimates, EvalReport, ExperimentConfig};
use bdc_estim::motor::MotorParams;
use bdc_estim::simulate::Trajectory;

use crate::config::{write_params, RunConfig};
use crate::error::{CliError, EXIT_OK, EXIT_THRESHOLD};
use crate::formats;

pub const RESOLVED_CONFIG: &str = "resolved-config";

pub fn load_config(path: &Path, seed_override: Option<u64>) -> Result<RunConfig, CliError> {
    let text = formats::read_text(path)?;
    let mut config = RunConfig::parse(&text).map_err(|source| CliError::Config {
        path: path.to_owned(),
        source,
    })?;
    if let Some(seed) = seed_override {
        config.override_seeds(seed);
    }
    Ok(config)
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Directory holding `file`, created if needed.
fn parent_dir(file: &Path) -> Result<PathBuf, CliError> {
    let dir = match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_owned(),
        _ => PathBuf::from("."),
    };
    ensure_dir(&dir)?;
    Ok(dir)
}

fn write_resolved(dir: &Path, config: &RunConfig) -> Result<(), CliError> {
    formats::write_text(&dir.join(RESOLVED_CONFIG), &config.resolved())
}

fn resolve_params(e: &ExperimentConfig) -> Result<MotorParams, CliError> {
    e.motor.resolve().map_err(|err| CliError::Numeric {
        stage: "calibrate",
        message: err.to_string(),
    })
}

/// Calibrates, integrates the duty profile and writes the clean trajectory.
pub fn cmd_simulate(config: &Path, out: &Path, seed_override: Option<u64>) -> Result<i32, CliError> {
    let cfg = load_config(config, seed_override)?;
    let dir = parent_dir(out)?;
    write_resolved(&dir, &cfg)?;
    let (_, traj) = estimator::simulate(&cfg.experiment)?;
    formats::write_text(out, &formats::trajectory_csv(&traj))?;
    Ok(EXIT_OK)
}

/// Adds measurement noise to a trajectory and writes the training dataset.
pub fn cmd_dataset(config: &Path, traj_in: &Path, out: &Path, seed_override: Option<u64>) -> Result<i32, CliError> {
    let cfg = load_config(config, seed_override)?;
    let dir = parent_dir(out)?;
    write_resolved(&dir, &cfg)?;
    let clean = formats::read_trajectory(traj_in)?;
    let noisy = estimator::add_noise(&cfg.experiment, &clean)?;
    let ds = estimator::build_dataset(&cfg.experiment, &noisy)?;
    formats::write_text(out, &formats::dataset_csv(&ds))?;
    Ok(EXIT_OK)
}

/// Trains the configured network. Hitting the iteration cap is not an error;
/// the history file carries a warning line instead.
pub fn cmd_train(
    config: &Path,
    dataset_in: &Path,
    model_out: &Path,
    history_out: &Path,
    seed_override: Option<u64>,
) -> Result<i32, CliError> {
    let cfg = load_config(config, seed_override)?;
    let dir = parent_dir(model_out)?;
    parent_dir(history_out)?;
    write_resolved(&dir, &cfg)?;
    let ds = formats::read_dataset(dataset_in)?;
    let (model, minimum) = estimator::train_model(&cfg.experiment, &ds)?;
    formats::write_text(model_out, &formats::model_text(&model))?;
    formats::write_text(history_out, &formats::history_csv(&minimum.history))?;
    if minimum.history.warning() {
        eprintln!(
            "warning: training stopped at max_iterations ({})",
            cfg.experiment.train.max_iterations
        );
    }
    Ok(EXIT_OK)
}

fn write_report(
    dir: &Path,
    cfg: &RunConfig,
    clean: &Trajectory,
    estimates: &Estimates,
    report: &EvalReport,
) -> Result<bool, CliError> {
    let checks = cfg.thresholds.check(report);
    formats::write_text(
        &dir.join("report.txt"),
        &formats::report_text(report, &checks, cfg.ambient),
    )?;
    formats::write_text(&dir.join("report.csv"), &formats::report_csv(report))?;
    for (name, text) in formats::figure_csvs(clean, estimates, cfg.ambient) {
        formats::write_text(&dir.join(name), &text)?;
    }
    Ok(checks.iter().all(|c| c.pass))
}

/// Scores a trained model on a clean trajectory, with the configured noise
/// applied to its voltage and current.
pub fn cmd_eval(
    config: &Path,
    model_in: &Path,
    traj_in: &Path,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<i32, CliError> {
    let cfg = load_config(config, seed_override)?;
    ensure_dir(out_dir)?;
    write_resolved(out_dir, &cfg)?;
    let model = formats::read_model(model_in)?;
    let clean = formats::read_trajectory(traj_in)?;
    let params = resolve_params(&cfg.experiment)?;
    let noisy = estimator::add_noise(&cfg.experiment, &clean)?;
    let estimates = model.predict(&noisy)?;
    let report = estimator::score(&params, &clean, &estimates, cfg.experiment.window_fraction)?;
    write_report(out_dir, &cfg, &clean, &estimates, &report)?;
    Ok(EXIT_OK)
}

/// Full pipeline. Prints the steady-state errors and returns
/// [`EXIT_THRESHOLD`] when any configured threshold is exceeded.
pub fn cmd_run(config: &Path, out_dir: &Path, seed_override: Option<u64>) -> Result<i32, CliError> {
    let cfg = load_config(config, seed_override)?;
    ensure_dir(out_dir)?;
    write_resolved(out_dir, &cfg)?;
    let exp = estimator::run_experiment(&cfg.experiment)?;
    let file = |name: &str| out_dir.join(name);
    formats::write_text(&file("motor_params.txt"), &write_params(&exp.params))?;
    formats::write_text(&file("trajectory.csv"), &formats::trajectory_csv(&exp.clean))?;
    formats::write_text(&file("noisy_trajectory.csv"), &formats::trajectory_csv(&exp.noisy))?;
    formats::write_text(&file("dataset.csv"), &formats::dataset_csv(&exp.dataset))?;
    formats::write_text(&file("model.txt"), &formats::model_text(&exp.model))?;
    formats::write_text(&file("train_history.csv"), &formats::history_csv(&exp.training.history))?;
    let pass = write_report(out_dir, &cfg, &exp.clean, &exp.estimates, &exp.report)?;

    let r = &exp.report;
    println!(
        "speed        steady-state error {:+.4} rpm",
        r.speed_rpm.steady_state_error
    );
    println!(
        "temperature  steady-state error {:+.4} degC",
        r.temperature.steady_state_error
    );
    println!(
        "resistance   steady-state error {:+.6} ohm",
        r.resistance.steady_state_error
    );
    if exp.training.history.warning() {
        println!("training stopped at max_iterations");
    }
    println!("{}", if pass { "PASS" } else { "FAIL" });
    Ok(if pass { EXIT_OK } else { EXIT_THRESHOLD })
}
