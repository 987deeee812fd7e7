use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bdc_estim::cfnn::{self, InitScheme, Topology};
use bdc_estim::dataset::{make_dataset, Dataset};
use bdc_estim_cli::commands::RESOLVED_CONFIG;
use bdc_estim_cli::formats;
use bdc_estim_cli::RunConfig;
use tempfile::TempDir;

const SMALL: &str = "\
[motor]
h = 1800
[duty]
duration = 2080
v_a = 240
t_l = 11
[noise]
seed = 1
[dataset]
delay_taps = 2
[network]
hidden = 6
init_seed = 3
[train]
max_iterations = 150
";

const RELAXED: &str = "\
[eval]
speed_rpm = 5
temperature = 5
resistance = 0.1
speed_percent = 5
temperature_percent = 10
resistance_percent = 5
";

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bdc-estim"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup(config: &str) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("run.conf");
    fs::write(&path, config).unwrap();
    (dir, path)
}

fn data_rows(csv: &str) -> usize {
    csv.lines().filter(|l| !l.starts_with('#')).count() - 1
}

#[test]
fn malformed_key_exits_2_naming_the_line() {
    let (dir, cfg) = setup("[noise]\nseed = 1\n[network]\ninit_seed = 7\nhiden = 4\n");
    let o = bin(&["simulate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 5"), "{}", stderr(&o));
    let (dir, cfg) = setup("[noise]\nseed = 1\n[network]\ninit_seed = 7\n[duty]\ndt = fast\n");
    let o = bin(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 6"), "{}", stderr(&o));
}

#[test]
fn missing_seed_is_a_config_error() {
    let (dir, cfg) = setup("[noise]\nseed = 1\n");
    let o = bin(&["simulate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("init_seed"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_exits_4() {
    let dir = TempDir::new().unwrap();
    let o = bin(&["simulate", "--config", "nope.conf"], dir.path());
    assert_eq!(code(&o), 4);
}

#[test]
fn unstable_step_exits_3_naming_the_stage() {
    let (dir, cfg) =
        setup(&format!("{SMALL}[duty]\n").replace("[duty]\nduration", "[duty]\ndt = 0.5\nrecord_every = 1\nduration"));
    let o = bin(&["simulate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2, "duplicate section must be rejected: {}", stderr(&o));
    let (dir, cfg) = setup(&SMALL.replace("[duty]\n", "[duty]\ndt = 0.5\nrecord_every = 1\n"));
    let o = bin(&["simulate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("simulate"), "{}", stderr(&o));
}

#[test]
fn simulate_writes_header_and_resolved_config() {
    let (dir, cfg) = setup(SMALL);
    let o = bin(
        &["simulate", "--config", cfg.to_str().unwrap(), "--out", "sim/traj.csv"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("sim/traj.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "time,v_a,t_l,i_a,omega,theta,r_a");
    assert_eq!(data_rows(&text), 4161);
    let resolved = fs::read_to_string(dir.path().join("sim").join(RESOLVED_CONFIG)).unwrap();
    assert_eq!(RunConfig::parse(&resolved).unwrap(), RunConfig::parse(SMALL).unwrap());
    assert!(resolved.contains("h = 1800.0") && resolved.contains("wolfe_c2 = 0.9"));
}

#[test]
fn zero_input_duty_keeps_states_at_zero() {
    let (dir, cfg) = setup(
        &SMALL
            .replace("v_a = 240\nt_l = 11", "v_a = 0\nt_l = 0")
            .replace("2080", "20"),
    );
    let o = bin(
        &["simulate", "--config", cfg.to_str().unwrap(), "--out", "t.csv"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let traj = formats::read_trajectory(&dir.path().join("t.csv")).unwrap();
    assert_eq!(traj.len(), 41);
    assert!(traj.i_a.iter().chain(&traj.omega).chain(&traj.theta).all(|x| *x == 0.0));
    assert!(traj.r_a.iter().all(|r| *r == 3.5));
}

fn simulate_short(dir: &Path, cfg: &Path) -> PathBuf {
    let o = bin(&["simulate", "--config", cfg.to_str().unwrap(), "--out", "t.csv"], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.join("t.csv")
}

#[test]
fn zero_sigma_dataset_is_the_clean_dataset() {
    let config = SMALL
        .replace("[noise]\n", "[noise]\nsigma_v = 0\nsigma_i = 0\n")
        .replace("duration = 2080", "duration = 100");
    let (dir, cfg) = setup(&config);
    let traj = simulate_short(dir.path(), &cfg);
    let o = bin(
        &["dataset", "--config", cfg.to_str().unwrap(), "t.csv", "--out", "d.csv"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let clean = formats::read_trajectory(&traj).unwrap();
    let expected = formats::dataset_csv(&make_dataset(&clean, 10, 2).unwrap());
    assert_eq!(fs::read_to_string(dir.path().join("d.csv")).unwrap(), expected);
}

#[test]
fn dataset_is_seed_deterministic() {
    let (dir, cfg) = setup(&SMALL.replace("duration = 2080", "duration = 100"));
    simulate_short(dir.path(), &cfg);
    let c = cfg.to_str().unwrap();
    for (out, seed) in [("a.csv", "5"), ("b.csv", "5"), ("c.csv", "6")] {
        let o = bin(
            &["dataset", "--config", c, "t.csv", "--out", out, "--seed-override", seed],
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let read = |n: &str| fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_ne!(read("a.csv"), read("c.csv"));
    let resolved = fs::read_to_string(dir.path().join(RESOLVED_CONFIG)).unwrap();
    assert!(resolved.contains("seed = 6") && resolved.contains("init_seed = 6"));
}

#[test]
fn decimation_row_count() {
    // 10 s at 0.1 s spacing is 101 samples; every 7th keeps indices 0..=98 (15
    // rows) and 3 delay taps consume the first 3
    let config = SMALL
        .replace("duration = 2080", "duration = 10")
        .replace("[duty]\n", "[duty]\nrecord_every = 100\n")
        .replace("delay_taps = 2", "delay_taps = 3\ndecimate = 7");
    let (dir, cfg) = setup(&config);
    simulate_short(dir.path(), &cfg);
    let o = bin(
        &["dataset", "--config", cfg.to_str().unwrap(), "t.csv", "--out", "d.csv"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("d.csv")).unwrap();
    assert_eq!(data_rows(&text), 12);
    let ds = formats::read_dataset(&dir.path().join("d.csv")).unwrap();
    assert_eq!((ds.n_inputs, ds.delay_taps, ds.tap_stride), (8, 3, 7));
}

const PLANTED: &str = "\
[noise]
seed = 1
[dataset]
delay_taps = 0
[network]
hidden = 3
init_seed = 11
[train]
loss_goal = 1e-5
grad_tol = 1e-12
max_iterations = 2000
";

fn planted_dataset(path: &Path) {
    let topo = Topology::cascade(vec![2, 3, 3]).unwrap();
    let planted = cfnn::init_weights(&topo, 40, InitScheme::UniformScaled);
    let rows = 60;
    let inputs: Vec<f64> = (0..2 * rows).map(|k| (0.37 * k as f64 + 0.2).sin()).collect();
    let mut targets = Vec::new();
    for r in 0..rows {
        targets.extend(cfnn::forward(&topo, &planted, &inputs[2 * r..2 * r + 2]).unwrap());
    }
    let ds = Dataset::from_normalized(inputs, targets, 2, 3).unwrap();
    fs::write(path, formats::dataset_csv(&ds)).unwrap();
}

#[test]
fn planted_dataset_reaches_loss_goal() {
    let (dir, cfg) = setup(PLANTED);
    planted_dataset(&dir.path().join("d.csv"));
    let o = bin(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "d.csv",
            "--out",
            "m/model.txt",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let history = fs::read_to_string(dir.path().join("m/train_history.csv")).unwrap();
    assert!(
        history.starts_with("# stop = loss_goal\n"),
        "{}",
        history.lines().last().unwrap()
    );
    assert!(!history.contains("warning"));
    let last: f64 = history
        .lines()
        .last()
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!(last <= 1e-5);
    assert!(dir.path().join("m").join(RESOLVED_CONFIG).exists());
    let model = formats::read_model(&dir.path().join("m/model.txt")).unwrap();
    assert_eq!(model.params.len(), 3 * 3 + 3 * 6);
}

#[test]
fn iteration_cap_warns_in_history() {
    let (dir, cfg) = setup(&PLANTED.replace("max_iterations = 2000", "max_iterations = 3"));
    planted_dataset(&dir.path().join("d.csv"));
    let o = bin(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "d.csv",
            "--history",
            "h.csv",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let history = fs::read_to_string(dir.path().join("h.csv")).unwrap();
    assert!(history.lines().any(|l| l.starts_with("# warning")));
    assert_eq!(data_rows(&history), 4);
    assert!(stderr(&o).contains("max_iterations"));
}

#[test]
fn mismatched_dataset_is_rejected() {
    let (dir, cfg) = setup(&PLANTED.replace("delay_taps = 0", "delay_taps = 1"));
    planted_dataset(&dir.path().join("d.csv"));
    let o = bin(&["train", "--config", cfg.to_str().unwrap(), "d.csv"], dir.path());
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn eval_with_missing_or_corrupt_model_exits_4() {
    let (dir, cfg) = setup(&SMALL.replace("duration = 2080", "duration = 100"));
    simulate_short(dir.path(), &cfg);
    let c = cfg.to_str().unwrap();
    let o = bin(&["eval", "--config", c, "missing.txt", "t.csv"], dir.path());
    assert_eq!(code(&o), 4);
    fs::write(dir.path().join("bad.txt"), "bdc-estim model v1\nlayers = 6, 6\n").unwrap();
    let o = bin(&["eval", "--config", c, "bad.txt", "t.csv"], dir.path());
    assert_eq!(code(&o), 4);
    let o = bin(&["train", "--config", c, "missing.csv"], dir.path());
    assert_eq!(code(&o), 4);
}

#[test]
fn eval_writes_reports_with_exact_columns() {
    let (dir, cfg) = setup(&format!("{SMALL}{RELAXED}"));
    let c = cfg.to_str().unwrap();
    assert_eq!(code(&bin(&["run", "--config", c, "--out", "run"], dir.path())), 0);
    let o = bin(
        &[
            "eval",
            "--config",
            c,
            "run/model.txt",
            "run/trajectory.csv",
            "--out",
            "rep",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep = fs::read_to_string(dir.path().join("rep/report.csv")).unwrap();
    assert_eq!(
        rep.lines().next().unwrap(),
        "quantity,unit,rmse,max_abs_error,steady_state_error,percent_of_final,final_value"
    );
    assert_eq!(rep.lines().count(), 6);
    // same noise seed and model as the pipeline run, so the report matches
    assert_eq!(rep, fs::read_to_string(dir.path().join("run/report.csv")).unwrap());
    let fig5 = fs::read_to_string(dir.path().join("rep/fig5_errors.csv")).unwrap();
    assert!(fig5.starts_with("time,speed_error_rpm,temperature_error,resistance_error,"));
    assert!(dir.path().join("rep").join(RESOLVED_CONFIG).exists());
}

#[test]
fn run_prints_errors_and_threshold_verdict() {
    let (dir, cfg) = setup(&format!("{SMALL}{RELAXED}"));
    let o = bin(&["run", "--config", cfg.to_str().unwrap(), "--out", "ok"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("rpm") && stdout.contains("degC") && stdout.contains("ohm"));
    assert_eq!(stdout.lines().last().unwrap(), "PASS");
    assert!(dir.path().join("ok").join(RESOLVED_CONFIG).exists());

    let (dir, cfg) = setup(&format!("{SMALL}[eval]\ntemperature = 1e-9\n"));
    let o = bin(&["run", "--config", cfg.to_str().unwrap(), "--out", "fail"], dir.path());
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().last().unwrap(), "FAIL");
    let report = fs::read_to_string(dir.path().join("fail/report.txt")).unwrap();
    assert!(report.contains("FAIL"));
}
