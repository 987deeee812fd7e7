use bdc_estim::bfgs::{self, TrainConfig};
use bdc_estim::cfnn::{self, InitScheme, Topology};
use bdc_estim::dataset::{make_dataset, ColumnRange};
use bdc_estim::estimator::{
    self, score, DatasetConfig, Estimates, ExperimentConfig, Model, MotorSource, NetworkConfig, NoiseConfig,
    OutputMetrics,
};
use bdc_estim::motor::{CalibrationTargets, FixedParams, MotorParams, MotorState};
use bdc_estim::simulate::{integrate_rk4, DutyProfile, Trajectory};
use proptest::prelude::*;

/// A fast-heating machine so a full S1 run fits in a few thousand samples.
fn small_config(noise_fraction: f64, noise_seed: u64) -> ExperimentConfig {
    let fixed = FixedParams {
        h: 1800.0,
        ..FixedParams::default()
    };
    let motor = MotorSource::Calibrated {
        fixed,
        targets: CalibrationTargets::default(),
    };
    let params = motor.resolve().unwrap();
    ExperimentConfig {
        motor,
        duty: DutyProfile::s1(2080.0, 240.0, 11.0),
        init_state: MotorState::default(),
        dt: 1e-3,
        record_every: 500,
        noise: NoiseConfig::relative_to_rating(&params, noise_fraction, noise_seed),
        dataset: DatasetConfig {
            decimate: 10,
            delay_taps: 2,
        },
        network: NetworkConfig {
            hidden: vec![6],
            cascade: true,
            init_seed: 3,
            init: InitScheme::UniformScaled,
        },
        train: TrainConfig {
            max_iterations: 150,
            ..TrainConfig::default()
        },
        window_fraction: 0.1,
    }
}

fn short_trajectory() -> (MotorParams, Trajectory) {
    let cfg = small_config(0.0, 0);
    estimator::simulate(&ExperimentConfig {
        duty: DutyProfile::s1(200.0, 240.0, 11.0),
        ..cfg
    })
    .unwrap()
}

#[test]
fn decimation_row_count() {
    let (_, traj) = short_trajectory();
    assert_eq!(traj.len(), 401);
    // 401 samples keep every 7th: indices 0, 7, ..., 399 -> 58 kept; 3 taps drop 3 rows
    let ds = make_dataset(&traj, 7, 3).unwrap();
    assert_eq!(ds.len(), 55);
    assert_eq!(ds.n_inputs, 8);
    assert_eq!(ds.raw_target(0)[1], traj.theta[21]);
    let lag = ds.raw_input(0);
    assert!((lag[1] - traj.i_a[21]).abs() < 1e-12 && (lag[7] - traj.i_a[0]).abs() < 1e-12);
}

#[test]
fn self_evaluation_is_exactly_zero() {
    let (params, mut clean) = short_trajectory();
    let ds = make_dataset(&clean, 4, 2).unwrap();
    let topo = Topology::cascade(vec![6, 5, 3]).unwrap();
    let w = cfnn::init_weights(&topo, 11, InitScheme::UniformScaled);
    let model = Model::new(topo, w, &ds).unwrap();
    let est = model.predict(&clean).unwrap();
    let s = est.start;
    clean.omega[s..].copy_from_slice(&est.omega);
    clean.theta[s..].copy_from_slice(&est.theta);
    clean.r_a[s..].copy_from_slice(&est.r_a);
    let report = estimator::evaluate(&model, &params, &clean, &clean, 0.1).unwrap();
    for m in [report.speed, report.speed_rpm, report.temperature, report.resistance] {
        assert_eq!((m.rmse, m.max_abs_error, m.steady_state_error), (0.0, 0.0, 0.0));
    }
}

#[test]
fn planted_targets_are_learned_without_noise() {
    let (params, mut clean) = short_trajectory();
    let taps = 1;
    let stride = 4;
    let template = make_dataset(&clean, stride, taps).unwrap();
    let topo = Topology::cascade(vec![4, 4, 3]).unwrap();
    let planted = cfnn::init_weights(&topo, 21, InitScheme::UniformScaled);
    let truth = Model {
        topology: topo.clone(),
        params: planted.clone(),
        input_ranges: template.input_ranges.clone(),
        target_ranges: vec![
            ColumnRange { min: 0.0, max: 30.0 },
            ColumnRange { min: 0.0, max: 90.0 },
            ColumnRange { min: 3.0, max: 5.0 },
        ],
        delay_taps: taps,
        tap_stride: stride,
    };
    let est = truth.predict(&clean).unwrap();
    let s = est.start;
    clean.omega[s..].copy_from_slice(&est.omega);
    clean.theta[s..].copy_from_slice(&est.theta);
    clean.r_a[s..].copy_from_slice(&est.r_a);
    let ds = make_dataset(&clean, stride, taps).unwrap();
    let w0: Vec<f64> = planted
        .iter()
        .enumerate()
        .map(|(k, w)| w + 0.05 * ((k as f64) * 1.7).sin())
        .collect();
    let config = TrainConfig {
        loss_goal: 1e-20,
        grad_tol: 1e-13,
        max_iterations: 3000,
        ..TrainConfig::default()
    };
    let min = match bfgs::train(&topo, &ds, w0, &config) {
        Ok(m) => m,
        Err(bfgs::BfgsError::LineSearchFailed { partial: Some(m), .. }) => *m,
        Err(e) => panic!("{e}"),
    };
    let model = Model::new(topo, min.w, &ds).unwrap();
    let report = estimator::evaluate(&model, &params, &clean, &clean, 0.1).unwrap();
    for (m, range) in [report.speed, report.temperature, report.resistance]
        .iter()
        .zip(&model.target_ranges)
    {
        let normalized = m.steady_state_error.abs() / range.half_span();
        assert!(normalized <= 1e-6, "normalized steady-state error {normalized:e}");
    }
}

#[test]
fn percent_of_final_matches_definition() {
    let (params, clean) = short_trajectory();
    let n = clean.len();
    let est = Estimates {
        start: 0,
        omega: clean.omega.iter().map(|w| w * 1.001).collect(),
        theta: clean.theta.iter().map(|t| t - 0.5).collect(),
        r_a: clean.r_a.iter().map(|r| r + 6e-3).collect(),
    };
    let r = score(&params, &clean, &est, 0.1).unwrap();
    for m in [r.speed, r.speed_rpm, r.temperature, r.resistance] {
        let pct = m.percent_of_final.unwrap();
        assert!(
            (pct / 100.0 * m.final_value.abs() - m.steady_state_error.abs()).abs()
                <= 1e-15 * m.final_value.abs().max(1.0)
        );
    }
    assert!((r.temperature.steady_state_error + 0.5).abs() < 1e-12);
    assert_eq!(r.window_samples, (0.1 * n as f64).ceil() as usize);
    assert!(r.resistance_consistency > 5e-3);
}

#[test]
fn grid_mismatch_rejected() {
    let (params, clean) = short_trajectory();
    let mut shifted = clean.clone();
    shifted.time[3] += 1e-9;
    let ds = make_dataset(&clean, 1, 0).unwrap();
    let topo = Topology::cascade(vec![2, 2, 3]).unwrap();
    let model = Model::new(topo.clone(), vec![0.1; topo.param_count()], &ds).unwrap();
    assert_eq!(
        estimator::evaluate(&model, &params, &clean, &shifted, 0.1),
        Err(estimator::EstimatorError::GridMismatch)
    );
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn less_noise_never_raises_median_error() {
    let levels = [0.004, 0.001, 0.0];
    let mut medians = Vec::new();
    for level in levels {
        let mut temp = Vec::new();
        let mut res = Vec::new();
        let mut speed = Vec::new();
        for seed in 1..=5 {
            let exp = estimator::run_experiment(&small_config(level, seed)).unwrap();
            temp.push(exp.report.temperature.steady_state_error.abs());
            res.push(exp.report.resistance.steady_state_error.abs());
            speed.push(exp.report.speed.steady_state_error.abs());
        }
        medians.push([median(speed), median(temp), median(res)]);
    }
    for w in medians.windows(2) {
        assert!(
            w[1].iter().zip(&w[0]).all(|(lo, hi)| lo <= hi),
            "medians by noise level: {medians:?}"
        );
    }
}

#[test]
fn experiment_is_deterministic() {
    let cfg = small_config(0.001, 4);
    let a = estimator::run_experiment(&cfg).unwrap();
    let b = estimator::run_experiment(&cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn stage_errors_are_attributed() {
    let mut cfg = small_config(0.001, 1);
    cfg.dt = 1.0;
    assert_eq!(estimator::run_experiment(&cfg).unwrap_err().stage(), "simulate");
    let mut cfg = small_config(0.001, 1);
    cfg.noise.sigma_v = -1.0;
    assert_eq!(estimator::run_experiment(&cfg).unwrap_err().stage(), "noise");
    let mut cfg = small_config(0.001, 1);
    cfg.dataset.decimate = 0;
    assert_eq!(estimator::run_experiment(&cfg).unwrap_err().stage(), "dataset");
    let mut cfg = small_config(0.001, 1);
    cfg.motor = MotorSource::Calibrated {
        fixed: FixedParams::default(),
        targets: CalibrationTargets {
            theta_ss: -5.0,
            ..CalibrationTargets::default()
        },
    };
    assert_eq!(estimator::run_experiment(&cfg).unwrap_err().stage(), "calibrate");
    let mut cfg = small_config(0.001, 1);
    cfg.window_fraction = 0.7;
    assert_eq!(estimator::run_experiment(&cfg).unwrap_err().stage(), "config");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn normalization_round_trips(a in -1e4f64..1e4, span in 1e-6f64..1e4, t in 0.0f64..=1.0) {
        let r = ColumnRange { min: a, max: a + span };
        let x = a + t * span;
        let z = r.normalize(x);
        prop_assert!((-1.0..=1.0).contains(&z));
        prop_assert!((r.denormalize(z) - x).abs() <= 1e-12 * x.abs().max(span).max(1.0));
    }

    #[test]
    fn dataset_values_are_in_unit_interval(decimate in 1usize..20, taps in 0usize..4) {
        let (_, traj) = short_trajectory();
        let ds = make_dataset(&traj, decimate, taps).unwrap();
        prop_assert_eq!(ds.len(), traj.len().div_ceil(decimate) - taps);
        prop_assert!(ds.inputs.iter().chain(&ds.targets).all(|z| (-1.0..=1.0).contains(z)));
    }

    #[test]
    fn metric_scaling_preserves_percent(err in -5.0f64..5.0, fin in 0.1f64..300.0) {
        let m = OutputMetrics::from_parts(err.abs(), err.abs(), err, fin);
        let scaled = m.scaled(60.0 / (2.0 * std::f64::consts::PI));
        prop_assert_eq!(m.percent_of_final, scaled.percent_of_final);
        prop_assert!(m.rmse >= 0.0);
    }
}

#[test]
fn raw_integration_matches_pipeline_simulation() {
    let cfg = small_config(0.0, 0);
    let (p, traj) = estimator::simulate(&cfg).unwrap();
    let direct = integrate_rk4(&p, cfg.init_state, &cfg.duty, cfg.dt, cfg.record_every).unwrap();
    assert_eq!(traj, direct);
}
