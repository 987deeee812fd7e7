//! End-to-end estimation experiment.
//!
//! Calibrate the machine, simulate a duty cycle, corrupt the measured voltage
//! and current, train the network on the noisy inputs against clean states,
//! and score the estimates over the whole trajectory.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use thiserror::Error;

use crate::bfgs::{self, BfgsError, Minimum, TrainConfig};
use crate::cfnn::{self, CfnnError, Evaluator, InitScheme, Topology};
use crate::dataset::{self, ColumnRange, Dataset, DatasetError, N_TARGETS};
use crate::motor::{self, CalibrationTargets, FixedParams, MotorError, MotorParams, MotorState};
use crate::simulate::{self, DutyProfile, SimError, Trajectory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("calibration: {0}")]
    Calibrate(#[source] MotorError),
    #[error("simulation: {0}")]
    Simulate(#[source] SimError),
    #[error("noise injection: {0}")]
    Noise(#[source] SimError),
    #[error("dataset: {0}")]
    Dataset(#[source] DatasetError),
    #[error("network: {0}")]
    Network(#[source] CfnnError),
    #[error("training: {0}")]
    Train(#[source] BfgsError),
    #[error("evaluation: {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("training: dataset has {actual} inputs but the configured delay taps need {expected}")]
    DatasetWidth { expected: usize, actual: usize },
    #[error("evaluation: clean and noisy trajectories are not on the same grid")]
    GridMismatch,
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}

impl EstimatorError {
    /// Pipeline stage the error came from.
    pub fn stage(&self) -> &'static str {
        match self {
            EstimatorError::Calibrate(_) => "calibrate",
            EstimatorError::Simulate(_) => "simulate",
            EstimatorError::Noise(_) => "noise",
            EstimatorError::Dataset(_) => "dataset",
            EstimatorError::Network(_) => "network",
            EstimatorError::Train(_) | EstimatorError::DatasetWidth { .. } => "train",
            EstimatorError::DimensionMismatch { .. } | EstimatorError::GridMismatch => "evaluate",
            EstimatorError::InvalidConfig(_) => "config",
        }
    }
}

/// Where the machine constants come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MotorSource {
    Params(MotorParams),
    /// Solve `k_e`, `b`, `J` at the rated voltage and load.
    Calibrated {
        fixed: FixedParams,
        targets: CalibrationTargets,
    },
}

impl MotorSource {
    pub fn resolve(&self) -> Result<MotorParams, MotorError> {
        match self {
            MotorSource::Params(p) => {
                p.validate()?;
                Ok(*p)
            }
            MotorSource::Calibrated { fixed, targets } => {
                motor::calibrate(targets, fixed.v_rated, fixed.t_l_rated, fixed)
            }
        }
    }
}

impl Default for MotorSource {
    fn default() -> Self {
        MotorSource::Calibrated {
            fixed: FixedParams::default(),
            targets: CalibrationTargets::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// Voltage noise standard deviation, V.
    pub sigma_v: f64,
    /// Current noise standard deviation, A.
    pub sigma_i: f64,
    pub seed: u64,
}

impl NoiseConfig {
    /// Standard deviations as a fraction of the rated voltage and current.
    pub fn relative_to_rating(params: &MotorParams, fraction: f64, seed: u64) -> Self {
        Self {
            sigma_v: fraction * params.v_rated,
            sigma_i: fraction * params.rated_current(),
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetConfig {
    pub decimate: usize,
    pub delay_taps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub cascade: bool,
    pub init_seed: u64,
    pub init: InitScheme,
}

impl NetworkConfig {
    pub fn topology(&self, n_inputs: usize) -> Result<Topology, CfnnError> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(n_inputs);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(N_TARGETS);
        Topology::with_cascade(sizes, self.cascade)
    }
}

/// Default noise level as a fraction of rated voltage and current.
pub const DEFAULT_NOISE_FRACTION: f64 = 0.001;

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub motor: MotorSource,
    pub duty: DutyProfile,
    pub init_state: MotorState,
    /// Integration step, s.
    pub dt: f64,
    /// Integration steps per stored sample.
    pub record_every: usize,
    pub noise: NoiseConfig,
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    /// Trailing fraction of the run used for steady-state errors.
    pub window_fraction: f64,
}

impl Default for ExperimentConfig {
    /// S1 duty at rated voltage and load for five zero-speed thermal time
    /// constants, sampled every 0.5 s, from a cold start at rest.
    fn default() -> Self {
        let fixed = FixedParams::default();
        let nominal = MotorParams::nominal();
        Self {
            motor: MotorSource::default(),
            duty: DutyProfile::s1(20785.0, fixed.v_rated, fixed.t_l_rated),
            init_state: MotorState::default(),
            dt: 1e-3,
            record_every: 500,
            noise: NoiseConfig::relative_to_rating(&nominal, DEFAULT_NOISE_FRACTION, 1),
            dataset: DatasetConfig {
                decimate: 10,
                delay_taps: 8,
            },
            network: NetworkConfig {
                hidden: vec![10, 10],
                cascade: true,
                init_seed: 7,
                init: InitScheme::UniformScaled,
            },
            train: TrainConfig::default(),
            window_fraction: 0.1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.window_fraction > 0.0 && self.window_fraction <= 0.5) {
            return Err(EstimatorError::InvalidConfig("window fraction must be in (0, 0.5]"));
        }
        self.train
            .validate()
            .map_err(|_| EstimatorError::InvalidConfig("training configuration"))?;
        Ok(())
    }
}

/// A trained estimator: network plus the scaling it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub topology: Topology,
    pub params: Vec<f64>,
    pub input_ranges: Vec<ColumnRange>,
    pub target_ranges: Vec<ColumnRange>,
    pub delay_taps: usize,
    /// Trajectory samples between delay taps.
    pub tap_stride: usize,
}

/// Per-sample estimates for `k >= start`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Estimates {
    pub start: usize,
    pub omega: Vec<f64>,
    pub theta: Vec<f64>,
    pub r_a: Vec<f64>,
}

impl Estimates {
    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }
}

impl Model {
    pub fn new(topology: Topology, params: Vec<f64>, dataset: &Dataset) -> Result<Self, EstimatorError> {
        let model = Self {
            topology,
            params,
            input_ranges: dataset.input_ranges.clone(),
            target_ranges: dataset.target_ranges.clone(),
            delay_taps: dataset.delay_taps,
            tap_stride: dataset.tap_stride,
        };
        model.check()?;
        Ok(model)
    }

    /// Consistency of widths between topology, scaling and parameters.
    pub fn check(&self) -> Result<(), EstimatorError> {
        let expect = |what, expected: usize, actual: usize| {
            if expected == actual {
                Ok(())
            } else {
                Err(EstimatorError::DimensionMismatch { what, expected, actual })
            }
        };
        expect("parameter count", self.topology.param_count(), self.params.len())?;
        expect("input scaling", self.topology.n_inputs(), self.input_ranges.len())?;
        expect("target scaling", self.topology.n_outputs(), self.target_ranges.len())?;
        expect("input width", 2 * (self.delay_taps + 1), self.topology.n_inputs())?;
        expect("output width", N_TARGETS, self.topology.n_outputs())?;
        if self.tap_stride == 0 {
            return Err(EstimatorError::InvalidConfig("tap stride must be at least 1"));
        }
        Ok(())
    }

    /// First trajectory sample with a full tap history.
    pub fn first_sample(&self) -> usize {
        self.delay_taps * self.tap_stride
    }

    /// Runs the network on every sample of `traj` that has a full tap history.
    pub fn predict(&self, traj: &Trajectory) -> Result<Estimates, EstimatorError> {
        self.check()?;
        let start = self.first_sample();
        let mut eval = Evaluator::new(&self.topology, &self.params).map_err(EstimatorError::Network)?;
        let n = traj.len().saturating_sub(start);
        let mut out = Estimates {
            start,
            omega: Vec::with_capacity(n),
            theta: Vec::with_capacity(n),
            r_a: Vec::with_capacity(n),
        };
        let mut raw = Vec::with_capacity(self.topology.n_inputs());
        let mut scaled = vec![0.0; self.topology.n_inputs()];
        for k in start..traj.len() {
            raw.clear();
            dataset::push_features(&traj.v_a, &traj.i_a, k, self.delay_taps, self.tap_stride, &mut raw);
            for ((s, &x), range) in scaled.iter_mut().zip(&raw).zip(&self.input_ranges) {
                *s = range.normalize(x);
            }
            let y = eval.eval(&scaled);
            out.omega.push(self.target_ranges[0].denormalize(y[0]));
            out.theta.push(self.target_ranges[1].denormalize(y[1]));
            out.r_a.push(self.target_ranges[2].denormalize(y[2]));
        }
        Ok(out)
    }
}

/// Error statistics of one estimated quantity.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OutputMetrics {
    pub rmse: f64,
    pub max_abs_error: f64,
    /// Mean signed error (estimate minus truth) over the steady-state window.
    pub steady_state_error: f64,
    /// `|steady_state_error| / |final_value| * 100`, when the final value is
    /// nonzero.
    pub percent_of_final: Option<f64>,
    /// Clean value at the last sample.
    pub final_value: f64,
}

impl OutputMetrics {
    fn compute(estimate: &[f64], truth: &[f64], window_start: usize) -> Self {
        let n = estimate.len();
        if n == 0 {
            return Self::default();
        }
        let mut sq = 0.0;
        let mut max_abs = 0.0f64;
        let mut tail = 0.0;
        for (idx, (e, t)) in estimate.iter().zip(truth).enumerate() {
            let err = e - t;
            sq += err * err;
            max_abs = max_abs.max(err.abs());
            if idx >= window_start {
                tail += err;
            }
        }
        let steady_state_error = tail / (n - window_start) as f64;
        let final_value = truth[n - 1];
        Self::from_parts((sq / n as f64).sqrt(), max_abs, steady_state_error, final_value)
    }

    pub fn from_parts(rmse: f64, max_abs_error: f64, steady_state_error: f64, final_value: f64) -> Self {
        let percent_of_final = (final_value != 0.0).then(|| steady_state_error.abs() / final_value.abs() * 100.0);
        Self {
            rmse,
            max_abs_error,
            steady_state_error,
            percent_of_final,
            final_value,
        }
    }

    /// Same metrics in different units (percentages are unchanged).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rmse: self.rmse * factor.abs(),
            max_abs_error: self.max_abs_error * factor.abs(),
            steady_state_error: self.steady_state_error * factor,
            percent_of_final: self.percent_of_final,
            final_value: self.final_value * factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalReport {
    /// Samples with a prediction.
    pub samples: usize,
    /// Samples in the steady-state window.
    pub window_samples: usize,
    /// Speed errors in rad/s.
    pub speed: OutputMetrics,
    /// Speed errors in rpm.
    pub speed_rpm: OutputMetrics,
    /// Temperature rise errors, °C.
    pub temperature: OutputMetrics,
    /// Resistance errors, Ω.
    pub resistance: OutputMetrics,
    /// `max |r_hat - resistance(theta_hat)|` over the evaluated samples, Ω.
    pub resistance_consistency: f64,
}

/// Scores `estimates` against the clean trajectory.
///
/// The steady-state window is the trailing `window_fraction` of the
/// trajectory, clipped to the samples that have estimates.
pub fn score(
    params: &MotorParams,
    clean: &Trajectory,
    estimates: &Estimates,
    window_fraction: f64,
) -> Result<EvalReport, EstimatorError> {
    if estimates.start + estimates.len() != clean.len() {
        return Err(EstimatorError::DimensionMismatch {
            what: "estimate count",
            expected: clean.len().saturating_sub(estimates.start),
            actual: estimates.len(),
        });
    }
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(EstimatorError::InvalidConfig("window fraction must be in (0, 1]"));
    }
    let n = estimates.len();
    if n == 0 {
        return Ok(EvalReport::default());
    }
    let window = ((window_fraction * clean.len() as f64).ceil() as usize).clamp(1, n);
    let window_start = n - window;
    let s = estimates.start;
    let speed = OutputMetrics::compute(&estimates.omega, &clean.omega[s..], window_start);
    let consistency = estimates
        .r_a
        .iter()
        .zip(&estimates.theta)
        .map(|(r, th)| (r - motor::resistance(params, *th)).abs())
        .fold(0.0, f64::max);
    Ok(EvalReport {
        samples: n,
        window_samples: window,
        speed,
        speed_rpm: speed.scaled(crate::rad_s_to_rpm(1.0)),
        temperature: OutputMetrics::compute(&estimates.theta, &clean.theta[s..], window_start),
        resistance: OutputMetrics::compute(&estimates.r_a, &clean.r_a[s..], window_start),
        resistance_consistency: consistency,
    })
}

/// Runs `model` on the noisy measurements and scores it against the clean
/// states.
pub fn evaluate(
    model: &Model,
    params: &MotorParams,
    clean: &Trajectory,
    noisy: &Trajectory,
    window_fraction: f64,
) -> Result<EvalReport, EstimatorError> {
    if !clean.same_grid(noisy) {
        return Err(EstimatorError::GridMismatch);
    }
    let estimates = model.predict(noisy)?;
    score(params, clean, &estimates, window_fraction)
}

/// Pass/fail limits on the steady-state errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub speed_rpm: f64,
    pub temperature: f64,
    pub resistance: f64,
    pub speed_percent: f64,
    pub temperature_percent: f64,
    pub resistance_percent: f64,
}

impl Default for Thresholds {
    /// Twice the envelope reported for the reference estimator.
    fn default() -> Self {
        Self {
            speed_rpm: 0.8,
            temperature: 1.0,
            resistance: 1.2e-2,
            speed_percent: 0.4,
            temperature_percent: 1.25,
            resistance_percent: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

impl Thresholds {
    pub fn check(&self, report: &EvalReport) -> [Check; 6] {
        let abs = |m: &OutputMetrics| m.steady_state_error.abs();
        let pct = |m: &OutputMetrics| m.percent_of_final.unwrap_or(f64::INFINITY);
        let mk = |name, value: f64, limit| Check {
            name,
            value,
            limit,
            pass: value <= limit,
        };
        [
            mk("speed_rpm", abs(&report.speed_rpm), self.speed_rpm),
            mk("temperature", abs(&report.temperature), self.temperature),
            mk("resistance", abs(&report.resistance), self.resistance),
            mk("speed_percent", pct(&report.speed), self.speed_percent),
            mk(
                "temperature_percent",
                pct(&report.temperature),
                self.temperature_percent,
            ),
            mk("resistance_percent", pct(&report.resistance), self.resistance_percent),
        ]
    }
}

/// Everything produced by [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub params: MotorParams,
    pub clean: Trajectory,
    pub noisy: Trajectory,
    pub dataset: Dataset,
    pub model: Model,
    pub training: Minimum,
    pub estimates: Estimates,
    pub report: EvalReport,
}

pub fn simulate(config: &ExperimentConfig) -> Result<(MotorParams, Trajectory), EstimatorError> {
    let params = config.motor.resolve().map_err(EstimatorError::Calibrate)?;
    let traj = simulate::integrate_rk4(&params, config.init_state, &config.duty, config.dt, config.record_every)
        .map_err(EstimatorError::Simulate)?;
    Ok((params, traj))
}

pub fn add_noise(config: &ExperimentConfig, clean: &Trajectory) -> Result<Trajectory, EstimatorError> {
    simulate::add_awgn(clean, config.noise.sigma_v, config.noise.sigma_i, config.noise.seed)
        .map_err(EstimatorError::Noise)
}

pub fn build_dataset(config: &ExperimentConfig, noisy: &Trajectory) -> Result<Dataset, EstimatorError> {
    dataset::make_dataset(noisy, config.dataset.decimate, config.dataset.delay_taps).map_err(EstimatorError::Dataset)
}

/// Initializes and trains the configured network on `dataset`.
pub fn train_model(config: &ExperimentConfig, dataset: &Dataset) -> Result<(Model, Minimum), EstimatorError> {
    let expected = 2 * (config.dataset.delay_taps + 1);
    if dataset.n_inputs != expected {
        return Err(EstimatorError::DatasetWidth {
            expected,
            actual: dataset.n_inputs,
        });
    }
    let topology = config
        .network
        .topology(dataset.n_inputs)
        .map_err(EstimatorError::Network)?;
    let w0 = cfnn::init_weights(&topology, config.network.init_seed, config.network.init);
    let minimum = bfgs::train(&topology, dataset, w0, &config.train).map_err(EstimatorError::Train)?;
    let model = Model::new(topology, minimum.w.clone(), dataset)?;
    Ok((model, minimum))
}

/// Full pipeline; deterministic given the configured seeds.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Experiment, EstimatorError> {
    config.validate()?;
    let (params, clean) = simulate(config)?;
    let noisy = add_noise(config, &clean)?;
    let dataset = build_dataset(config, &noisy)?;
    let (model, training) = train_model(config, &dataset)?;
    let estimates = model.predict(&noisy)?;
    let report = score(&params, &clean, &estimates, config.window_fraction)?;
    Ok(Experiment {
        params,
        clean,
        noisy,
        dataset,
        model,
        training,
        estimates,
        report,
    })
}
