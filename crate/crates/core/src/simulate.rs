//! Fixed-step RK4 integration of the motor model and measurement noise.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::motor::{self, MotorInput, MotorParams, MotorState};

/// Temperature rise used for the explicit-step stability bound, °C.
pub const STABILITY_THETA_MAX: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("time step {dt} s exceeds the stability bound {limit} s")]
    UnstableStep { dt: f64, limit: f64 },
    #[error("invalid time step {0}")]
    InvalidStep(f64),
    #[error("duty profile has no segments")]
    EmptyProfile,
    #[error("segment {index}: duration {duration} s is not a positive multiple of the sample interval {interval} s")]
    MisalignedSegment { index: usize, duration: f64, interval: f64 },
    #[error("state left the finite range at t = {time} s")]
    NonFinite { time: f64 },
    #[error("noise standard deviation must be finite and non-negative, got {0}")]
    InvalidSigma(f64),
    #[error(transparent)]
    Motor(#[from] motor::MotorError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DutySegment {
    /// Seconds.
    pub duration: f64,
    pub v_a: f64,
    pub t_l: f64,
}

/// Piecewise-constant voltage and load schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct DutyProfile {
    pub segments: Vec<DutySegment>,
}

impl DutyProfile {
    pub fn new(segments: Vec<DutySegment>) -> Self {
        Self { segments }
    }

    /// Continuous running at constant voltage and load.
    pub fn s1(duration: f64, v_a: f64, t_l: f64) -> Self {
        Self::new(alloc::vec![DutySegment { duration, v_a, t_l }])
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }
}

/// Uniformly sampled simulation output.
///
/// `r_a[k]` is always `resistance(theta[k])`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    /// Sample interval, s.
    pub dt: f64,
    pub time: Vec<f64>,
    pub v_a: Vec<f64>,
    pub t_l: Vec<f64>,
    pub i_a: Vec<f64>,
    pub omega: Vec<f64>,
    pub theta: Vec<f64>,
    pub r_a: Vec<f64>,
}

impl Trajectory {
    pub const COLUMNS: [&'static str; 7] = ["time", "v_a", "t_l", "i_a", "omega", "theta", "r_a"];

    pub fn with_capacity(dt: f64, n: usize) -> Self {
        Self {
            dt,
            time: Vec::with_capacity(n),
            v_a: Vec::with_capacity(n),
            t_l: Vec::with_capacity(n),
            i_a: Vec::with_capacity(n),
            omega: Vec::with_capacity(n),
            theta: Vec::with_capacity(n),
            r_a: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn push(&mut self, time: f64, input: MotorInput, state: MotorState, r_a: f64) {
        self.time.push(time);
        self.v_a.push(input.v_a);
        self.t_l.push(input.t_l);
        self.i_a.push(state.i_a);
        self.omega.push(state.omega);
        self.theta.push(state.theta);
        self.r_a.push(r_a);
    }

    pub fn columns(&self) -> [&[f64]; 7] {
        [
            &self.time,
            &self.v_a,
            &self.t_l,
            &self.i_a,
            &self.omega,
            &self.theta,
            &self.r_a,
        ]
    }

    pub fn state(&self, k: usize) -> MotorState {
        MotorState::new(self.i_a[k], self.omega[k], self.theta[k])
    }

    pub fn last_state(&self) -> Option<MotorState> {
        (!self.is_empty()).then(|| self.state(self.len() - 1))
    }

    /// Whether both trajectories share the same sample grid.
    pub fn same_grid(&self, other: &Trajectory) -> bool {
        self.len() == other.len() && self.dt == other.dt && self.time == other.time
    }
}

/// Largest admissible step: half the electrical time constant at the hot
/// resistance bound.
pub fn stability_limit(params: &MotorParams) -> f64 {
    0.5 * params.l_a / motor::resistance(params, STABILITY_THETA_MAX)
}

#[inline]
fn axpy(state: &MotorState, h: f64, d: &motor::StateDerivative) -> MotorState {
    MotorState::new(
        state.i_a + h * d.di_a_dt,
        state.omega + h * d.domega_dt,
        state.theta + h * d.dtheta_dt,
    )
}

/// One classical RK4 step.
pub fn rk4_step(params: &MotorParams, state: &MotorState, input: &MotorInput, h: f64) -> MotorState {
    let k1 = motor::derivatives(params, state, input);
    let k2 = motor::derivatives(params, &axpy(state, 0.5 * h, &k1), input);
    let k3 = motor::derivatives(params, &axpy(state, 0.5 * h, &k2), input);
    let k4 = motor::derivatives(params, &axpy(state, h, &k3), input);
    let h6 = h / 6.0;
    MotorState::new(
        state.i_a + h6 * (k1.di_a_dt + 2.0 * k2.di_a_dt + 2.0 * k3.di_a_dt + k4.di_a_dt),
        state.omega + h6 * (k1.domega_dt + 2.0 * k2.domega_dt + 2.0 * k3.domega_dt + k4.domega_dt),
        state.theta + h6 * (k1.dtheta_dt + 2.0 * k2.dtheta_dt + 2.0 * k3.dtheta_dt + k4.dtheta_dt),
    )
}

fn steps_in(duration: f64, interval: f64) -> Option<usize> {
    if !(duration > 0.0 && duration.is_finite()) {
        return None;
    }
    let n = (duration / interval).round();
    let aligned = n >= 1.0 && (n * interval - duration).abs() <= 1e-9 * duration.max(interval);
    aligned.then_some(n as usize)
}

/// Integrates the model over `profile` with step `dt`, keeping every
/// `record_every`-th step.
///
/// The returned trajectory is sampled every `dt * record_every` seconds,
/// starting with `init` at `t = 0`. Each segment's duration must be a whole
/// number of sample intervals so that segment boundaries land on the grid.
/// A sample on a boundary carries the inputs of the segment that starts there.
pub fn integrate_rk4(
    params: &MotorParams,
    init: MotorState,
    profile: &DutyProfile,
    dt: f64,
    record_every: usize,
) -> Result<Trajectory, SimError> {
    params.validate()?;
    if !(dt > 0.0 && dt.is_finite()) || record_every == 0 {
        return Err(SimError::InvalidStep(dt));
    }
    let limit = stability_limit(params);
    if dt >= limit {
        return Err(SimError::UnstableStep { dt, limit });
    }
    if profile.segments.is_empty() {
        return Err(SimError::EmptyProfile);
    }
    let interval = dt * record_every as f64;
    let mut samples_per_segment = Vec::with_capacity(profile.segments.len());
    for (index, seg) in profile.segments.iter().enumerate() {
        let n = steps_in(seg.duration, interval).ok_or(SimError::MisalignedSegment {
            index,
            duration: seg.duration,
            interval,
        })?;
        samples_per_segment.push(n);
    }
    if !init.is_finite() {
        return Err(SimError::NonFinite { time: 0.0 });
    }

    let total: usize = samples_per_segment.iter().sum();
    let mut traj = Trajectory::with_capacity(interval, total + 1);
    let first = &profile.segments[0];
    traj.push(
        0.0,
        MotorInput::new(first.v_a, first.t_l),
        init,
        motor::resistance(params, init.theta),
    );

    let mut state = init;
    let mut sample = 0usize;
    for (index, (seg, &n)) in profile.segments.iter().zip(&samples_per_segment).enumerate() {
        let input = MotorInput::new(seg.v_a, seg.t_l);
        let next_input = profile
            .segments
            .get(index + 1)
            .map(|s| MotorInput::new(s.v_a, s.t_l))
            .unwrap_or(input);
        for k in 0..n {
            for _ in 0..record_every {
                state = rk4_step(params, &state, &input, dt);
            }
            sample += 1;
            // time from the integer sample index keeps the grid exactly uniform
            let time = sample as f64 * interval;
            if !state.is_finite() {
                return Err(SimError::NonFinite { time });
            }
            let recorded_input = if k + 1 == n { next_input } else { input };
            traj.push(time, recorded_input, state, motor::resistance(params, state.theta));
        }
    }
    Ok(traj)
}

/// Adds independent zero-mean Gaussian noise to the voltage and current
/// columns. States and `r_a` are left untouched.
///
/// Draws alternate voltage/current per sample from a ChaCha8 stream seeded
/// with `seed`, so the result depends only on the inputs.
pub fn add_awgn(traj: &Trajectory, sigma_v: f64, sigma_i: f64, seed: u64) -> Result<Trajectory, SimError> {
    for sigma in [sigma_v, sigma_i] {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(SimError::InvalidSigma(sigma));
        }
    }
    let mut out = traj.clone();
    if sigma_v == 0.0 && sigma_i == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (v, i) in out.v_a.iter_mut().zip(out.i_a.iter_mut()) {
        let zv: f64 = StandardNormal.sample(&mut rng);
        let zi: f64 = StandardNormal.sample(&mut rng);
        if sigma_v > 0.0 {
            *v += sigma_v * zv;
        }
        if sigma_i > 0.0 {
            *i += sigma_i * zi;
        }
    }
    Ok(out)
}
