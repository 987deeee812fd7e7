//! BFGS quasi-Newton minimization.
//!
//! The Hessian approximation `H` itself is updated (not its inverse):
//!
//! ```text
//! H+ = H + y y^T / (y^T s) - H s s^T H / (s^T H s)
//! ```
//!
//! and each search direction solves `H p = -g` through a Cholesky
//! factorization. Step lengths come from a bracketing/zoom line search that
//! enforces the strong Wolfe conditions.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use thiserror::Error;

use crate::cfnn::{self, CfnnError, Topology};
use crate::dataset::Dataset;
use crate::linalg::{dot, norm2, norm_inf, Cholesky, SquareMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BfgsError {
    #[error("curvature condition violated: y^T s = {curvature:e} <= {threshold:e}")]
    CurvatureViolation { curvature: f64, threshold: f64 },
    #[error("s^T H s = {0:e} is not positive; the Hessian approximation lost definiteness")]
    SingularDenominator(f64),
    #[error("Hessian approximation is not positive definite")]
    NotPositiveDefinite,
    #[error("search direction is not a descent direction (slope {slope:e})")]
    NotDescent { slope: f64 },
    #[error("line search found no strong-Wolfe step within {evaluations} evaluations")]
    LineSearchFailed {
        evaluations: usize,
        /// Best iterate reached before giving up, when raised by [`minimize`].
        partial: Option<Box<Minimum>>,
    },
    #[error("{what}: expected length {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Network(#[from] CfnnError),
}

/// Objective with gradient. Writes the gradient at `w` into `grad` and
/// returns the function value.
pub trait Objective {
    fn evaluate(&mut self, w: &[f64], grad: &mut [f64]) -> f64;
}

impl<F> Objective for F
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    fn evaluate(&mut self, w: &[f64], grad: &mut [f64]) -> f64 {
        self(w, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub max_iterations: usize,
    /// Stop when `max |grad| < grad_tol`.
    pub grad_tol: f64,
    /// Stop when the loss is at or below this value.
    pub loss_goal: f64,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    /// Function evaluations allowed per line search.
    pub max_line_search_steps: usize,
    /// Relative curvature threshold: update only if `y^T s > eps |s| |y|`.
    pub curvature_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            grad_tol: 1e-6,
            loss_goal: 1e-12,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            max_line_search_steps: 40,
            curvature_eps: 1e-10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), BfgsError> {
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(BfgsError::InvalidConfig("need 0 < c1 < c2 < 1"));
        }
        if !(self.grad_tol > 0.0 && self.loss_goal > 0.0 && self.curvature_eps > 0.0) {
            return Err(BfgsError::InvalidConfig("tolerances must be positive"));
        }
        if self.max_line_search_steps == 0 {
            return Err(BfgsError::InvalidConfig("line search needs at least one step"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iteration: usize,
    /// Loss after the step.
    pub loss: f64,
    /// Gradient infinity norm after the step.
    pub grad_norm: f64,
    pub alpha: f64,
    /// `s^T y` of the step.
    pub curvature: f64,
    /// Whether the Hessian approximation was updated.
    pub updated: bool,
    /// Whether `H` was reset to the identity during this iteration.
    pub reset: bool,
    /// Whether the `H` carried into this iteration factorized as SPD.
    pub spd: bool,
    /// `max |H - H^T|` after the update.
    pub asymmetry: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradTol,
    LossGoal,
    MaxIterations,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::GradTol => "grad_tol",
            StopReason::LossGoal => "loss_goal",
            StopReason::MaxIterations => "max_iterations",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub initial_loss: f64,
    pub initial_grad_norm: f64,
    pub records: Vec<IterRecord>,
    pub stop: Option<StopReason>,
}

impl TrainHistory {
    /// Set when the iteration budget ran out before either tolerance was met.
    pub fn warning(&self) -> bool {
        self.stop == Some(StopReason::MaxIterations)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub w: Vec<f64>,
    pub loss: f64,
    pub grad: Vec<f64>,
    pub history: TrainHistory,
}

impl Minimum {
    pub fn iterations(&self) -> usize {
        self.history.records.len()
    }
}

/// Current iterate of the minimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct BfgsState {
    pub w: Vec<f64>,
    pub hessian_approx: SquareMatrix,
    pub grad: Vec<f64>,
    pub iteration: usize,
    pub loss: f64,
}

/// Rank-two update of the Hessian approximation, in place.
///
/// Leaves `h` untouched on error.
pub fn bfgs_update_in_place(h: &mut SquareMatrix, s: &[f64], y: &[f64], curvature_eps: f64) -> Result<(), BfgsError> {
    let n = h.dim();
    for (what, v) in [("step s", s), ("gradient change y", y)] {
        if v.len() != n {
            return Err(BfgsError::DimensionMismatch {
                what,
                expected: n,
                actual: v.len(),
            });
        }
    }
    let ys = dot(y, s);
    let threshold = curvature_eps * norm2(s) * norm2(y);
    if !(ys > threshold) {
        return Err(BfgsError::CurvatureViolation {
            curvature: ys,
            threshold,
        });
    }
    let hs = h.mul_vec(s);
    let shs = dot(s, &hs);
    if !(shs > 0.0) {
        return Err(BfgsError::SingularDenominator(shs));
    }
    for i in 0..n {
        let yi = y[i] / ys;
        let hi = hs[i] / shs;
        for (j, hij) in h.row_mut(i).iter_mut().enumerate() {
            *hij += yi * y[j] - hi * hs[j];
        }
    }
    h.symmetrize();
    Ok(())
}

/// Returns the updated Hessian approximation `H_{k+1}`.
pub fn bfgs_update(h: &SquareMatrix, s: &[f64], y: &[f64], curvature_eps: f64) -> Result<SquareMatrix, BfgsError> {
    let mut next = h.clone();
    bfgs_update_in_place(&mut next, s, y, curvature_eps)?;
    Ok(next)
}

/// Solves `H p = -grad` by Cholesky factorization.
pub fn newton_step(h: &SquareMatrix, grad: &[f64]) -> Result<Vec<f64>, BfgsError> {
    if grad.len() != h.dim() {
        return Err(BfgsError::DimensionMismatch {
            what: "gradient",
            expected: h.dim(),
            actual: grad.len(),
        });
    }
    let chol = Cholesky::new(h).ok_or(BfgsError::NotPositiveDefinite)?;
    let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
    let p = chol.solve(&neg);
    if p.iter().all(|x| x.is_finite()) {
        Ok(p)
    } else {
        Err(BfgsError::NotPositiveDefinite)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchResult {
    pub alpha: f64,
    pub w_new: Vec<f64>,
    pub f_new: f64,
    pub grad_new: Vec<f64>,
    pub evaluations: usize,
}

struct Probe {
    alpha: f64,
    f: f64,
    slope: f64,
    w: Vec<f64>,
    grad: Vec<f64>,
}

struct LineFn<'a, O: Objective> {
    objective: &'a mut O,
    w: &'a [f64],
    p: &'a [f64],
    evaluations: usize,
}

impl<O: Objective> LineFn<'_, O> {
    fn probe(&mut self, alpha: f64) -> Probe {
        let w: Vec<f64> = self.w.iter().zip(self.p).map(|(w, p)| w + alpha * p).collect();
        let mut grad = vec![0.0; w.len()];
        let f = self.objective.evaluate(&w, &mut grad);
        self.evaluations += 1;
        let slope = dot(&grad, self.p);
        Probe {
            alpha,
            f,
            slope,
            w,
            grad,
        }
    }
}

/// Minimizer of the cubic through two points with known values and slopes,
/// or `None` when it does not exist.
fn cubic_minimizer(a: &Probe, b: &Probe) -> Option<f64> {
    let d1 = a.slope + b.slope - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.slope * b.slope;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    t.is_finite().then_some(t)
}

fn into_result(p: Probe, evaluations: usize) -> LineSearchResult {
    LineSearchResult {
        alpha: p.alpha,
        w_new: p.w,
        f_new: p.f,
        grad_new: p.grad,
        evaluations,
    }
}

/// Strong-Wolfe line search along `p` from `w`, starting at `alpha_init`.
///
/// `f0` and `grad0` are the already-known value and gradient at `w`.
#[allow(clippy::too_many_arguments)]
pub fn wolfe_line_search<O: Objective>(
    objective: &mut O,
    w: &[f64],
    f0: f64,
    grad0: &[f64],
    p: &[f64],
    alpha_init: f64,
    c1: f64,
    c2: f64,
    max_steps: usize,
) -> Result<LineSearchResult, BfgsError> {
    let slope0 = dot(grad0, p);
    if !(slope0 < 0.0) {
        return Err(BfgsError::NotDescent { slope: slope0 });
    }
    const ALPHA_MAX: f64 = 1e10;
    let armijo = |probe: &Probe| probe.f.is_finite() && probe.f <= f0 + c1 * probe.alpha * slope0;
    let curvature_ok = |probe: &Probe| probe.slope.abs() <= -c2 * slope0;

    let mut line = LineFn {
        objective,
        w,
        p,
        evaluations: 0,
    };
    let mut prev = Probe {
        alpha: 0.0,
        f: f0,
        slope: slope0,
        w: Vec::new(),
        grad: Vec::new(),
    };
    let mut alpha = alpha_init;
    let mut first = true;
    // bracketing phase
    let (mut lo, mut hi) = loop {
        if line.evaluations >= max_steps {
            return Err(BfgsError::LineSearchFailed {
                evaluations: line.evaluations,
                partial: None,
            });
        }
        let cur = line.probe(alpha);
        if !armijo(&cur) || (!first && cur.f >= prev.f) {
            break (prev, cur);
        }
        if curvature_ok(&cur) {
            let n = line.evaluations;
            return Ok(into_result(cur, n));
        }
        if cur.slope >= 0.0 {
            break (cur, prev);
        }
        first = false;
        alpha = (2.0 * cur.alpha).min(ALPHA_MAX);
        prev = cur;
    };

    // zoom phase: `lo` satisfies sufficient decrease with the lowest value seen
    loop {
        if line.evaluations >= max_steps {
            return Err(BfgsError::LineSearchFailed {
                evaluations: line.evaluations,
                partial: None,
            });
        }
        let width = hi.alpha - lo.alpha;
        let (left, right) = if width > 0.0 {
            (lo.alpha + 0.1 * width, hi.alpha - 0.1 * width)
        } else {
            (hi.alpha - 0.1 * width, lo.alpha + 0.1 * width)
        };
        let bisect = 0.5 * (lo.alpha + hi.alpha);
        let trial = if hi.f.is_finite() {
            cubic_minimizer(&lo, &hi)
                .filter(|t| *t >= left && *t <= right)
                .unwrap_or(bisect)
        } else {
            bisect
        };
        if (trial - lo.alpha).abs() <= f64::EPSILON * lo.alpha.abs().max(1.0) {
            return Err(BfgsError::LineSearchFailed {
                evaluations: line.evaluations,
                partial: None,
            });
        }
        let cur = line.probe(trial);
        if !armijo(&cur) || cur.f >= lo.f {
            hi = cur;
        } else {
            if curvature_ok(&cur) {
                let n = line.evaluations;
                return Ok(into_result(cur, n));
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
}

impl BfgsState {
    pub fn new<O: Objective>(objective: &mut O, w0: Vec<f64>) -> Self {
        let n = w0.len();
        let mut grad = vec![0.0; n];
        let loss = objective.evaluate(&w0, &mut grad);
        Self {
            w: w0,
            hessian_approx: SquareMatrix::identity(n),
            grad,
            iteration: 0,
            loss,
        }
    }

    fn reset(&mut self) {
        self.hessian_approx = SquareMatrix::identity(self.w.len());
    }

    /// One BFGS iteration. On a line-search failure `H` is reset to the
    /// identity and the search is retried once along `-grad`.
    pub fn step<O: Objective>(&mut self, objective: &mut O, config: &TrainConfig) -> Result<IterRecord, BfgsError> {
        let mut reset = false;
        let newton = newton_step(&self.hessian_approx, &self.grad);
        let spd = newton.is_ok();
        let mut p = match newton {
            Ok(p) if dot(&p, &self.grad) < 0.0 => p,
            _ => {
                reset = true;
                self.reset();
                self.steepest()
            }
        };
        let search = |state: &Self, objective: &mut O, p: &[f64]| {
            let alpha0 = if state.hessian_approx.is_identity() {
                (1.0 / norm_inf(p)).min(1.0)
            } else {
                1.0
            };
            wolfe_line_search(
                objective,
                &state.w,
                state.loss,
                &state.grad,
                p,
                alpha0,
                config.wolfe_c1,
                config.wolfe_c2,
                config.max_line_search_steps,
            )
        };
        let ls = match search(self, objective, &p) {
            Ok(ls) => ls,
            Err(BfgsError::LineSearchFailed { .. }) if !self.hessian_approx.is_identity() => {
                reset = true;
                self.reset();
                p = self.steepest();
                search(self, objective, &p)?
            }
            Err(e) => return Err(e),
        };

        let s: Vec<f64> = ls.w_new.iter().zip(&self.w).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = ls.grad_new.iter().zip(&self.grad).map(|(a, b)| a - b).collect();
        let curvature = dot(&s, &y);
        let updated = match bfgs_update_in_place(&mut self.hessian_approx, &s, &y, config.curvature_eps) {
            Ok(()) => true,
            Err(BfgsError::CurvatureViolation { .. }) => false,
            Err(BfgsError::SingularDenominator(_)) => {
                reset = true;
                self.reset();
                false
            }
            Err(e) => return Err(e),
        };
        self.w = ls.w_new;
        self.grad = ls.grad_new;
        self.loss = ls.f_new;
        self.iteration += 1;
        Ok(IterRecord {
            iteration: self.iteration,
            loss: self.loss,
            grad_norm: norm_inf(&self.grad),
            alpha: ls.alpha,
            curvature,
            updated,
            reset,
            spd,
            asymmetry: self.hessian_approx.asymmetry(),
        })
    }

    fn steepest(&self) -> Vec<f64> {
        self.grad.iter().map(|g| -g).collect()
    }

    fn stop_reason(&self, config: &TrainConfig) -> Option<StopReason> {
        if norm_inf(&self.grad) < config.grad_tol {
            Some(StopReason::GradTol)
        } else if self.loss <= config.loss_goal {
            Some(StopReason::LossGoal)
        } else {
            None
        }
    }

    fn into_minimum(self, history: TrainHistory) -> Minimum {
        Minimum {
            w: self.w,
            loss: self.loss,
            grad: self.grad,
            history,
        }
    }
}

/// Runs BFGS from `w0` with `H_0 = I` until a tolerance or the iteration cap
/// is reached.
pub fn minimize<O: Objective>(objective: &mut O, w0: Vec<f64>, config: &TrainConfig) -> Result<Minimum, BfgsError> {
    config.validate()?;
    let mut state = BfgsState::new(objective, w0);
    let mut history = TrainHistory {
        initial_loss: state.loss,
        initial_grad_norm: norm_inf(&state.grad),
        records: Vec::new(),
        stop: None,
    };
    if let Some(reason) = state.stop_reason(config) {
        history.stop = Some(reason);
        return Ok(state.into_minimum(history));
    }
    while state.iteration < config.max_iterations {
        match state.step(objective, config) {
            Ok(record) => history.records.push(record),
            Err(BfgsError::LineSearchFailed { evaluations, .. }) => {
                return Err(BfgsError::LineSearchFailed {
                    evaluations,
                    partial: Some(Box::new(state.into_minimum(history))),
                });
            }
            Err(e) => return Err(e),
        }
        if let Some(reason) = state.stop_reason(config) {
            history.stop = Some(reason);
            return Ok(state.into_minimum(history));
        }
    }
    history.stop = Some(StopReason::MaxIterations);
    Ok(state.into_minimum(history))
}

/// Batch BFGS training of a network on the full dataset's SSE.
pub fn train(topology: &Topology, dataset: &Dataset, w0: Vec<f64>, config: &TrainConfig) -> Result<Minimum, BfgsError> {
    // validates widths once so the objective below cannot fail
    cfnn::sse_loss(topology, &w0, dataset)?;
    let mut objective = |w: &[f64], g: &mut [f64]| cfnn::loss_and_gradient(topology, w, dataset, g).unwrap_or(f64::NAN);
    minimize(&mut objective, w0, config)
}
