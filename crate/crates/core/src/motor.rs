//! Electro-thermal model of a brushed DC machine.
//!
//! State is `(i_a, omega, theta)` with `theta` the armature temperature rise
//! above ambient. The armature resistance is affine in `theta`, copper and
//! iron losses heat a single lumped thermal capacity, and convection to the
//! cooling air grows with speed:
//!
//! ```text
//! L  di/dt     = v_a - R(theta) i - k_e w
//! J  dw/dt     = k_e i - b w - T_l
//! H  dtheta/dt = R(theta) i^2 + k_ir w^2 - k_0 (1 + k_t w) theta
//! R(theta)     = R_a0 (1 + alpha_cu theta)
//! ```
//!
//! `k_e`, `b` and `J` are not generally published for a given machine; they
//! are recovered from a target operating point with [`calibrate`].

#[cfg(not(feature = "std"))]
use num_traits::Float;
use thiserror::Error;

/// Residual tolerance of [`steady_state`], per component.
pub const STEADY_STATE_TOL: f64 = 1e-9;
/// Newton iteration cap of [`steady_state`].
pub const STEADY_STATE_MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MotorError {
    #[error("motor parameter `{name}` must be finite and strictly positive, got {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("steady-state solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("calibration target infeasible: {reason}")]
    InfeasibleTarget { reason: &'static str },
}

/// Physical constants of the machine, SI units throughout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorParams {
    /// Rated armature voltage, V.
    pub v_rated: f64,
    /// Rated power, W.
    pub p_rated: f64,
    /// Rated load torque, N·m.
    pub t_l_rated: f64,
    /// Armature resistance at ambient temperature, Ω.
    pub r_a0: f64,
    /// Armature inductance, H.
    pub l_a: f64,
    /// Temperature coefficient of resistance, 1/°C.
    pub alpha_cu: f64,
    /// Back-EMF / torque constant, V·s/rad.
    pub k_e: f64,
    /// Total inertia, kg·m².
    pub j: f64,
    /// Viscous friction, N·m·s/rad.
    pub b: f64,
    /// Iron-loss constant, W/(rad/s)².
    pub k_ir: f64,
    /// Zero-speed heat transfer coefficient, W/°C.
    pub k_0: f64,
    /// Speed dependence of the heat transfer coefficient, s/rad.
    pub k_t: f64,
    /// Thermal capacity, J/°C.
    pub h: f64,
}

impl MotorParams {
    /// Field names in the order used by the parameter file format.
    pub const FIELD_NAMES: [&'static str; 13] = [
        "v_rated",
        "p_rated",
        "t_l_rated",
        "r_a0",
        "l_a",
        "alpha_cu",
        "k_e",
        "j",
        "b",
        "k_ir",
        "k_0",
        "k_t",
        "h",
    ];

    /// The reference machine calibrated against the default operating point.
    pub fn nominal() -> Self {
        let fixed = FixedParams::default();
        calibrate(&CalibrationTargets::default(), fixed.v_rated, fixed.t_l_rated, &fixed)
            .expect("default calibration targets are feasible")
    }

    pub fn fields(&self) -> [(&'static str, f64); 13] {
        [
            ("v_rated", self.v_rated),
            ("p_rated", self.p_rated),
            ("t_l_rated", self.t_l_rated),
            ("r_a0", self.r_a0),
            ("l_a", self.l_a),
            ("alpha_cu", self.alpha_cu),
            ("k_e", self.k_e),
            ("j", self.j),
            ("b", self.b),
            ("k_ir", self.k_ir),
            ("k_0", self.k_0),
            ("k_t", self.k_t),
            ("h", self.h),
        ]
    }

    /// Mutable access by field name, used by the text parameter format.
    pub fn field_mut(&mut self, name: &str) -> Option<&mut f64> {
        Some(match name {
            "v_rated" => &mut self.v_rated,
            "p_rated" => &mut self.p_rated,
            "t_l_rated" => &mut self.t_l_rated,
            "r_a0" => &mut self.r_a0,
            "l_a" => &mut self.l_a,
            "alpha_cu" => &mut self.alpha_cu,
            "k_e" => &mut self.k_e,
            "j" => &mut self.j,
            "b" => &mut self.b,
            "k_ir" => &mut self.k_ir,
            "k_0" => &mut self.k_0,
            "k_t" => &mut self.k_t,
            "h" => &mut self.h,
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<(), MotorError> {
        for (name, value) in self.fields() {
            if !(value.is_finite() && value > 0.0) {
                return Err(MotorError::InvalidParameter { name, value });
            }
        }
        Ok(())
    }

    /// Rated armature current, `p_rated / v_rated`.
    pub fn rated_current(&self) -> f64 {
        self.p_rated / self.v_rated
    }

    /// Electrical time constant at ambient temperature, `l_a / r_a0`.
    pub fn electrical_time_constant(&self) -> f64 {
        self.l_a / self.r_a0
    }

    /// Zero-speed thermal time constant, `h / k_0`.
    pub fn thermal_time_constant(&self) -> f64 {
        self.h / self.k_0
    }
}

/// The constants that are known up front; `k_e`, `b` and `J` are solved for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedParams {
    pub v_rated: f64,
    pub p_rated: f64,
    pub t_l_rated: f64,
    pub r_a0: f64,
    pub l_a: f64,
    pub alpha_cu: f64,
    pub k_ir: f64,
    pub k_0: f64,
    pub k_t: f64,
    pub h: f64,
}

impl Default for FixedParams {
    fn default() -> Self {
        Self {
            v_rated: 240.0,
            p_rated: 3000.0,
            t_l_rated: 11.0,
            r_a0: 3.5,
            l_a: 0.034,
            alpha_cu: 0.004,
            k_ir: 0.0041,
            k_0: 4.33,
            k_t: 0.0028,
            h: 18000.0,
        }
    }
}

impl FixedParams {
    /// Completes the set with the mechanical constants.
    pub fn with_mechanics(&self, k_e: f64, j: f64, b: f64) -> MotorParams {
        MotorParams {
            v_rated: self.v_rated,
            p_rated: self.p_rated,
            t_l_rated: self.t_l_rated,
            r_a0: self.r_a0,
            l_a: self.l_a,
            alpha_cu: self.alpha_cu,
            k_e,
            j,
            b,
            k_ir: self.k_ir,
            k_0: self.k_0,
            k_t: self.k_t,
            h: self.h,
        }
    }
}

impl From<MotorParams> for FixedParams {
    fn from(p: MotorParams) -> Self {
        Self {
            v_rated: p.v_rated,
            p_rated: p.p_rated,
            t_l_rated: p.t_l_rated,
            r_a0: p.r_a0,
            l_a: p.l_a,
            alpha_cu: p.alpha_cu,
            k_ir: p.k_ir,
            k_0: p.k_0,
            k_t: p.k_t,
            h: p.h,
        }
    }
}

/// Operating point the calibrated machine must settle at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTargets {
    /// Steady-state speed, rad/s.
    pub omega_ss: f64,
    /// Steady-state temperature rise, °C.
    pub theta_ss: f64,
    /// Mechanical time constant `J / b`, s.
    pub mech_time_constant: f64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        Self {
            omega_ss: 23.24,
            theta_ss: 80.0,
            mech_time_constant: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MotorState {
    /// Armature current, A.
    pub i_a: f64,
    /// Speed, rad/s.
    pub omega: f64,
    /// Temperature rise above ambient, °C.
    pub theta: f64,
}

impl MotorState {
    pub const fn new(i_a: f64, omega: f64, theta: f64) -> Self {
        Self { i_a, omega, theta }
    }

    pub fn is_finite(&self) -> bool {
        self.i_a.is_finite() && self.omega.is_finite() && self.theta.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MotorInput {
    /// Armature voltage, V.
    pub v_a: f64,
    /// Load torque, N·m.
    pub t_l: f64,
}

impl MotorInput {
    pub const fn new(v_a: f64, t_l: f64) -> Self {
        Self { v_a, t_l }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateDerivative {
    pub di_a_dt: f64,
    pub domega_dt: f64,
    pub dtheta_dt: f64,
}

impl StateDerivative {
    pub fn max_abs(&self) -> f64 {
        self.di_a_dt.abs().max(self.domega_dt.abs()).max(self.dtheta_dt.abs())
    }
}

/// Armature resistance at temperature rise `theta`.
#[inline]
pub fn resistance(params: &MotorParams, theta: f64) -> f64 {
    params.r_a0 * (1.0 + params.alpha_cu * theta)
}

/// Copper plus iron losses, W.
#[inline]
pub fn power_losses(params: &MotorParams, state: &MotorState) -> f64 {
    resistance(params, state.theta) * state.i_a * state.i_a + params.k_ir * state.omega * state.omega
}

/// Convective heat flow from the armature to the cooling air, W.
#[inline]
pub fn heat_dissipation(params: &MotorParams, state: &MotorState) -> f64 {
    params.k_0 * (1.0 + params.k_t * state.omega) * state.theta
}

/// Right-hand side of the state equations.
pub fn derivatives(params: &MotorParams, state: &MotorState, input: &MotorInput) -> StateDerivative {
    let r = resistance(params, state.theta);
    StateDerivative {
        di_a_dt: (input.v_a - r * state.i_a - params.k_e * state.omega) / params.l_a,
        domega_dt: (params.k_e * state.i_a - params.b * state.omega - input.t_l) / params.j,
        dtheta_dt: (power_losses(params, state) - heat_dissipation(params, state)) / params.h,
    }
}

/// Electrical, mechanical and thermal balances (V, N·m, W). Zero at equilibrium.
fn balances(params: &MotorParams, x: &[f64; 3], input: &MotorInput) -> [f64; 3] {
    let state = MotorState::new(x[0], x[1], x[2]);
    let r = resistance(params, state.theta);
    [
        input.v_a - r * state.i_a - params.k_e * state.omega,
        params.k_e * state.i_a - params.b * state.omega - input.t_l,
        power_losses(params, &state) - heat_dissipation(params, &state),
    ]
}

fn balance_jacobian(params: &MotorParams, x: &[f64; 3]) -> [[f64; 3]; 3] {
    let [i, w, th] = *x;
    let r = resistance(params, th);
    [
        [-r, -params.k_e, -params.r_a0 * params.alpha_cu * i],
        [params.k_e, -params.b, 0.0],
        [
            2.0 * r * i,
            2.0 * params.k_ir * w - params.k_0 * params.k_t * th,
            params.r_a0 * params.alpha_cu * i * i - params.k_0 * (1.0 + params.k_t * w),
        ],
    ]
}

/// Gaussian elimination with partial pivoting on a 3x3 system.
fn solve3(mut a: [[f64; 3]; 3], mut rhs: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..3 {
            let factor = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (x, p) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= factor * p;
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = rhs[row];
        for k in row + 1..3 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn converged(params: &MotorParams, f: &[f64; 3]) -> bool {
    let scaled = [f[0] / params.l_a, f[1] / params.j, f[2] / params.h];
    f.iter().chain(scaled.iter()).all(|v| v.abs() <= STEADY_STATE_TOL)
}

fn merit(f: &[f64; 3]) -> f64 {
    f.iter().map(|v| v * v).sum()
}

/// Equilibrium of the state equations for constant inputs.
///
/// Damped Newton on the three balances with an analytic Jacobian, started
/// from the cold mechanical equilibrium. Fails with
/// [`MotorError::NoConvergence`] when no admissible equilibrium is reached,
/// e.g. thermal runaway when copper losses outgrow the convective term.
pub fn steady_state(params: &MotorParams, v_a: f64, t_l: f64) -> Result<MotorState, MotorError> {
    params.validate()?;
    let input = MotorInput::new(v_a, t_l);
    // cold start: R i + k_e w = v, k_e i - b w = t_l
    let det = params.r_a0 * params.b + params.k_e * params.k_e;
    let i0 = (v_a * params.b + params.k_e * t_l) / det;
    let w0 = (params.k_e * v_a - params.r_a0 * t_l) / det;
    let mut x = [i0, w0, 0.0];
    let mut f = balances(params, &x, &input);

    for _ in 0..STEADY_STATE_MAX_ITER {
        if converged(params, &f) {
            return admissible(params, x, &f);
        }
        let jac = balance_jacobian(params, &x);
        let step = solve3(jac, [-f[0], -f[1], -f[2]]).ok_or(MotorError::NoConvergence {
            iterations: 0,
            residual: merit(&f).sqrt(),
        })?;
        let current = merit(&f);
        let mut lambda = 1.0;
        loop {
            let trial = [
                x[0] + lambda * step[0],
                x[1] + lambda * step[1],
                x[2] + lambda * step[2],
            ];
            let f_trial = balances(params, &trial, &input);
            let m = merit(&f_trial);
            if m.is_finite() && (m < current || lambda < 1e-12) {
                x = trial;
                f = f_trial;
                break;
            }
            lambda *= 0.5;
        }
    }
    if converged(params, &f) {
        return admissible(params, x, &f);
    }
    Err(MotorError::NoConvergence {
        iterations: STEADY_STATE_MAX_ITER,
        residual: merit(&f).sqrt(),
    })
}

/// Rejects roots that need a non-positive winding resistance.
fn admissible(params: &MotorParams, x: [f64; 3], f: &[f64; 3]) -> Result<MotorState, MotorError> {
    if resistance(params, x[2]) > 0.0 {
        Ok(MotorState::new(x[0], x[1], x[2]))
    } else {
        Err(MotorError::NoConvergence {
            iterations: 0,
            residual: merit(f).sqrt(),
        })
    }
}

/// Solves the three steady-state balances for `k_e`, `b` and `J`.
///
/// The thermal balance at the target fixes the current, the electrical
/// balance then fixes `k_e`, and the mechanical balance fixes `b`. `J` follows
/// from the requested mechanical time constant.
pub fn calibrate(
    targets: &CalibrationTargets,
    v_a: f64,
    t_l: f64,
    fixed: &FixedParams,
) -> Result<MotorParams, MotorError> {
    let CalibrationTargets {
        omega_ss,
        theta_ss,
        mech_time_constant,
    } = *targets;
    if !(omega_ss > 0.0 && omega_ss.is_finite()) {
        return Err(MotorError::InfeasibleTarget {
            reason: "target speed must be positive",
        });
    }
    if !(theta_ss.is_finite() && mech_time_constant > 0.0 && mech_time_constant.is_finite()) {
        return Err(MotorError::InfeasibleTarget {
            reason: "target temperature and mechanical time constant must be finite and positive",
        });
    }
    let r = fixed.r_a0 * (1.0 + fixed.alpha_cu * theta_ss);
    let i_sq = (fixed.k_0 * (1.0 + fixed.k_t * omega_ss) * theta_ss - fixed.k_ir * omega_ss * omega_ss) / r;
    if !(i_sq > 0.0) {
        return Err(MotorError::InfeasibleTarget {
            reason: "thermal balance implies non-positive squared current",
        });
    }
    let i_ss = i_sq.sqrt();
    let k_e = (v_a - r * i_ss) / omega_ss;
    if !(k_e > 0.0) {
        return Err(MotorError::InfeasibleTarget {
            reason: "electrical balance implies non-positive back-EMF constant",
        });
    }
    let b = (k_e * i_ss - t_l) / omega_ss;
    if !(b > 0.0) {
        return Err(MotorError::InfeasibleTarget {
            reason: "mechanical balance implies non-positive viscous friction",
        });
    }
    let params = fixed.with_mechanics(k_e, mech_time_constant * b, b);
    params.validate()?;
    Ok(params)
}
