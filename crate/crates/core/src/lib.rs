//! Sensorless speed, armature temperature and armature resistance estimation
//! for brushed DC machines.
//!
//! The crate is split along the estimation pipeline:
//!
//! - [`motor`]: the coupled electrical/mechanical/thermal machine model, its
//!   equilibrium solver and the closed-form calibration of the constants that
//!   are not directly known (`k_e`, `b`, `J`).
//! - [`simulate`]: fixed-step RK4 integration over duty profiles and seeded
//!   measurement noise.
//! - [`dataset`]: supervised dataset construction with min/max scaling.
//! - [`cfnn`]: cascade-forward network evaluation and backpropagation.
//! - [`bfgs`]: quasi-Newton minimizer updating the Hessian approximation
//!   directly, with a strong-Wolfe line search.
//! - [`estimator`]: the end-to-end experiment and its error report.
//!
//! Everything here is `no_std` + `alloc`. File formats, configuration and the
//! command-line driver live in the companion `bdc-estim` crate.
#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod bfgs;
pub mod cfnn;
pub mod dataset;
pub mod estimator;
pub mod linalg;
pub mod motor;
pub mod simulate;

pub use bfgs::{BfgsError, TrainConfig, TrainHistory};
pub use cfnn::{Activation, CfnnError, Topology};
pub use dataset::{ColumnRange, Dataset, DatasetError};
pub use estimator::{EvalReport, ExperimentConfig, Model};
pub use motor::{MotorError, MotorInput, MotorParams, MotorState};
pub use simulate::{DutyProfile, DutySegment, SimError, Trajectory};

/// Converts an angular speed in rad/s to revolutions per minute.
#[inline]
pub fn rad_s_to_rpm(omega: f64) -> f64 {
    omega * 60.0 / (2.0 * core::f64::consts::PI)
}

/// Converts revolutions per minute to rad/s.
#[inline]
pub fn rpm_to_rad_s(rpm: f64) -> f64 {
    rpm * 2.0 * core::f64::consts::PI / 60.0
}
