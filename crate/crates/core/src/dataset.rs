//! Supervised dataset built from a (noisy) trajectory.
//!
//! Inputs are the measured `(v_a, i_a)` pairs, optionally extended with
//! delayed copies of both channels; targets are `(omega, theta, r_a)`. Every
//! column is min/max scaled onto `[-1, 1]` with the range recorded at build
//! time.

use alloc::vec::Vec;

use thiserror::Error;

use crate::simulate::Trajectory;

/// Number of target columns: speed, temperature rise, resistance.
pub const N_TARGETS: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("dataset would contain {rows} rows, at least 2 are required")]
    EmptyDataset { rows: usize },
    #[error("decimation factor must be at least 1")]
    InvalidDecimation,
    #[error("expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
}

/// Recorded `[min, max]` of one column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnRange {
    pub min: f64,
    pub max: f64,
}

impl ColumnRange {
    /// Identity scaling (values are already in `[-1, 1]`).
    pub const UNIT: ColumnRange = ColumnRange { min: -1.0, max: 1.0 };

    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        Self { min, max }
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    /// Maps `[min, max]` onto `[-1, 1]`; a degenerate range maps to 0.
    #[inline]
    pub fn normalize(&self, x: f64) -> f64 {
        let span = self.span();
        if span > 0.0 {
            2.0 * (x - self.min) / span - 1.0
        } else {
            0.0
        }
    }

    #[inline]
    pub fn denormalize(&self, z: f64) -> f64 {
        let span = self.span();
        if span > 0.0 {
            self.min + 0.5 * (z + 1.0) * span
        } else {
            self.min
        }
    }

    /// Scale factor of `denormalize`, i.e. raw units per normalized unit.
    pub fn half_span(&self) -> f64 {
        0.5 * self.span()
    }
}

/// Normalized input/target rows plus the scaling needed to undo it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_inputs: usize,
    pub n_outputs: usize,
    /// Row-major, normalized.
    pub inputs: Vec<f64>,
    /// Row-major, normalized.
    pub targets: Vec<f64>,
    pub input_ranges: Vec<ColumnRange>,
    pub target_ranges: Vec<ColumnRange>,
    /// Number of delayed copies of `(v_a, i_a)` per row.
    pub delay_taps: usize,
    /// Trajectory samples between consecutive taps.
    pub tap_stride: usize,
}

impl Dataset {
    /// Builds a dataset from raw rows, recording per-column ranges.
    pub fn from_raw(
        raw_inputs: &[f64],
        raw_targets: &[f64],
        n_inputs: usize,
        n_outputs: usize,
    ) -> Result<Self, DatasetError> {
        check_shape(raw_inputs, raw_targets, n_inputs, n_outputs)?;
        let input_ranges = column_ranges(raw_inputs, n_inputs);
        let target_ranges = column_ranges(raw_targets, n_outputs);
        Ok(Self::from_raw_with_ranges(
            raw_inputs,
            raw_targets,
            n_inputs,
            n_outputs,
            input_ranges,
            target_ranges,
        ))
    }

    /// Rows that are already on the normalized scale.
    pub fn from_normalized(
        inputs: Vec<f64>,
        targets: Vec<f64>,
        n_inputs: usize,
        n_outputs: usize,
    ) -> Result<Self, DatasetError> {
        check_shape(&inputs, &targets, n_inputs, n_outputs)?;
        Ok(Self {
            n_inputs,
            n_outputs,
            inputs,
            targets,
            input_ranges: alloc::vec![ColumnRange::UNIT; n_inputs],
            target_ranges: alloc::vec![ColumnRange::UNIT; n_outputs],
            delay_taps: 0,
            tap_stride: 1,
        })
    }

    fn from_raw_with_ranges(
        raw_inputs: &[f64],
        raw_targets: &[f64],
        n_inputs: usize,
        n_outputs: usize,
        input_ranges: Vec<ColumnRange>,
        target_ranges: Vec<ColumnRange>,
    ) -> Self {
        let scale = |raw: &[f64], ranges: &[ColumnRange], width: usize| -> Vec<f64> {
            raw.iter()
                .enumerate()
                .map(|(idx, &x)| ranges[idx % width].normalize(x))
                .collect()
        };
        Self {
            n_inputs,
            n_outputs,
            inputs: scale(raw_inputs, &input_ranges, n_inputs),
            targets: scale(raw_targets, &target_ranges, n_outputs),
            input_ranges,
            target_ranges,
            delay_taps: 0,
            tap_stride: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len().checked_div(self.n_inputs).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input(&self, row: usize) -> &[f64] {
        &self.inputs[row * self.n_inputs..(row + 1) * self.n_inputs]
    }

    pub fn target(&self, row: usize) -> &[f64] {
        &self.targets[row * self.n_outputs..(row + 1) * self.n_outputs]
    }

    pub fn raw_input(&self, row: usize) -> Vec<f64> {
        denormalize_row(self.input(row), &self.input_ranges)
    }

    pub fn raw_target(&self, row: usize) -> Vec<f64> {
        denormalize_row(self.target(row), &self.target_ranges)
    }

    /// Column names, `v_a,i_a` followed by the lagged copies and the targets.
    pub fn column_names(&self) -> Vec<alloc::string::String> {
        input_column_names(self.delay_taps)
            .into_iter()
            .chain(["omega", "theta", "r_a"].map(alloc::string::String::from))
            .collect()
    }
}

pub fn input_column_names(delay_taps: usize) -> Vec<alloc::string::String> {
    use alloc::format;
    let mut names = Vec::with_capacity(2 * (delay_taps + 1));
    for lag in 0..=delay_taps {
        if lag == 0 {
            names.push("v_a".into());
            names.push("i_a".into());
        } else {
            names.push(format!("v_a_lag{lag}"));
            names.push(format!("i_a_lag{lag}"));
        }
    }
    names
}

fn check_shape(inputs: &[f64], targets: &[f64], n_inputs: usize, n_outputs: usize) -> Result<(), DatasetError> {
    if n_inputs == 0 || !inputs.len().is_multiple_of(n_inputs) {
        return Err(DatasetError::ShapeMismatch {
            expected: n_inputs,
            actual: inputs.len(),
        });
    }
    let rows = inputs.len() / n_inputs;
    if targets.len() != rows * n_outputs {
        return Err(DatasetError::ShapeMismatch {
            expected: rows * n_outputs,
            actual: targets.len(),
        });
    }
    Ok(())
}

fn column_ranges(raw: &[f64], width: usize) -> Vec<ColumnRange> {
    (0..width)
        .map(|c| ColumnRange::of(raw.iter().skip(c).step_by(width).copied()))
        .collect()
}

fn denormalize_row(row: &[f64], ranges: &[ColumnRange]) -> Vec<f64> {
    row.iter().zip(ranges).map(|(&z, r)| r.denormalize(z)).collect()
}

/// Appends the raw input features of sample `k`: `(v, i)` at `k`, then at
/// `k - stride`, ..., `k - taps * stride`. Requires `k >= taps * stride`.
#[inline]
pub fn push_features(v_a: &[f64], i_a: &[f64], k: usize, taps: usize, stride: usize, out: &mut Vec<f64>) {
    for lag in 0..=taps {
        let idx = k - lag * stride;
        out.push(v_a[idx]);
        out.push(i_a[idx]);
    }
}

/// Keeps every `decimate`-th sample and forms one row per kept sample that has
/// `delay_taps` kept predecessors.
pub fn make_dataset(traj: &Trajectory, decimate: usize, delay_taps: usize) -> Result<Dataset, DatasetError> {
    if decimate == 0 {
        return Err(DatasetError::InvalidDecimation);
    }
    let kept = traj.len().div_ceil(decimate);
    let rows = kept.saturating_sub(delay_taps);
    if rows < 2 {
        return Err(DatasetError::EmptyDataset { rows });
    }
    let n_inputs = 2 * (delay_taps + 1);
    let mut raw_inputs = Vec::with_capacity(rows * n_inputs);
    let mut raw_targets = Vec::with_capacity(rows * N_TARGETS);
    for m in delay_taps..kept {
        let k = m * decimate;
        push_features(&traj.v_a, &traj.i_a, k, delay_taps, decimate, &mut raw_inputs);
        raw_targets.extend_from_slice(&[traj.omega[k], traj.theta[k], traj.r_a[k]]);
    }
    let mut ds = Dataset::from_raw(&raw_inputs, &raw_targets, n_inputs, N_TARGETS)?;
    ds.delay_taps = delay_taps;
    ds.tap_stride = decimate;
    Ok(ds)
}
