//! Batched Newton-Raphson iteration in polar coordinates.
//!
//! Unknowns are ordered `x = [Δθ over PV and PQ buses, Δ|V| over PQ buses]`
//! (ascending bus index inside each group) and the right-hand side is the
//! mismatch `b = [ΔP, ΔQ]` in the same order. Mismatch is calculated minus
//! specified injection, so the update is `v -= J⁻¹ b`.

mod flows;
mod jacobian;
mod kernels;
mod solver;

use thiserror::Error;

use crate::grid::Ybus;
use crate::tape::BatchTape;

pub use flows::{branch_flows, calc_branch_flows, BranchFlow};
pub use jacobian::{JacobianPattern, SlotMap};
pub(crate) use kernels::reduced_jacobian_lane;
pub use kernels::{compute_npm, update_jacobian, update_voltage};
pub use solver::{
    nr_solve_batch, solve_minibatch, BatchInputs, LinearPlan, NrSetup, TaskOutcome, TaskStatus,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("tolerance must be positive and finite, got {0}")]
    Tolerance(f64),
    #[error("max_iter must be at least 1")]
    MaxIter,
    #[error("mini-batch width must be at least 1")]
    MinibatchWidth,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct NrConfig {
    /// Infinity-norm mismatch tolerance, p.u.
    pub tol: f64,
    pub max_iter: usize,
    pub minibatch_width: usize,
}

impl Default for NrConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10,
            minibatch_width: 4,
        }
    }
}

impl NrConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(ConfigError::Tolerance(self.tol));
        }
        if self.max_iter == 0 {
            return Err(ConfigError::MaxIter);
        }
        if self.minibatch_width == 0 {
            return Err(ConfigError::MinibatchWidth);
        }
        Ok(())
    }
}

/// Voltage angles (radians) and magnitudes (p.u.), `n_bus x n_tasks`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarVoltageBatch {
    pub va: BatchTape,
    pub vm: BatchTape,
}

impl PolarVoltageBatch {
    pub fn n_tasks(&self) -> usize {
        self.vm.n_tasks()
    }
}

/// Mismatch rows in the reduced order: ΔP over PV and PQ buses followed by
/// ΔQ over PQ buses.
#[derive(Debug, Clone, PartialEq)]
pub struct MismatchBatch {
    pub values: BatchTape,
    pub n_p: usize,
}

impl MismatchBatch {
    pub fn zeros(jacobian: &JacobianPattern, n_tasks: usize) -> Self {
        Self {
            values: BatchTape::zeros(jacobian.dim(), n_tasks),
            n_p: jacobian.n_pvpq(),
        }
    }

    pub fn dp(&self, row: usize, task: usize) -> f64 {
        self.values.get(row, task)
    }

    pub fn dq(&self, row: usize, task: usize) -> f64 {
        self.values.get(self.n_p + row, task)
    }

    /// Infinity norm of one task's mismatch; NaN if any entry is NaN.
    pub fn max_abs(&self, task: usize) -> f64 {
        max_abs_lane(self.values.as_slice(), self.values.n_tasks(), task)
    }
}

pub(crate) fn max_abs_lane(values: &[f64], w: usize, lane: usize) -> f64 {
    let mut m = 0.0f64;
    for v in values.iter().skip(lane).step_by(w) {
        if v.is_nan() {
            return f64::NAN;
        }
        m = m.max(v.abs());
    }
    m
}

/// Admittance values in polar form, `nnz x n_tasks`. A single task column
/// is shared by every task.
#[derive(Debug, Clone, PartialEq)]
pub struct YbusPolar {
    pub mag: BatchTape,
    pub ang: BatchTape,
}

impl YbusPolar {
    pub fn from_rect(re: &[f64], im: &[f64]) -> (Vec<f64>, Vec<f64>) {
        re.iter()
            .zip(im)
            .map(|(&a, &b)| (a.hypot(b), b.atan2(a)))
            .unzip()
    }

    /// The case's own values, shared by all tasks.
    pub fn shared(ybus: &Ybus) -> Self {
        let (mag, ang) = Self::from_rect(ybus.re(), ybus.im());
        Self {
            mag: BatchTape::broadcast(&mag, 1),
            ang: BatchTape::broadcast(&ang, 1),
        }
    }

    /// One value set per task, given in rectangular form.
    pub fn per_task(values: &[(Vec<f64>, Vec<f64>)]) -> Self {
        let (mag, ang): (Vec<Vec<f64>>, Vec<Vec<f64>>) = values
            .iter()
            .map(|(re, im)| Self::from_rect(re, im))
            .unzip();
        Self {
            mag: BatchTape::from_task_major(&mag),
            ang: BatchTape::from_task_major(&ang),
        }
    }

    pub fn is_shared(&self) -> bool {
        self.mag.n_tasks() == 1
    }

    /// Copies the values of `tasks` into `w`-lane working tapes, repeating
    /// the shared column when there is only one.
    pub(crate) fn load_lanes(
        &self,
        tasks: std::ops::Range<usize>,
        mag: &mut [f64],
        ang: &mut [f64],
    ) {
        let w = tasks.len();
        let nnz = self.mag.n_slots();
        for s in 0..nnz {
            for (lane, t) in tasks.clone().enumerate() {
                let src = if self.is_shared() { 0 } else { t };
                mag[s * w + lane] = self.mag.get(s, src);
                ang[s * w + lane] = self.ang.get(s, src);
            }
        }
    }
}
