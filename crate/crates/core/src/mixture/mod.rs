//! The mixture model: parameters, E-step, bounds, gradients and the EM loop.

mod bound;
pub mod checkpoint;
mod fit;
mod state;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bound::{
    c_terms, estep_qf, estep_qs, kl_bound, kl_bound_and_grads, kl_bound_grads, kl_bound_value,
    standard_bound, BoundReport, JITTER_BASE,
};
pub use fit::{em_fit, fit_from_state, EmConfig, FitOutput, IterationRecord};
pub use state::{init_model, initial_beta, InitConfig, ModelState, ParamLayout};

/// Smallest responsibility kept after flooring.
pub const RESPONSIBILITY_FLOOR: f64 = 1e-8;

/// One outer-iteration entry of a fit trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub kl_bound: f64,
    pub accuracy: Option<f64>,
}

/// `N × M` row-stochastic matrix of cluster-membership probabilities with
/// every entry at least [`RESPONSIBILITY_FLOOR`].
#[derive(Clone, Debug, PartialEq)]
pub struct Responsibilities {
    r: DMatrix<f64>,
}

impl Responsibilities {
    /// Floors and renormalizes rows that already sum to one (within 1e-6).
    pub fn from_probabilities(p: DMatrix<f64>) -> Result<Self> {
        if p.nrows() == 0 || p.ncols() == 0 {
            return Err(Error::InvalidArgument("empty responsibilities".into()));
        }
        let mut r = p;
        for i in 0..r.nrows() {
            let s: f64 = r.row(i).sum();
            if r.row(i).iter().any(|v| !v.is_finite() || *v < 0.0) || (s - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!("row {i} is not a probability vector")));
            }
            let mut row: Vec<f64> = r.row(i).iter().map(|v| v / s).collect();
            floor_row(&mut row, RESPONSIBILITY_FLOOR);
            for (j, v) in row.into_iter().enumerate() {
                r[(i, j)] = v;
            }
        }
        Ok(Responsibilities { r })
    }

    /// Normalizes each row of unnormalized log-probabilities with
    /// log-sum-exp, then floors.
    pub fn from_log_weights(log_p: &DMatrix<f64>) -> Result<Self> {
        let mut r = DMatrix::zeros(log_p.nrows(), log_p.ncols());
        for i in 0..log_p.nrows() {
            let row = log_p.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() || row.iter().any(|v| v.is_nan()) {
                return Err(Error::Numerical {
                    iteration: 0,
                    message: format!("membership log-weights of point {i} are not finite"),
                });
            }
            let w: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let s: f64 = w.iter().sum();
            let mut row: Vec<f64> = w.iter().map(|v| v / s).collect();
            floor_row(&mut row, RESPONSIBILITY_FLOOR);
            for (j, v) in row.into_iter().enumerate() {
                r[(i, j)] = v;
            }
        }
        Ok(Responsibilities { r })
    }

    pub fn uniform(n: usize, m: usize) -> Self {
        Responsibilities {
            r: DMatrix::from_element(n, m, 1.0 / m as f64),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.r
    }

    pub fn n(&self) -> usize {
        self.r.nrows()
    }

    pub fn m(&self) -> usize {
        self.r.ncols()
    }

    /// Column `k` of the result is column `order[k]` of `self`.
    pub fn permute_components(&self, order: &[usize]) -> Result<Self> {
        state::check_permutation(order, self.m())?;
        let mut r = self.r.clone();
        for (k, &src) in order.iter().enumerate() {
            r.column_mut(k).copy_from(&self.r.column(src));
        }
        Ok(Responsibilities { r })
    }

    /// Wraps a matrix written by this type earlier (e.g. a checkpoint).
    pub(crate) fn from_raw(r: DMatrix<f64>) -> Self {
        Responsibilities { r }
    }
}

/// Raises entries below `eps` to `eps` and rescales the rest so the row
/// still sums to one. Rescaling can push further entries under the floor,
/// so this repeats until nothing changes.
fn floor_row(row: &mut [f64], eps: f64) {
    let m = row.len();
    if m == 1 {
        row[0] = 1.0;
        return;
    }
    let mut fixed = vec![false; m];
    loop {
        let mut changed = false;
        for j in 0..m {
            if !fixed[j] && row[j] < eps {
                fixed[j] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let n_fixed = fixed.iter().filter(|&&f| f).count();
        let free: f64 = (0..m).filter(|&j| !fixed[j]).map(|j| row[j]).sum();
        let scale = (1.0 - n_fixed as f64 * eps) / free;
        for j in 0..m {
            row[j] = if fixed[j] { eps } else { row[j] * scale };
        }
    }
}

/// Index of the largest responsibility per row, lowest index on ties.
pub fn assign_clusters(r: &Responsibilities) -> Vec<usize> {
    r.r.row_iter()
        .map(|row| {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
