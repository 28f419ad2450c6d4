//! Finite-difference verification of the bound gradient on random small
//! problems.

use std::ops::Range;

use gpmix_core::mixture::{kl_bound_grads, kl_bound_value, ModelState, Responsibilities};
use gpmix_core::{DMatrix, DVector, KernelParams, KernelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const TOLERANCE: f64 = 1e-4;
/// Below this magnitude a gradient entry is compared in absolute terms.
const ABS_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub n: usize,
    pub n_inducing: usize,
    pub clusters: usize,
    pub latent_dim: usize,
    pub output_dim: usize,
    pub kernel: KernelSpec,
    pub seed: u64,
    pub step: f64,
    /// Test hook: perturbs the analytic gradient at this flat index.
    pub corrupt: Option<usize>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            n: 15,
            n_inducing: 4,
            clusters: 2,
            latent_dim: 2,
            output_dim: 3,
            kernel: KernelSpec::Rbf,
            seed: 0,
            step: 1e-5,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockError {
    pub block: &'static str,
    pub max_rel_error: f64,
    /// Flat index where the maximum occurs.
    pub worst_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub blocks: Vec<BlockError>,
}

impl GradcheckReport {
    pub fn worst(&self) -> &BlockError {
        self.blocks
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
            .expect("at least one block")
    }

    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_error < TOLERANCE)
    }
}

/// A random state, soft assignment and data set of the configured size.
pub fn random_problem(cfg: &GradcheckConfig) -> (ModelState, Responsibilities, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let (n, q, m) = (cfg.n, cfg.latent_dim, cfg.clusters);
    let x = DMatrix::from_fn(n, q, |_, _| u(-1.5, 1.5));
    let x_u = DMatrix::from_fn(cfg.n_inducing, q, |_, _| u(-1.5, 1.5));
    let kernels = (0..m)
        .map(|_| KernelParams {
            log_lin: u(-0.5, 0.5),
            log_rbf: u(-0.5, 0.5),
            log_gamma: u(-0.7, 0.3),
            log_bias: u(-3.0, -1.0),
            log_white: u(-3.0, -1.0),
        })
        .collect();
    let state = ModelState {
        kernel: cfg.kernel,
        x,
        x_u,
        kernels,
        beta: u(1.0, 5.0),
        log_pi: DVector::from_fn(m, |_, _| u(-0.5, 0.5)),
        means: DMatrix::from_fn(m, q, |_, _| u(-1.0, 1.0)),
        log_cov_diag: DMatrix::from_fn(m, q, |_, _| u(-0.5, 0.5)),
    };
    let mut p = DMatrix::from_fn(n, m, |_, _| u(0.05, 1.0));
    for mut row in p.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    let r = Responsibilities::from_probabilities(p).expect("rows normalized above");
    let y = DMatrix::from_fn(n, cfg.output_dim, |_, _| u(-2.0, 2.0));
    (state, r, y)
}

/// Compares the analytic gradient with central differences and reports
/// the largest error per parameter block. Errors are relative, except for
/// entries smaller than 1e-3 in magnitude, which are compared absolutely.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> CliResult<GradcheckReport> {
    if cfg.n == 0 || cfg.n > 30 || cfg.n_inducing == 0 || cfg.n_inducing > cfg.n {
        return Err(CliError::Usage("gradcheck needs 1 <= inducing <= N <= 30".into()));
    }
    if cfg.clusters == 0 || cfg.latent_dim == 0 || cfg.output_dim == 0 || !(cfg.step > 0.0) {
        return Err(CliError::Usage("gradcheck dimensions and step must be positive".into()));
    }
    let (state, r, y) = random_problem(cfg);
    let mut grad = kl_bound_grads(&state, &r, &y)?;
    if let Some(i) = cfg.corrupt {
        let g = grad
            .get_mut(i)
            .ok_or_else(|| CliError::Usage(format!("corrupt index {i} out of range")))?;
        *g = *g * 1.5 + 0.1;
    }
    let x0 = state.flatten();
    let f = |x: &[f64]| -> CliResult<f64> { Ok(kl_bound_value(&state.unflatten(x)?, &r, &y)?) };
    let layout = state.layout();
    let lb = layout.log_beta();
    let blocks: [(&'static str, Range<usize>); 7] = [
        ("x", layout.x()),
        ("x_u", layout.x_u()),
        ("kernel", layout.kernels()),
        ("log_beta", lb..lb + 1),
        ("log_pi", layout.log_pi()),
        ("means", layout.means()),
        ("log_cov", layout.log_cov()),
    ];
    let mut out = Vec::with_capacity(blocks.len());
    for (name, range) in blocks {
        let mut worst = (0.0f64, range.start);
        for i in range {
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[i] += cfg.step;
            xm[i] -= cfg.step;
            let fd = (f(&xp)? - f(&xm)?) / (2.0 * cfg.step);
            let err = (fd - grad[i]).abs() / grad[i].abs().max(ABS_FLOOR);
            let err = if err.is_nan() { f64::INFINITY } else { err };
            if err > worst.0 {
                worst = (err, i);
            }
        }
        out.push(BlockError {
            block: name,
            max_rel_error: worst.0,
            worst_index: worst.1,
        });
    }
    Ok(GradcheckReport { blocks: out })
}
