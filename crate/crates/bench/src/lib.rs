//! Deterministic model fixtures shared by the benchmarks.

use gpmix_core::{DMatrix, DVector, KernelParams, KernelSpec, ModelState, Responsibilities};

/// Smooth pseudo-random values in [-1, 1]; no RNG so every run sees the
/// same numbers.
fn wave(i: usize, j: usize, salt: usize) -> f64 {
    ((i * 7919 + j * 104_729 + salt * 1_299_709) as f64 * 0.618_033_988_7).sin()
}

pub struct Fixture {
    pub state: ModelState,
    pub r: Responsibilities,
    pub y: DMatrix<f64>,
}

pub fn fixture(n: usize, n_inducing: usize, m: usize, q: usize, p: usize) -> Fixture {
    let state = ModelState {
        kernel: KernelSpec::Rbf,
        x: DMatrix::from_fn(n, q, |i, j| 2.0 * wave(i, j, 1)),
        x_u: DMatrix::from_fn(n_inducing, q, |i, j| 2.0 * wave(i, j, 2)),
        kernels: vec![KernelParams::default(); m],
        beta: 4.0,
        log_pi: DVector::zeros(m),
        means: DMatrix::from_fn(m, q, |i, j| wave(i, j, 3)),
        log_cov_diag: DMatrix::zeros(m, q),
    };
    let mut probs = DMatrix::from_fn(n, m, |i, j| 1.1 + wave(i, j, 4));
    for mut row in probs.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    let r = Responsibilities::from_probabilities(probs).expect("rows normalized");
    let y = DMatrix::from_fn(n, p, |i, j| 2.0 * wave(i, j, 5));
    Fixture { state, r, y }
}
