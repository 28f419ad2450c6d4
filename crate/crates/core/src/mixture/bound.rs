//! E-step updates, both variational bounds and the bound gradient.
//!
//! With responsibilities `r` fixed, the bound that has `q(f)` integrated out
//! analytically is
//!
//! ```text
//! L = Σ_m Σ_i log N(y_i | 0, Q_m + B_m⁻¹) + Σ_{n,m} c_nm,     B_m = β diag(r_:m)
//! c_nm = r log N(x_n | x̄_m, C_m) + r log π_m − r log r
//!        + P/2 [(r − 1) log(β/2π) − log r]
//! ```
//!
//! The last bracket is what remains after rewriting the `r`-tempered
//! likelihood `N(y | f, β⁻¹)^r` as a Gaussian with precision `rβ`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use super::{ModelState, Responsibilities, TracePoint};
use crate::error::{Error, Result};
use crate::kernel::{contract_input_grads, contract_param_grads};
use crate::sparse::{
    build_dtc, expected_pointwise_loglik, posterior_qf, weighted_log_marginal_grads,
    weighted_log_marginal_multi, ComponentPosterior, DtcFactor, WeightMatrix,
};

/// Relative jitter added to every `K_uu` before factorization.
pub const JITTER_BASE: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Values of the bound and its parts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoundReport {
    pub kl_corrected: f64,
    /// Bound with an explicit `q(f)`, only filled when requested.
    pub standard: Option<f64>,
    /// `Σ_m Σ_i log N(y_i | 0, Q_m + B_m⁻¹)`.
    pub gaussian_term: f64,
    /// `Σ c_nm`.
    pub c_term: f64,
    pub trace: Vec<TracePoint>,
}

fn check_shapes(state: &ModelState, r: &Responsibilities, y: &DMatrix<f64>) -> Result<()> {
    if r.n() != state.n() || r.m() != state.m() || y.nrows() != state.n() {
        return Err(Error::DimensionMismatch(format!(
            "state is {}×{} components, responsibilities {}×{}, outputs have {} rows",
            state.n(),
            state.m(),
            r.n(),
            r.m(),
            y.nrows()
        )));
    }
    Ok(())
}

fn weights(state: &ModelState, r: &Responsibilities, m: usize) -> Result<WeightMatrix> {
    WeightMatrix::from_responsibilities(state.beta, r.matrix().column(m).iter().copied())
}

fn factor(state: &ModelState, m: usize) -> Result<DtcFactor> {
    build_dtc(state.kernel, &state.kernels[m], &state.x, &state.x_u, JITTER_BASE)
}

/// `log N(x_n | x̄_m, C_m)` for every point and component.
fn latent_log_density(state: &ModelState) -> DMatrix<f64> {
    let q = state.q();
    let norm: Vec<f64> = (0..state.m())
        .map(|m| -0.5 * (q as f64 * LN_2PI + state.log_cov_diag.row(m).sum()))
        .collect();
    DMatrix::from_fn(state.n(), state.m(), |n, m| {
        let mut quad = 0.0;
        for d in 0..q {
            let diff = state.x[(n, d)] - state.means[(m, d)];
            quad += diff * diff * (-state.log_cov_diag[(m, d)]).exp();
        }
        norm[m] - 0.5 * quad
    })
}

/// Exact `q(f)` of every component given the current responsibilities.
pub fn estep_qf(state: &ModelState, r: &Responsibilities, y: &DMatrix<f64>) -> Result<Vec<ComponentPosterior>> {
    check_shapes(state, r, y)?;
    (0..state.m())
        .into_par_iter()
        .map(|m| posterior_qf(&factor(state, m)?, &weights(state, r, m)?, y))
        .collect()
}

/// Responsibilities maximizing the bound for the given `q(f)`:
/// `log p_nm = log π_m + log N(x_n | x̄_m, C_m) + Σ_i ⟨log N(y_ni | f_ni, β⁻¹)⟩`.
pub fn estep_qs(state: &ModelState, posteriors: &[ComponentPosterior], y: &DMatrix<f64>) -> Result<Responsibilities> {
    if posteriors.len() != state.m() || y.nrows() != state.n() {
        return Err(Error::DimensionMismatch("posteriors do not match the model".into()));
    }
    let expected: Vec<DVector<f64>> = posteriors
        .par_iter()
        .map(|post| {
            let ell = expected_pointwise_loglik(post, y, state.beta)?;
            Ok(DVector::from_iterator(ell.nrows(), ell.row_iter().map(|r| r.sum())))
        })
        .collect::<Result<_>>()?;
    let log_pi = state.log_pi_normalized();
    let mut log_p = latent_log_density(state);
    for m in 0..state.m() {
        for n in 0..state.n() {
            log_p[(n, m)] += log_pi[m] + expected[m][n];
        }
    }
    Responsibilities::from_log_weights(&log_p)
}

/// The `N × M` matrix of `c_nm` for outputs of dimension `p`.
pub fn c_terms(state: &ModelState, r: &Responsibilities, p: usize) -> Result<DMatrix<f64>> {
    if r.n() != state.n() || r.m() != state.m() {
        return Err(Error::DimensionMismatch("responsibilities do not match the model".into()));
    }
    let log_pi = state.log_pi_normalized();
    let lat = latent_log_density(state);
    let log_b = (state.beta / std::f64::consts::TAU).ln();
    let half_p = 0.5 * p as f64;
    Ok(DMatrix::from_fn(state.n(), state.m(), |n, m| {
        let s = r.matrix()[(n, m)];
        let ln_s = s.ln();
        s * lat[(n, m)] + s * log_pi[m] - s * ln_s + half_p * ((s - 1.0) * log_b - ln_s)
    }))
}

/// The KL-corrected bound at fixed responsibilities.
pub fn kl_bound(state: &ModelState, r: &Responsibilities, y: &DMatrix<f64>) -> Result<BoundReport> {
    check_shapes(state, r, y)?;
    let parts: Vec<f64> = (0..state.m())
        .into_par_iter()
        .map(|m| weighted_log_marginal_multi(&factor(state, m)?, &weights(state, r, m)?, y))
        .collect::<Result<_>>()?;
    let gaussian_term: f64 = parts.iter().sum();
    let c_term = c_terms(state, r, y.ncols())?.sum();
    Ok(BoundReport {
        kl_corrected: gaussian_term + c_term,
        standard: None,
        gaussian_term,
        c_term,
        trace: Vec::new(),
    })
}

/// Value of [`kl_bound`] alone.
pub fn kl_bound_value(state: &ModelState, r: &Responsibilities, y: &DMatrix<f64>) -> Result<f64> {
    kl_bound(state, r, y).map(|b| b.kl_corrected)
}

/// The bound with an explicit `q(f)` per component: expected log-likelihood,
/// expected log prior of `f`, entropy of `q(f)`, expected latent log density,
/// expected log mixing weight and entropy of `q(S)`.
///
/// The prior and entropy of `f` are evaluated in the whitened coordinates
/// `f = V w`, `w ~ N(0, I)` a priori, since the DTC prior on `f` is
/// degenerate whenever `N′ < N`.
pub fn standard_bound(
    state: &ModelState,
    r: &Responsibilities,
    posteriors: &[ComponentPosterior],
    y: &DMatrix<f64>,
) -> Result<f64> {
    check_shapes(state, r, y)?;
    if posteriors.len() != state.m() {
        return Err(Error::DimensionMismatch("one posterior per component expected".into()));
    }
    let p = y.ncols() as f64;
    let nu = state.n_inducing() as f64;
    let mut total = 0.0;
    for (m, post) in posteriors.iter().enumerate() {
        let ell = expected_pointwise_loglik(post, y, state.beta)?;
        for n in 0..state.n() {
            total += r.matrix()[(n, m)] * ell.row(n).sum();
        }
        let tr_s = post.whitened_cov.trace();
        for col in post.whitened_mean.column_iter() {
            total += -0.5 * nu * LN_2PI - 0.5 * (tr_s + col.norm_squared());
        }
        let chol = Cholesky::new(post.whitened_cov.clone()).ok_or_else(|| Error::Numerical {
            iteration: 0,
            message: format!("posterior covariance of component {m} is not positive definite"),
        })?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        total += p * 0.5 * (nu * (1.0 + LN_2PI) + log_det);
    }
    let log_pi = state.log_pi_normalized();
    let lat = latent_log_density(state);
    for n in 0..state.n() {
        for m in 0..state.m() {
            let s = r.matrix()[(n, m)];
            total += s * (lat[(n, m)] + log_pi[m] - s.ln());
        }
    }
    Ok(total)
}

struct ComponentGrad {
    value: f64,
    d_x: DMatrix<f64>,
    d_xu: DMatrix<f64>,
    d_kernel: Vec<f64>,
    d_log_beta: f64,
}

fn component_grad(state: &ModelState, r: &Responsibilities, y: &DMatrix<f64>, m: usize) -> Result<ComponentGrad> {
    let spec = state.kernel;
    let params = &state.kernels[m];
    let f = factor(state, m)?;
    let b = weights(state, r, m)?;
    let g = weighted_log_marginal_grads(&f, &b, y)?;

    // the jitter is proportional to mean(diag K_uu), so it feeds back into
    // every diagonal entry
    let nu = state.n_inducing();
    let mut w_uu = g.d_kuu;
    if f.jitter_relative > 0.0 {
        let extra = w_uu.trace() * f.jitter_relative / nu as f64;
        for i in 0..nu {
            w_uu[(i, i)] += extra;
        }
    }

    let mut d_kernel = contract_param_grads(spec, params, &state.x, &state.x_u, false, &g.d_kfu)?;
    let from_uu = contract_param_grads(spec, params, &state.x_u, &state.x_u, true, &w_uu)?;
    for (a, b) in d_kernel.iter_mut().zip(from_uu) {
        *a += b;
    }
    let (d_x, d_xu_cross) = contract_input_grads(spec, params, &state.x, &state.x_u, &g.d_kfu)?;
    let (d_rows, d_cols) = contract_input_grads(spec, params, &state.x_u, &state.x_u, &w_uu)?;
    let d_xu = d_xu_cross + d_rows + d_cols;
    let d_log_beta = g.d_b.dot(&b.b_diag);
    Ok(ComponentGrad {
        value: g.value,
        d_x,
        d_xu,
        d_kernel,
        d_log_beta,
    })
}

/// Bound value and its gradient with respect to [`ModelState::flatten`],
/// holding the responsibilities fixed.
pub fn kl_bound_and_grads(state: &ModelState, r: &Responsibilities, y: &DMatrix<f64>) -> Result<(BoundReport, Vec<f64>)> {
    check_shapes(state, r, y)?;
    let layout = state.layout();
    let (n, q, mm) = (state.n(), state.q(), state.m());
    let p = y.ncols() as f64;

    let comps: Vec<ComponentGrad> = (0..mm)
        .into_par_iter()
        .map(|m| component_grad(state, r, y, m))
        .collect::<Result<_>>()?;

    let mut grad = vec![0.0; layout.len()];
    let mut d_x = DMatrix::zeros(n, q);
    let mut d_xu = DMatrix::zeros(state.n_inducing(), q);
    let mut d_log_beta = 0.0;
    let mut gaussian_term = 0.0;
    for (m, c) in comps.iter().enumerate() {
        gaussian_term += c.value;
        d_x += &c.d_x;
        d_xu += &c.d_xu;
        d_log_beta += c.d_log_beta;
        grad[layout.kernel(m)].copy_from_slice(&c.d_kernel);
    }

    // c-terms
    let rm = r.matrix();
    let pi = state.pi();
    let c_term = c_terms(state, r, y.ncols())?.sum();
    d_log_beta += 0.5 * p * rm.iter().map(|s| s - 1.0).sum::<f64>();
    let lp = layout.log_pi();
    for k in 0..mm {
        let col_sum: f64 = rm.column(k).sum();
        let row_sums: f64 = rm.row_iter().map(|row| row.sum()).sum::<f64>();
        grad[lp.start + k] = col_sum - row_sums * pi[k];
    }
    let mut d_means = DMatrix::zeros(mm, q);
    let mut d_log_cov = DMatrix::zeros(mm, q);
    for m in 0..mm {
        for d in 0..q {
            let var = state.log_cov_diag[(m, d)].exp();
            for i in 0..n {
                let s = rm[(i, m)];
                let diff = state.x[(i, d)] - state.means[(m, d)];
                d_means[(m, d)] += s * diff / var;
                d_log_cov[(m, d)] += s * (-0.5 + 0.5 * diff * diff / var);
                d_x[(i, d)] -= s * diff / var;
            }
        }
    }

    write_row_major(&mut grad[layout.x()], &d_x);
    write_row_major(&mut grad[layout.x_u()], &d_xu);
    grad[layout.log_beta()] = d_log_beta;
    write_row_major(&mut grad[layout.means()], &d_means);
    write_row_major(&mut grad[layout.log_cov()], &d_log_cov);

    let report = BoundReport {
        kl_corrected: gaussian_term + c_term,
        standard: None,
        gaussian_term,
        c_term,
        trace: Vec::new(),
    };
    Ok((report, grad))
}

/// Gradient of the bound alone.
pub fn kl_bound_grads(state: &ModelState, r: &Responsibilities, y: &DMatrix<f64>) -> Result<Vec<f64>> {
    kl_bound_and_grads(state, r, y).map(|(_, g)| g)
}

fn write_row_major(dst: &mut [f64], a: &DMatrix<f64>) {
    let cols = a.ncols();
    for i in 0..a.nrows() {
        for j in 0..cols {
            dst[i * cols + j] = a[(i, j)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{KernelParams, KernelSpec};
    use approx::assert_relative_eq;

    fn small_state(kernel: KernelSpec, m: usize) -> ModelState {
        ModelState {
            kernel,
            x: DMatrix::from_fn(6, 2, |i, j| ((i * 3 + j) as f64 * 0.41).sin()),
            x_u: DMatrix::from_fn(3, 2, |i, j| ((i * 2 + j) as f64 * 0.77).cos()),
            kernels: vec![KernelParams::default(); m],
            beta: 3.0,
            log_pi: DVector::zeros(m),
            means: DMatrix::from_fn(m, 2, |i, j| (i as f64 - j as f64) * 0.3),
            log_cov_diag: DMatrix::zeros(m, 2),
        }
    }

    fn outputs() -> DMatrix<f64> {
        DMatrix::from_fn(6, 3, |i, j| ((i + 2 * j) as f64 * 0.9).cos())
    }

    #[test]
    fn single_component_gets_all_mass() {
        let s = small_state(KernelSpec::Rbf, 1);
        let y = outputs();
        let r = Responsibilities::uniform(6, 1);
        let post = estep_qf(&s, &r, &y).unwrap();
        let r2 = estep_qs(&s, &post, &y).unwrap();
        assert!(r2.matrix().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn identical_components_split_evenly() {
        let mut s = small_state(KernelSpec::Rbf, 2);
        s.means = DMatrix::zeros(2, 2);
        let y = outputs();
        let r = Responsibilities::uniform(6, 2);
        let post = estep_qf(&s, &r, &y).unwrap();
        assert_eq!(post[0].f_mean, post[1].f_mean);
        let r2 = estep_qs(&s, &post, &y).unwrap();
        assert!(r2.matrix().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn c_term_examples() {
        // r = 1: the tempering bracket vanishes
        let mut s = small_state(KernelSpec::Rbf, 1);
        s.x = DMatrix::zeros(6, 2);
        s.means = DMatrix::zeros(1, 2);
        let r = Responsibilities::uniform(6, 1);
        let c = c_terms(&s, &r, 4).unwrap();
        assert_relative_eq!(c[(0, 0)], -LN_2PI, epsilon = 1e-14);
    }

    #[test]
    fn floor_cancellation_keeps_bound_finite() {
        // scalar check: (P/2)(-log r) from the c-term against ½ log det of
        // the Gaussian term at b = βr, for r at the floor
        let eps = crate::mixture::RESPONSIBILITY_FLOOR;
        let (beta, q, p) = (2.0f64, 0.7f64, 1.0f64);
        let var = q + 1.0 / (beta * eps);
        let gauss = -0.5 * (LN_2PI + var.ln());
        let c = 0.5 * p * ((eps - 1.0) * (beta / std::f64::consts::TAU).ln() - eps.ln());
        let total = gauss + c;
        // -½ log(q + 1/(βr)) - ½ log r → -½ log(1/β) as r → 0
        let limit = -0.5 * LN_2PI + 0.5 * beta.ln() - 0.5 * (beta / std::f64::consts::TAU).ln();
        assert!(total.is_finite());
        assert!((total - limit).abs() < 1e-6);
    }

    #[test]
    fn bound_parts_add_up() {
        let s = small_state(KernelSpec::Linear, 2);
        let y = outputs();
        let r = Responsibilities::uniform(6, 2);
        let b = kl_bound(&s, &r, &y).unwrap();
        assert_eq!(b.kl_corrected, b.gaussian_term + b.c_term);
        let (b2, _) = kl_bound_and_grads(&s, &r, &y).unwrap();
        assert_relative_eq!(b.kl_corrected, b2.kl_corrected, max_relative = 1e-12);
    }

    #[test]
    fn bounds_agree_at_exact_posterior() {
        for kernel in [KernelSpec::Linear, KernelSpec::Rbf] {
            let s = small_state(kernel, 2);
            let y = outputs();
            let mut p = DMatrix::from_element(6, 2, 0.5);
            p[(0, 0)] = 0.9;
            p[(0, 1)] = 0.1;
            let r = Responsibilities::from_probabilities(p).unwrap();
            let post = estep_qf(&s, &r, &y).unwrap();
            let kl = kl_bound_value(&s, &r, &y).unwrap();
            let sv = standard_bound(&s, &r, &post, &y).unwrap();
            assert_relative_eq!(kl, sv, epsilon = 1e-8, max_relative = 1e-10);
        }
    }

    #[test]
    fn log_pi_gradient_sums_to_zero() {
        let mut s = small_state(KernelSpec::Rbf, 3);
        s.log_pi = DVector::from_vec(vec![0.3, -0.2, 0.5]);
        let y = outputs();
        let r = Responsibilities::uniform(6, 3);
        let g = kl_bound_grads(&s, &r, &y).unwrap();
        let sum: f64 = g[s.layout().log_pi()].iter().sum();
        assert!(sum.abs() < 1e-12);
    }
}
