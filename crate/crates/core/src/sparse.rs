//! Low-rank Gaussian algebra for the DTC sparse approximation.
//!
//! With inducing inputs `X_u` the prior covariance of each output column is
//! the Nyström operator `Q = K_fu K_uu⁻¹ K_uf = V Vᵀ`, `V = K_fu L⁻ᵀ` where
//! `L` is the Cholesky factor of the jittered `K_uu`. Every quantity below is
//! computed through the `N′ × N′` matrix `A = I + Vᵀ B V`, so the cost is
//! `O(N N′²)` and no `N × N` matrix is ever formed.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{ensure_finite, Error, Result};
use crate::kernel::{add_jitter, gram, KernelParams, KernelSpec};

/// Cached factorization of the Nyström operator for one component.
#[derive(Clone, Debug)]
pub struct DtcFactor {
    /// Lower Cholesky factor of the jittered `K_uu` (white term included).
    pub chol_uu: DMatrix<f64>,
    /// Cross-covariance `K_fu` (no white term).
    pub k_fu: DMatrix<f64>,
    /// `K_fu L⁻ᵀ`, so that `Q = V Vᵀ`.
    pub v: DMatrix<f64>,
    /// `diag(Q)`.
    pub q_diag: DVector<f64>,
    /// Jitter added to `K_uu` and its ratio to `mean(diag K_uu)`.
    pub jitter: f64,
    pub jitter_relative: f64,
}

impl DtcFactor {
    pub fn n(&self) -> usize {
        self.v.nrows()
    }

    pub fn n_inducing(&self) -> usize {
        self.v.ncols()
    }

    /// Dense `Q`. Only meant for small problems and tests.
    pub fn nystrom_dense(&self) -> DMatrix<f64> {
        &self.v * self.v.transpose()
    }
}

/// Builds the DTC factor for latent points `x` and inducing inputs `x_u`.
pub fn build_dtc(
    spec: KernelSpec,
    params: &KernelParams,
    x: &DMatrix<f64>,
    x_u: &DMatrix<f64>,
    jitter_base: f64,
) -> Result<DtcFactor> {
    if x_u.nrows() == 0 {
        return Err(Error::InvalidArgument("need at least one inducing input".into()));
    }
    let k_uu = gram(spec, params, x_u, x_u, true)?;
    let k_fu = gram(spec, params, x, x_u, false)?.values;
    let jittered = add_jitter(&k_uu, jitter_base)?;
    let l = jittered.chol_lower;
    // Vᵀ = L⁻¹ K_uf
    let vt = l
        .solve_lower_triangular(&k_fu.transpose())
        .ok_or_else(|| Error::Numerical {
            iteration: 0,
            message: "triangular solve with K_uu factor failed".into(),
        })?;
    let v = vt.transpose();
    let q_diag = DVector::from_iterator(v.nrows(), v.row_iter().map(|r| r.norm_squared()));
    Ok(DtcFactor {
        chol_uu: l,
        k_fu,
        v,
        q_diag,
        jitter: jittered.jitter,
        jitter_relative: jittered.relative,
    })
}

/// Diagonal precision `B` of the weighted likelihood, `b_nn = β⟨s_nm⟩`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    pub b_diag: DVector<f64>,
}

impl WeightMatrix {
    pub fn new(b_diag: DVector<f64>) -> Result<Self> {
        if let Some(v) = b_diag.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "weight entries must be positive and finite, got {v}"
            )));
        }
        Ok(WeightMatrix { b_diag })
    }

    /// `β` times one column of the responsibilities.
    pub fn from_responsibilities(beta: f64, r: impl Iterator<Item = f64>) -> Result<Self> {
        let v: Vec<f64> = r.map(|s| beta * s).collect();
        Self::new(DVector::from_vec(v))
    }

    pub fn len(&self) -> usize {
        self.b_diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b_diag.is_empty()
    }
}

/// Factorization of `A = I + Vᵀ B V` shared by the marginal, its gradients
/// and the posterior.
struct Woodbury {
    chol: Cholesky<f64, nalgebra::Dyn>,
    /// `Vᵀ B Y`
    vt_by: DMatrix<f64>,
}

impl Woodbury {
    fn new(factor: &DtcFactor, b: &WeightMatrix, y: &DMatrix<f64>) -> Result<Self> {
        let n = factor.n();
        if b.len() != n || y.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "factor has {} rows, weights {}, outputs {}",
                n,
                b.len(),
                y.nrows()
            )));
        }
        ensure_finite(y.as_slice(), "outputs")?;
        let m = factor.n_inducing();
        let mut bv = factor.v.clone();
        for (mut row, &bn) in bv.row_iter_mut().zip(b.b_diag.iter()) {
            row *= bn;
        }
        let mut a = factor.v.transpose() * &bv;
        for i in 0..m {
            a[(i, i)] += 1.0;
        }
        let chol = Cholesky::new(a).ok_or_else(|| Error::Numerical {
            iteration: 0,
            message: "inner N'xN' Woodbury system is not positive definite".into(),
        })?;
        let vt_by = bv.transpose() * y;
        Ok(Woodbury { chol, vt_by })
    }

    fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

fn check_weights(b: &WeightMatrix) -> Result<()> {
    if b.b_diag.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidArgument("weight entries must be positive".into()));
    }
    Ok(())
}

/// `log N(y | 0, Q + B⁻¹)` for a single output column.
pub fn weighted_log_marginal(factor: &DtcFactor, b: &WeightMatrix, y: &DVector<f64>) -> Result<f64> {
    let y = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    weighted_log_marginal_multi(factor, b, &y)
}

/// `Σ_i log N(y_{:,i} | 0, Q + B⁻¹)` over all columns of `y`.
pub fn weighted_log_marginal_multi(factor: &DtcFactor, b: &WeightMatrix, y: &DMatrix<f64>) -> Result<f64> {
    check_weights(b)?;
    let wb = Woodbury::new(factor, b, y)?;
    let (n, p) = (y.nrows() as f64, y.ncols() as f64);
    let log_det_c = wb.log_det() - b.b_diag.iter().map(|v| v.ln()).sum::<f64>();
    let s = wb
        .chol
        .l_dirty()
        .solve_lower_triangular(&wb.vt_by)
        .expect("cholesky factor is invertible");
    let mut yby = 0.0;
    for col in y.column_iter() {
        for (yn, bn) in col.iter().zip(b.b_diag.iter()) {
            yby += bn * yn * yn;
        }
    }
    let quad = yby - s.norm_squared();
    Ok(-0.5 * n * p * (2.0 * std::f64::consts::PI).ln() - 0.5 * p * log_det_c - 0.5 * quad)
}

/// Value and gradients of [`weighted_log_marginal_multi`] with respect to
/// the entries of `K_fu`, the entries of the (jittered) `K_uu`, and `b`.
#[derive(Clone, Debug)]
pub struct MarginalGrads {
    pub value: f64,
    pub d_kfu: DMatrix<f64>,
    pub d_kuu: DMatrix<f64>,
    pub d_b: DVector<f64>,
}

pub fn weighted_log_marginal_grads(factor: &DtcFactor, b: &WeightMatrix, y: &DMatrix<f64>) -> Result<MarginalGrads> {
    check_weights(b)?;
    let wb = Woodbury::new(factor, b, y)?;
    let (n, m, p) = (factor.n(), factor.n_inducing(), y.ncols());
    let pf = p as f64;
    let bd = &b.b_diag;

    let a_inv = wb.chol.inverse();
    let l_inv = factor
        .chol_uu
        .solve_lower_triangular(&DMatrix::identity(m, m))
        .expect("K_uu factor is invertible");

    // value
    let log_det_c = wb.log_det() - bd.iter().map(|v| v.ln()).sum::<f64>();
    let mu = &a_inv * &wb.vt_by; // A⁻¹ Vᵀ B Y
    let mut yby = 0.0;
    for col in y.column_iter() {
        for (yn, bn) in col.iter().zip(bd.iter()) {
            yby += bn * yn * yn;
        }
    }
    let quad = yby - wb.vt_by.component_mul(&mu).sum();
    let value = -0.5 * (n * p) as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * pf * log_det_c - 0.5 * quad;

    // α = B(Y − V A⁻¹ Vᵀ B Y)
    let mut alpha = y - &factor.v * &mu;
    for (mut row, &bn) in alpha.row_iter_mut().zip(bd.iter()) {
        row *= bn;
    }
    // c = K_uu⁻¹ K_uf α = L⁻ᵀ Vᵀ α
    let c = l_inv.transpose() * (factor.v.transpose() * &alpha);

    let e = &factor.v * &a_inv; // V A⁻¹
    let mut be_linv = &e * &l_inv;
    for (mut row, &bn) in be_linv.row_iter_mut().zip(bd.iter()) {
        row *= bn;
    }
    let d_kfu = &alpha * c.transpose() - be_linv * pf;

    let mut inner = DMatrix::<f64>::identity(m, m) - &a_inv;
    inner = l_inv.transpose() * inner * &l_inv;
    let d_kuu = (&c * c.transpose() - inner * pf) * -0.5;

    let mut d_b = DVector::zeros(n);
    for i in 0..n {
        let proj: f64 = e.row(i).dot(&factor.v.row(i));
        let cinv_diag = bd[i] - bd[i] * bd[i] * proj;
        let a2: f64 = alpha.row(i).norm_squared();
        let d_d = 0.5 * (a2 - pf * cinv_diag);
        d_b[i] = -d_d / (bd[i] * bd[i]);
    }

    Ok(MarginalGrads {
        value,
        d_kfu,
        d_kuu,
        d_b,
    })
}

/// Gaussian `q(f)` of one component. The covariance `Σ` is shared by all
/// output columns; only its diagonal is materialized in data space. The
/// whitened representation `f = V w`, `w ~ N(whitened_mean, whitened_cov)`
/// carries the full covariance structure.
#[derive(Clone, Debug)]
pub struct ComponentPosterior {
    pub f_mean: DMatrix<f64>,
    pub sigma_diag: DVector<f64>,
    pub whitened_mean: DMatrix<f64>,
    pub whitened_cov: DMatrix<f64>,
}

impl ComponentPosterior {
    /// Same covariance, different whitened mean; `f_mean` is recomputed.
    pub fn with_whitened_mean(&self, factor: &DtcFactor, mean: DMatrix<f64>) -> Result<Self> {
        if mean.shape() != self.whitened_mean.shape() {
            return Err(Error::DimensionMismatch("whitened mean shape".into()));
        }
        Ok(ComponentPosterior {
            f_mean: &factor.v * &mean,
            sigma_diag: self.sigma_diag.clone(),
            whitened_mean: mean,
            whitened_cov: self.whitened_cov.clone(),
        })
    }
}

/// Exact `q(f)` given the factor and weights: `Σ = Q − Q(Q + B⁻¹)⁻¹Q`,
/// `f̄ = Σ B y`.
pub fn posterior_qf(factor: &DtcFactor, b: &WeightMatrix, y: &DMatrix<f64>) -> Result<ComponentPosterior> {
    check_weights(b)?;
    let wb = Woodbury::new(factor, b, y)?;
    let a_inv = wb.chol.inverse();
    let whitened_mean = &a_inv * &wb.vt_by;
    let f_mean = &factor.v * &whitened_mean;
    let e = &factor.v * &a_inv;
    let sigma_diag = DVector::from_iterator(
        factor.n(),
        (0..factor.n()).map(|i| e.row(i).dot(&factor.v.row(i)).max(0.0)),
    );
    Ok(ComponentPosterior {
        f_mean,
        sigma_diag,
        whitened_mean,
        whitened_cov: a_inv,
    })
}

/// `⟨log N(y_ni | f_ni, β⁻¹)⟩` under `q(f)` for every entry.
pub fn expected_pointwise_loglik(post: &ComponentPosterior, y: &DMatrix<f64>, beta: f64) -> Result<DMatrix<f64>> {
    if post.f_mean.shape() != y.shape() || post.sigma_diag.len() != y.nrows() {
        return Err(Error::DimensionMismatch("posterior and outputs disagree".into()));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    let c = 0.5 * (beta / (2.0 * std::f64::consts::PI)).ln();
    Ok(DMatrix::from_fn(y.nrows(), y.ncols(), |n, i| {
        let d = y[(n, i)] - post.f_mean[(n, i)];
        c - 0.5 * beta * (d * d + post.sigma_diag[n])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_factor(q: f64) -> DtcFactor {
        DtcFactor {
            chol_uu: DMatrix::from_element(1, 1, 1.0),
            k_fu: DMatrix::from_element(1, 1, q.sqrt()),
            v: DMatrix::from_element(1, 1, q.sqrt()),
            q_diag: DVector::from_element(1, q),
            jitter: 0.0,
            jitter_relative: 0.0,
        }
    }

    #[test]
    fn scalar_marginal() {
        let f = scalar_factor(1.0);
        let b = WeightMatrix::new(DVector::from_element(1, 1.0)).unwrap();
        let v = weighted_log_marginal(&f, &b, &DVector::from_element(1, 0.0)).unwrap();
        assert_relative_eq!(v, -0.5 * (2.0 * std::f64::consts::PI * 2.0).ln(), epsilon = 1e-14);
        assert_relative_eq!(v, -1.26551, epsilon = 1e-5);
    }

    #[test]
    fn scalar_posterior() {
        let f = scalar_factor(1.0);
        let b = WeightMatrix::new(DVector::from_element(1, 1.0)).unwrap();
        let post = posterior_qf(&f, &b, &DMatrix::from_element(1, 1, 3.0)).unwrap();
        assert_relative_eq!(post.sigma_diag[0], 0.5, epsilon = 1e-14);
        assert_relative_eq!(post.f_mean[(0, 0)], 1.5, epsilon = 1e-14);
    }

    #[test]
    fn tiny_weight_recovers_prior() {
        let f = scalar_factor(2.0);
        let b = WeightMatrix::new(DVector::from_element(1, 1e-12)).unwrap();
        let post = posterior_qf(&f, &b, &DMatrix::from_element(1, 1, 3.0)).unwrap();
        assert!(post.f_mean[(0, 0)].abs() < 1e-10);
        assert_relative_eq!(post.sigma_diag[0], 2.0, epsilon = 1e-10);
    }

    #[test]
    fn zero_rank_prior_gives_independent_gaussians() {
        let mut f = scalar_factor(1.0);
        f.v = DMatrix::zeros(3, 1);
        f.k_fu = DMatrix::zeros(3, 1);
        f.q_diag = DVector::zeros(3);
        let bd = DVector::from_vec(vec![0.5, 2.0, 4.0]);
        let b = WeightMatrix::new(bd.clone()).unwrap();
        let y = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let v = weighted_log_marginal(&f, &b, &y).unwrap();
        let expect: f64 = (0..3)
            .map(|n| {
                let var = 1.0 / bd[n];
                -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * y[n] * y[n] / var
            })
            .sum();
        assert_relative_eq!(v, expect, epsilon = 1e-12);
    }

    #[test]
    fn rejects_non_positive_weights() {
        assert!(WeightMatrix::new(DVector::from_vec(vec![1.0, 0.0])).is_err());
        let f = scalar_factor(1.0);
        let b = WeightMatrix {
            b_diag: DVector::from_element(1, -1.0),
        };
        assert!(weighted_log_marginal(&f, &b, &DVector::from_element(1, 0.0)).is_err());
    }

    #[test]
    fn expected_loglik_examples() {
        let post = ComponentPosterior {
            f_mean: DMatrix::from_element(1, 1, 0.7),
            sigma_diag: DVector::from_element(1, 0.0),
            whitened_mean: DMatrix::zeros(1, 1),
            whitened_cov: DMatrix::zeros(1, 1),
        };
        let y = DMatrix::from_element(1, 1, 0.7);
        let v = expected_pointwise_loglik(&post, &y, 2.0 * std::f64::consts::PI).unwrap();
        assert_relative_eq!(v[(0, 0)], 0.0, epsilon = 1e-15);

        let post = ComponentPosterior {
            f_mean: DMatrix::from_element(1, 1, 0.0),
            sigma_diag: DVector::from_element(1, 1.0),
            ..post
        };
        let y = DMatrix::from_element(1, 1, 1.0);
        let v = expected_pointwise_loglik(&post, &y, 1.0).unwrap();
        assert_relative_eq!(v[(0, 0)], -1.91894, epsilon = 1e-5);
        assert!(expected_pointwise_loglik(&post, &y, 0.0).is_err());
    }
}
