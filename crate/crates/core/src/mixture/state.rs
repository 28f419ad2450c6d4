//! Model parameters, their flat layout for the optimizer, and initialization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{
    column_variances, fcm_cluster, isomap_embed, select_inducing, FcmConfig, DEFAULT_NEIGHBORS,
};
use crate::error::{Error, Result};
use crate::kernel::{KernelParams, KernelSpec};

use super::Responsibilities;

/// Every free parameter of the mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub kernel: KernelSpec,
    /// `N × Q` latent points.
    pub x: DMatrix<f64>,
    /// `N′ × Q` inducing inputs, shared by all components.
    pub x_u: DMatrix<f64>,
    /// One parameter set per component.
    pub kernels: Vec<KernelParams>,
    /// Noise precision.
    pub beta: f64,
    /// Unnormalized log mixing weights; the weights are their softmax.
    pub log_pi: DVector<f64>,
    /// `M × Q` latent cluster centers.
    pub means: DMatrix<f64>,
    /// `M × Q` log variances of the diagonal latent cluster covariances.
    pub log_cov_diag: DMatrix<f64>,
}

impl ModelState {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn q(&self) -> usize {
        self.x.ncols()
    }

    pub fn m(&self) -> usize {
        self.kernels.len()
    }

    pub fn n_inducing(&self) -> usize {
        self.x_u.nrows()
    }

    /// Mixing weights.
    pub fn pi(&self) -> DVector<f64> {
        let max = self.log_pi.max();
        let e = self.log_pi.map(|v| (v - max).exp());
        let s = e.sum();
        e / s
    }

    /// `log π`, computed stably.
    pub fn log_pi_normalized(&self) -> DVector<f64> {
        let max = self.log_pi.max();
        let lse = max + self.log_pi.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        self.log_pi.map(|v| v - lse)
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.kernel, self.n(), self.q(), self.n_inducing(), self.m())
    }

    pub fn validate(&self) -> Result<()> {
        let (n, q, m) = (self.n(), self.q(), self.m());
        if n == 0 || q == 0 || m == 0 || self.n_inducing() == 0 {
            return Err(Error::InvalidArgument("empty model dimension".into()));
        }
        if self.x_u.ncols() != q
            || self.log_pi.len() != m
            || self.means.shape() != (m, q)
            || self.log_cov_diag.shape() != (m, q)
        {
            return Err(Error::DimensionMismatch("model state arrays disagree".into()));
        }
        let finite = self
            .x
            .iter()
            .chain(self.x_u.iter())
            .chain(self.log_pi.iter())
            .chain(self.means.iter())
            .chain(self.log_cov_diag.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("model state".into()));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {}", self.beta)));
        }
        if self.log_cov_diag.iter().any(|v| !v.exp().is_finite() || v.exp() <= 0.0) {
            return Err(Error::NonFinite("latent covariance".into()));
        }
        for k in &self.kernels {
            k.realize(self.kernel)?;
        }
        Ok(())
    }

    /// All free parameters as one vector, in [`ParamLayout`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let layout = self.layout();
        let mut out = Vec::with_capacity(layout.len());
        push_row_major(&mut out, &self.x);
        push_row_major(&mut out, &self.x_u);
        for k in &self.kernels {
            out.extend(self.kernel.params().iter().map(|&p| k.get(p)));
        }
        out.push(self.beta.ln());
        out.extend(self.log_pi.iter());
        push_row_major(&mut out, &self.means);
        push_row_major(&mut out, &self.log_cov_diag);
        debug_assert_eq!(out.len(), layout.len());
        out
    }

    /// A copy of `self` with every free parameter taken from `flat`.
    pub fn unflatten(&self, flat: &[f64]) -> Result<ModelState> {
        let layout = self.layout();
        if flat.len() != layout.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters, expected {}",
                flat.len(),
                layout.len()
            )));
        }
        let (n, q, nu, m) = (self.n(), self.q(), self.n_inducing(), self.m());
        let mut out = self.clone();
        out.x = DMatrix::from_row_slice(n, q, &flat[layout.x()]);
        out.x_u = DMatrix::from_row_slice(nu, q, &flat[layout.x_u()]);
        let names = self.kernel.params();
        for (c, k) in out.kernels.iter_mut().enumerate() {
            let block = &flat[layout.kernel(c)];
            for (&p, &v) in names.iter().zip(block) {
                k.set(p, v);
            }
        }
        out.beta = flat[layout.log_beta()].exp();
        out.log_pi = DVector::from_column_slice(&flat[layout.log_pi()]);
        out.means = DMatrix::from_row_slice(m, q, &flat[layout.means()]);
        out.log_cov_diag = DMatrix::from_row_slice(m, q, &flat[layout.log_cov()]);
        Ok(out)
    }

    /// Reorders the components: component `k` of the result is component
    /// `order[k]` of `self`.
    pub fn permute_components(&self, order: &[usize]) -> Result<ModelState> {
        check_permutation(order, self.m())?;
        let mut out = self.clone();
        for (k, &src) in order.iter().enumerate() {
            out.kernels[k] = self.kernels[src].clone();
            out.log_pi[k] = self.log_pi[src];
            out.means.row_mut(k).copy_from(&self.means.row(src));
            out.log_cov_diag.row_mut(k).copy_from(&self.log_cov_diag.row(src));
        }
        Ok(out)
    }
}

pub(crate) fn check_permutation(order: &[usize], m: usize) -> Result<()> {
    let mut seen = vec![false; m];
    if order.len() != m || order.iter().any(|&i| i >= m || std::mem::replace(&mut seen[i], true)) {
        return Err(Error::InvalidArgument("not a permutation of the components".into()));
    }
    Ok(())
}

fn push_row_major(out: &mut Vec<f64>, a: &DMatrix<f64>) {
    for i in 0..a.nrows() {
        out.extend(a.row(i).iter());
    }
}

/// Offsets of each parameter block inside the flattened vector:
/// latent points, inducing inputs, kernel parameters (component by
/// component), `log β`, `log π`, centers, log covariances. Matrices are
/// row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    kernel: KernelSpec,
    n: usize,
    q: usize,
    n_inducing: usize,
    m: usize,
}

impl ParamLayout {
    pub fn new(kernel: KernelSpec, n: usize, q: usize, n_inducing: usize, m: usize) -> Self {
        ParamLayout {
            kernel,
            n,
            q,
            n_inducing,
            m,
        }
    }

    fn per_kernel(&self) -> usize {
        self.kernel.params().len()
    }

    pub fn x(&self) -> std::ops::Range<usize> {
        0..self.n * self.q
    }

    pub fn x_u(&self) -> std::ops::Range<usize> {
        let s = self.x().end;
        s..s + self.n_inducing * self.q
    }

    pub fn kernel(&self, component: usize) -> std::ops::Range<usize> {
        let s = self.x_u().end + component * self.per_kernel();
        s..s + self.per_kernel()
    }

    pub fn kernels(&self) -> std::ops::Range<usize> {
        let s = self.x_u().end;
        s..s + self.m * self.per_kernel()
    }

    pub fn log_beta(&self) -> usize {
        self.kernels().end
    }

    pub fn log_pi(&self) -> std::ops::Range<usize> {
        let s = self.log_beta() + 1;
        s..s + self.m
    }

    pub fn means(&self) -> std::ops::Range<usize> {
        let s = self.log_pi().end;
        s..s + self.m * self.q
    }

    pub fn log_cov(&self) -> std::ops::Range<usize> {
        let s = self.means().end;
        s..s + self.m * self.q
    }

    pub fn len(&self) -> usize {
        self.log_cov().end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Settings that shape initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub n_clusters: usize,
    pub latent_dim: usize,
    pub n_inducing: usize,
    pub kernel: KernelSpec,
    pub seed: u64,
    pub isomap_neighbors: usize,
}

impl InitConfig {
    pub fn new(kernel: KernelSpec, n_clusters: usize, latent_dim: usize, n_inducing: usize, seed: u64) -> Self {
        InitConfig {
            n_clusters,
            latent_dim,
            n_inducing,
            kernel,
            seed,
            isomap_neighbors: DEFAULT_NEIGHBORS,
        }
    }
}

/// Noise precision from the output scale: `(1 / (0.5 √mean var))²`.
pub fn initial_beta(y: &DMatrix<f64>) -> Result<f64> {
    let vars = column_variances(y);
    let mean_var = vars.iter().sum::<f64>() / vars.len() as f64;
    if !(mean_var > 0.0) {
        return Err(Error::Degenerate("every column has zero variance".into()));
    }
    Ok((1.0 / (0.5 * mean_var.sqrt())).powi(2))
}

/// Builds the starting state for outputs `y` (already preprocessed) along
/// with starting responsibilities.
///
/// Latent points come from a geodesic embedding rescaled to unit overall
/// standard deviation, inducing inputs are a random subset of them, cluster
/// centers and the starting responsibilities come from fuzzy c-means on the
/// latent points, covariances start at the identity and mixing weights are
/// uniform.
pub fn init_model(y: &DMatrix<f64>, cfg: &InitConfig) -> Result<(ModelState, Responsibilities)> {
    let (n, p) = (y.nrows(), y.ncols());
    let (m, q, nu) = (cfg.n_clusters, cfg.latent_dim, cfg.n_inducing);
    if q == 0 || q > p {
        return Err(Error::InvalidArgument(format!("latent dimension {q} for {p} outputs")));
    }
    if nu == 0 || nu > n {
        return Err(Error::InvalidArgument(format!("{nu} inducing inputs for {n} points")));
    }
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!("{m} clusters for {n} points")));
    }
    let beta = initial_beta(y)?;

    let mut x = isomap_embed(y, cfg.isomap_neighbors, q)?.coords;
    let spread = (x.iter().map(|v| v * v).sum::<f64>() / (n * q) as f64).sqrt();
    if spread > 0.0 {
        x /= spread;
    }
    let x_u = select_inducing(&x, nu, cfg.seed)?;
    let fcm = fcm_cluster(&x, m, &FcmConfig::default(), cfg.seed)?;
    let r = Responsibilities::from_probabilities(fcm.memberships)?;

    let state = ModelState {
        kernel: cfg.kernel,
        x,
        x_u,
        kernels: vec![KernelParams::default(); m],
        beta,
        log_pi: DVector::zeros(m),
        means: fcm.centers,
        log_cov_diag: DMatrix::zeros(m, q),
    };
    state.validate()?;
    Ok((state, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::standardize;

    pub(crate) fn toy_state(kernel: KernelSpec) -> ModelState {
        ModelState {
            kernel,
            x: DMatrix::from_fn(5, 2, |i, j| (i as f64 * 0.3 + j as f64).sin()),
            x_u: DMatrix::from_fn(3, 2, |i, j| (i as f64 * 0.5 - j as f64).cos()),
            kernels: vec![KernelParams::default(), KernelParams { log_gamma: 0.3, ..KernelParams::default() }],
            beta: 2.5,
            log_pi: DVector::from_vec(vec![0.1, -0.4]),
            means: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.5]),
            log_cov_diag: DMatrix::from_row_slice(2, 2, &[0.0, 0.2, -0.3, 0.1]),
        }
    }

    #[test]
    fn flatten_round_trip() {
        for kernel in [KernelSpec::Linear, KernelSpec::Rbf] {
            let s = toy_state(kernel);
            let flat = s.flatten();
            assert_eq!(flat.len(), s.layout().len());
            let back = s.unflatten(&flat).unwrap();
            assert_eq!(back.x, s.x);
            assert_eq!(back.means, s.means);
            assert!((back.beta - s.beta).abs() < 1e-14);
            assert_eq!(back.flatten(), flat);
        }
    }

    #[test]
    fn layout_blocks_are_contiguous() {
        let l = ParamLayout::new(KernelSpec::Rbf, 5, 2, 3, 2);
        assert_eq!(l.x(), 0..10);
        assert_eq!(l.x_u(), 10..16);
        assert_eq!(l.kernel(1), 20..24);
        assert_eq!(l.log_beta(), 24);
        assert_eq!(l.log_pi(), 25..27);
        assert_eq!(l.len(), 35);
    }

    #[test]
    fn softmax_weights() {
        let mut s = toy_state(KernelSpec::Rbf);
        s.log_pi = DVector::from_vec(vec![3.0, 3.0]);
        assert_eq!(s.pi().as_slice(), &[0.5, 0.5]);
        assert!((s.log_pi_normalized()[0] - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn beta_rule() {
        // every column has variance 4
        let y = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 2.0, 2.0, 4.0, 4.0]);
        assert!((initial_beta(&y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn init_defaults() {
        let y = DMatrix::from_fn(30, 3, |i, j| ((i * (j + 2)) as f64 * 0.37).sin() + i as f64 * 0.05);
        let y = standardize(&y).unwrap();
        let cfg = InitConfig::new(KernelSpec::Rbf, 3, 2, 30, 11);
        let (s, r) = init_model(&y, &cfg).unwrap();
        for &p in s.pi().iter() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((s.beta - 4.0).abs() < 1e-12);
        assert_eq!(r.matrix().shape(), (30, 3));
        // all inducing inputs are latent points
        let mut a: Vec<f64> = s.x.column(0).iter().copied().collect();
        let mut b: Vec<f64> = s.x_u.column(0).iter().copied().collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn init_rejects_bad_sizes() {
        let y = DMatrix::from_fn(10, 3, |i, j| (i + j * j) as f64);
        assert!(init_model(&y, &InitConfig::new(KernelSpec::Rbf, 2, 2, 11, 0)).is_err());
        assert!(init_model(&y, &InitConfig::new(KernelSpec::Rbf, 2, 4, 5, 0)).is_err());
        assert!(init_model(&DMatrix::from_element(10, 3, 1.0), &InitConfig::new(KernelSpec::Rbf, 2, 2, 5, 0)).is_err());
    }

    #[test]
    fn permutation_moves_component_blocks() {
        let s = toy_state(KernelSpec::Rbf);
        let p = s.permute_components(&[1, 0]).unwrap();
        assert_eq!(p.kernels[0], s.kernels[1]);
        assert_eq!(p.means.row(1), s.means.row(0));
        assert!(s.permute_components(&[0, 0]).is_err());
    }
}
