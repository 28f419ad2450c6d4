//! Covariance functions and their derivatives.
//!
//! Two families are supported, both with an additive bias and a white-noise
//! term:
//!
//! * linear: `θ_lin · zᵀz′ + θ_bias + [same]·θ_white`
//! * RBF: `θ_rbf · exp(−γ/2 · ‖z − z′‖²) + θ_bias + [same]·θ_white`
//!
//! The white term only lands on the diagonal of a Gram matrix built from a
//! point set against itself. Hyperparameters are stored as logarithms, so
//! every derivative reported here is with respect to `log θ`.

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Covariance family shared by every component of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelSpec {
    Linear,
    Rbf,
}

impl KernelSpec {
    /// Hyperparameters that are free for this family, in flattening order.
    pub fn params(self) -> &'static [KernelParam] {
        match self {
            KernelSpec::Linear => &[KernelParam::Lin, KernelParam::Bias, KernelParam::White],
            KernelSpec::Rbf => &[
                KernelParam::Rbf,
                KernelParam::Gamma,
                KernelParam::Bias,
                KernelParam::White,
            ],
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            KernelSpec::Linear => "linear",
            KernelSpec::Rbf => "rbf",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag.to_ascii_lowercase().as_str() {
            "linear" | "lin" => Ok(KernelSpec::Linear),
            "rbf" => Ok(KernelSpec::Rbf),
            other => Err(Error::InvalidArgument(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// Names a single log-domain hyperparameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KernelParam {
    Lin,
    Rbf,
    Gamma,
    Bias,
    White,
}

/// Log-domain kernel hyperparameters. Fields that do not belong to the
/// active family are carried along but never read.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub log_lin: f64,
    pub log_rbf: f64,
    pub log_gamma: f64,
    pub log_bias: f64,
    pub log_white: f64,
}

impl Default for KernelParams {
    /// `θ_lin = θ_rbf = γ = 1`, `θ_bias = θ_white = e⁻²`.
    fn default() -> Self {
        KernelParams {
            log_lin: 0.0,
            log_rbf: 0.0,
            log_gamma: 0.0,
            log_bias: -2.0,
            log_white: -2.0,
        }
    }
}

impl KernelParams {
    pub fn get(&self, p: KernelParam) -> f64 {
        match p {
            KernelParam::Lin => self.log_lin,
            KernelParam::Rbf => self.log_rbf,
            KernelParam::Gamma => self.log_gamma,
            KernelParam::Bias => self.log_bias,
            KernelParam::White => self.log_white,
        }
    }

    pub fn set(&mut self, p: KernelParam, value: f64) {
        match p {
            KernelParam::Lin => self.log_lin = value,
            KernelParam::Rbf => self.log_rbf = value,
            KernelParam::Gamma => self.log_gamma = value,
            KernelParam::Bias => self.log_bias = value,
            KernelParam::White => self.log_white = value,
        }
    }

    /// Realized (exponentiated) values; fails if any active one is not finite
    /// or underflows to zero. The white-noise variance may be exactly zero
    /// since it only ever adds to a diagonal.
    pub fn realize(&self, spec: KernelSpec) -> Result<Realized> {
        let r = Realized {
            lin: self.log_lin.exp(),
            rbf: self.log_rbf.exp(),
            gamma: self.log_gamma.exp(),
            bias: self.log_bias.exp(),
            white: self.log_white.exp(),
        };
        for &p in spec.params() {
            let v = r.get(p);
            let floor_ok = if p == KernelParam::White { v >= 0.0 } else { v > 0.0 };
            if !v.is_finite() || !floor_ok {
                return Err(Error::NonFinite(format!("kernel parameter {p:?} = {v}")));
            }
        }
        Ok(r)
    }
}

/// Exponentiated hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct Realized {
    pub lin: f64,
    pub rbf: f64,
    pub gamma: f64,
    pub bias: f64,
    pub white: f64,
}

impl Realized {
    fn get(&self, p: KernelParam) -> f64 {
        match p {
            KernelParam::Lin => self.lin,
            KernelParam::Rbf => self.rbf,
            KernelParam::Gamma => self.gamma,
            KernelParam::Bias => self.bias,
            KernelParam::White => self.white,
        }
    }
}

/// A dense kernel matrix together with whether rows and columns index the
/// same point set (and therefore carry the white term on the diagonal).
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    pub values: DMatrix<f64>,
    pub rows_same_as_cols: bool,
}

impl GramMatrix {
    pub fn max_asymmetry(&self) -> f64 {
        let k = &self.values;
        if k.nrows() != k.ncols() {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for i in 0..k.nrows() {
            for j in 0..i {
                worst = worst.max((k[(i, j)] - k[(j, i)]).abs());
            }
        }
        worst
    }
}

#[inline]
fn sq_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    let mut s = 0.0;
    for q in 0..a.ncols() {
        let d = a[(i, q)] - b[(j, q)];
        s += d * d;
    }
    s
}

#[inline]
fn dot(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    let mut s = 0.0;
    for q in 0..a.ncols() {
        s += a[(i, q)] * b[(j, q)];
    }
    s
}

/// Kernel value excluding bias and white terms.
#[inline]
fn base_value(spec: KernelSpec, r: &Realized, a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    match spec {
        KernelSpec::Linear => r.lin * dot(a, i, b, j),
        KernelSpec::Rbf => r.rbf * (-0.5 * r.gamma * sq_dist(a, i, b, j)).exp(),
    }
}

fn check_points(a: &DMatrix<f64>, b: &DMatrix<f64>, same_set: bool) -> Result<()> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "point sets have dimensions {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    if a.ncols() == 0 {
        return Err(Error::DimensionMismatch("latent dimension must be at least 1".into()));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel inputs".into()));
    }
    if same_set && a != b {
        return Err(Error::InvalidArgument(
            "same_set requested but the two point sets differ".into(),
        ));
    }
    Ok(())
}

/// Single kernel evaluation between two points.
pub fn kernel_eval(
    spec: KernelSpec,
    params: &KernelParams,
    z: &[f64],
    z_prime: &[f64],
    same_index: bool,
) -> Result<f64> {
    if z.len() != z_prime.len() || z.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "kernel arguments have lengths {} and {}",
            z.len(),
            z_prime.len()
        )));
    }
    if z.iter().chain(z_prime).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel arguments".into()));
    }
    let a = DMatrix::from_row_slice(1, z.len(), z);
    let b = DMatrix::from_row_slice(1, z_prime.len(), z_prime);
    let r = params.realize(spec)?;
    let white = if same_index { r.white } else { 0.0 };
    Ok(base_value(spec, &r, &a, 0, &b, 0) + r.bias + white)
}

/// Gram matrix between the rows of `a` and the rows of `b`.
pub fn gram(
    spec: KernelSpec,
    params: &KernelParams,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    same_set: bool,
) -> Result<GramMatrix> {
    check_points(a, b, same_set)?;
    let r = params.realize(spec)?;
    let (n, m) = (a.nrows(), b.nrows());
    let mut k = DMatrix::zeros(n, m);
    if same_set {
        for i in 0..n {
            for j in 0..=i {
                let v = base_value(spec, &r, a, i, b, j) + r.bias;
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
            k[(i, i)] += r.white;
        }
    } else {
        for j in 0..m {
            for i in 0..n {
                k[(i, j)] = base_value(spec, &r, a, i, b, j) + r.bias;
            }
        }
    }
    Ok(GramMatrix {
        values: k,
        rows_same_as_cols: same_set,
    })
}

/// `∂K/∂log θ` for every free hyperparameter of `spec`, in `spec.params()` order.
pub fn kernel_grad_params(
    spec: KernelSpec,
    params: &KernelParams,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    same_set: bool,
) -> Result<Vec<(KernelParam, DMatrix<f64>)>> {
    check_points(a, b, same_set)?;
    let r = params.realize(spec)?;
    let (n, m) = (a.nrows(), b.nrows());
    let mut out = Vec::with_capacity(spec.params().len());
    for &p in spec.params() {
        let mut d = DMatrix::zeros(n, m);
        for j in 0..m {
            for i in 0..n {
                d[(i, j)] = match p {
                    KernelParam::Lin | KernelParam::Rbf => base_value(spec, &r, a, i, b, j),
                    KernelParam::Gamma => {
                        let s = sq_dist(a, i, b, j);
                        base_value(spec, &r, a, i, b, j) * (-0.5 * r.gamma * s)
                    }
                    KernelParam::Bias => r.bias,
                    KernelParam::White => {
                        if same_set && i == j {
                            r.white
                        } else {
                            0.0
                        }
                    }
                };
            }
        }
        out.push((p, d));
    }
    Ok(out)
}

/// Input derivatives of a Gram matrix, one `n × n′` slice per latent
/// dimension: `wrt_rows[q][(i, j)] = ∂K_ij/∂A_iq`, `wrt_cols[q][(i, j)] = ∂K_ij/∂B_jq`.
#[derive(Clone, Debug)]
pub struct InputGradients {
    pub wrt_rows: Vec<DMatrix<f64>>,
    pub wrt_cols: Vec<DMatrix<f64>>,
}

/// Analytic derivatives of `K(A, B)` with respect to the points themselves,
/// treating `A` and `B` as independent arguments.
pub fn kernel_grad_inputs(
    spec: KernelSpec,
    params: &KernelParams,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<InputGradients> {
    check_points(a, b, false)?;
    let r = params.realize(spec)?;
    let (n, m, dims) = (a.nrows(), b.nrows(), a.ncols());
    let mut wrt_rows = vec![DMatrix::zeros(n, m); dims];
    let mut wrt_cols = vec![DMatrix::zeros(n, m); dims];
    for j in 0..m {
        for i in 0..n {
            match spec {
                KernelSpec::Linear => {
                    for q in 0..dims {
                        wrt_rows[q][(i, j)] = r.lin * b[(j, q)];
                        wrt_cols[q][(i, j)] = r.lin * a[(i, q)];
                    }
                }
                KernelSpec::Rbf => {
                    let k = base_value(spec, &r, a, i, b, j);
                    for q in 0..dims {
                        let g = -r.gamma * k * (a[(i, q)] - b[(j, q)]);
                        wrt_rows[q][(i, j)] = g;
                        wrt_cols[q][(i, j)] = -g;
                    }
                }
            }
        }
    }
    Ok(InputGradients { wrt_rows, wrt_cols })
}

/// `Σ_ij W_ij ∂K_ij/∂log θ` for each free hyperparameter, without
/// materializing the per-parameter matrices.
pub fn contract_param_grads(
    spec: KernelSpec,
    params: &KernelParams,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    same_set: bool,
    w: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    check_points(a, b, same_set)?;
    if w.shape() != (a.nrows(), b.nrows()) {
        return Err(Error::DimensionMismatch("weight matrix shape".into()));
    }
    let r = params.realize(spec)?;
    let mut scale = 0.0; // Σ W ⊙ base
    let mut gamma = 0.0; // Σ W ⊙ base ⊙ (−γ/2)‖·‖²
    let mut total = 0.0; // Σ W
    for j in 0..b.nrows() {
        for i in 0..a.nrows() {
            let wij = w[(i, j)];
            total += wij;
            let k = base_value(spec, &r, a, i, b, j);
            scale += wij * k;
            if spec == KernelSpec::Rbf {
                gamma += wij * k * (-0.5 * r.gamma * sq_dist(a, i, b, j));
            }
        }
    }
    let diag: f64 = if same_set {
        (0..a.nrows()).map(|i| w[(i, i)]).sum()
    } else {
        0.0
    };
    Ok(spec
        .params()
        .iter()
        .map(|p| match p {
            KernelParam::Lin | KernelParam::Rbf => scale,
            KernelParam::Gamma => gamma,
            KernelParam::Bias => r.bias * total,
            KernelParam::White => r.white * diag,
        })
        .collect())
}

/// `(Σ_j W_ij ∂K_ij/∂A_i, Σ_i W_ij ∂K_ij/∂B_j)` as `n × Q` and `n′ × Q` matrices.
pub fn contract_input_grads(
    spec: KernelSpec,
    params: &KernelParams,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_points(a, b, false)?;
    if w.shape() != (a.nrows(), b.nrows()) {
        return Err(Error::DimensionMismatch("weight matrix shape".into()));
    }
    let r = params.realize(spec)?;
    let dims = a.ncols();
    let mut da = DMatrix::zeros(a.nrows(), dims);
    let mut db = DMatrix::zeros(b.nrows(), dims);
    match spec {
        KernelSpec::Linear => {
            // dA = θ W B, dB = θ Wᵀ A
            da = w * b * r.lin;
            db = w.transpose() * a * r.lin;
        }
        KernelSpec::Rbf => {
            for j in 0..b.nrows() {
                for i in 0..a.nrows() {
                    let c = w[(i, j)] * base_value(spec, &r, a, i, b, j) * (-r.gamma);
                    if c == 0.0 {
                        continue;
                    }
                    for q in 0..dims {
                        let d = c * (a[(i, q)] - b[(j, q)]);
                        da[(i, q)] += d;
                        db[(j, q)] -= d;
                    }
                }
            }
        }
    }
    Ok((da, db))
}

/// A jittered same-set Gram matrix with its lower Cholesky factor.
#[derive(Clone, Debug)]
pub struct JitteredGram {
    pub gram: GramMatrix,
    pub chol_lower: DMatrix<f64>,
    /// Amount added to the diagonal.
    pub jitter: f64,
    /// `jitter / mean(diag K)` of the un-jittered matrix, so the jitter can
    /// be differentiated as a function of the diagonal.
    pub relative: f64,
}

/// Maximum number of times the jitter is doubled before giving up.
pub const MAX_JITTER_DOUBLINGS: u32 = 10;

/// Adds `j·I` with `j = base·mean(diag K)`, doubling `j` until the Cholesky
/// factorization succeeds.
pub fn add_jitter(k: &GramMatrix, base: f64) -> Result<JitteredGram> {
    if !k.rows_same_as_cols || k.values.nrows() != k.values.ncols() {
        return Err(Error::InvalidArgument("jitter requires a square same-set Gram matrix".into()));
    }
    if k.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Gram matrix".into()));
    }
    let n = k.values.nrows();
    let mean_diag = k.values.diagonal().mean();
    let unit = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut relative = base;
    let mut jitter = base * unit;
    for attempt in 0..=MAX_JITTER_DOUBLINGS {
        let mut values = k.values.clone();
        for i in 0..n {
            values[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(values.clone()) {
            let l = chol.unpack();
            if (0..n).all(|i| l[(i, i)] > 0.0 && l[(i, i)].is_finite()) {
                return Ok(JitteredGram {
                    gram: GramMatrix {
                        values,
                        rows_same_as_cols: true,
                    },
                    chol_lower: l,
                    jitter,
                    relative: if mean_diag > 0.0 { relative } else { 0.0 },
                });
            }
        }
        if attempt < MAX_JITTER_DOUBLINGS {
            jitter *= 2.0;
            relative *= 2.0;
        }
    }
    Err(Error::SingularKernel {
        attempts: MAX_JITTER_DOUBLINGS,
        jitter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(lin: f64, rbf: f64, gamma: f64, bias: f64, white: f64) -> KernelParams {
        KernelParams {
            log_lin: lin.ln(),
            log_rbf: rbf.ln(),
            log_gamma: gamma.ln(),
            log_bias: bias.ln(),
            log_white: white.ln(),
        }
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize, q: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, q, |_, _| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn linear_eval_with_white() {
        let p = params(1.0, 1.0, 1.0, (-2.0f64).exp(), (-2.0f64).exp());
        let v = kernel_eval(KernelSpec::Linear, &p, &[1.0, 0.0], &[1.0, 0.0], true).unwrap();
        assert_relative_eq!(v, 1.0 + 2.0 * (-2.0f64).exp(), epsilon = 1e-14);
        assert_relative_eq!(v, 1.27067, epsilon = 1e-5);
    }

    #[test]
    fn rbf_eval_zero_distance_and_decay() {
        let p = params(1.0, 1.0, 3.7, (-2.0f64).exp(), 0.5);
        let v = kernel_eval(KernelSpec::Rbf, &p, &[0.3, -1.0], &[0.3, -1.0], false).unwrap();
        assert_relative_eq!(v, 1.0 + (-2.0f64).exp(), epsilon = 1e-14);

        let mut p = params(1.0, 1.0, 1.0, 1.0, 1.0);
        p.log_bias = f64::NEG_INFINITY;
        let v = kernel_eval(KernelSpec::Rbf, &p, &[1.0, 0.0], &[0.0, 1.0], false);
        // exp(-inf) = 0 is not a valid positive parameter
        assert!(v.is_err());
        let p = params(1.0, 1.0, 1.0, 1e-300, 1.0);
        let v = kernel_eval(KernelSpec::Rbf, &p, &[1.0, 0.0], &[0.0, 1.0], false).unwrap();
        assert_relative_eq!(v, (-1.0f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(v, 0.36788, epsilon = 1e-5);
    }

    #[test]
    fn eval_errors() {
        let p = KernelParams::default();
        assert!(matches!(
            kernel_eval(KernelSpec::Rbf, &p, &[1.0], &[1.0, 2.0], false),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            kernel_eval(KernelSpec::Linear, &p, &[f64::NAN], &[1.0], false),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn gram_examples() {
        let p = params(1.0, 1.0, 1.0, (-2.0f64).exp(), (-2.0f64).exp());
        let a = DMatrix::from_row_slice(1, 1, &[0.0]);
        let k = gram(KernelSpec::Linear, &p, &a, &a, true).unwrap();
        assert_relative_eq!(k.values[(0, 0)], 2.0 * (-2.0f64).exp(), epsilon = 1e-15);

        let mut p = params(1.0, 1.0, 1.0, 1.0, 1.0);
        p.log_bias = -700.0;
        p.log_white = -700.0;
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let k = gram(KernelSpec::Linear, &p, &a, &a, true).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert!((k.values - expect).abs().max() < 1e-15);
    }

    #[test]
    fn gram_same_set_requires_identical_points() {
        let p = KernelParams::default();
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, -2.0]);
        assert!(gram(KernelSpec::Rbf, &p, &a, &b, true).is_err());
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert!(matches!(
            gram(KernelSpec::Rbf, &p, &a, &c, false),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn white_only_on_same_set_diagonal() {
        let p = params(1.0, 2.0, 0.5, 0.1, 0.3);
        let a = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let same = gram(KernelSpec::Rbf, &p, &a, &a, true).unwrap();
        let cross = gram(KernelSpec::Rbf, &p, &a, &a.clone(), false).unwrap();
        let diff = &same.values - &cross.values;
        assert_relative_eq!(diff, DMatrix::identity(3, 3) * 0.3, epsilon = 1e-14);
    }

    #[test]
    fn white_may_be_switched_off() {
        let mut p = params(1.0, 2.0, 0.5, 0.1, 1.0);
        p.log_white = f64::NEG_INFINITY;
        let a = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let same = gram(KernelSpec::Rbf, &p, &a, &a, true).unwrap();
        let cross = gram(KernelSpec::Rbf, &p, &a, &a.clone(), false).unwrap();
        assert_eq!(same.values, cross.values);
        p.log_white = f64::NAN;
        assert!(gram(KernelSpec::Rbf, &p, &a, &a, true).is_err());
    }

    #[test]
    fn grad_params_closed_forms() {
        let p = params(1.3, 0.7, 0.9, 0.2, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_points(&mut rng, 4, 2);
        let g = kernel_grad_params(KernelSpec::Rbf, &p, &a, &a, true).unwrap();
        let bias = &g.iter().find(|(k, _)| *k == KernelParam::Bias).unwrap().1;
        assert_relative_eq!(bias, &(DMatrix::from_element(4, 4, 0.2)), epsilon = 1e-15);
        let white = &g.iter().find(|(k, _)| *k == KernelParam::White).unwrap().1;
        assert_relative_eq!(white, &(DMatrix::identity(4, 4) * 0.05), epsilon = 1e-15);
    }

    fn fd_param_check(spec: KernelSpec, same_set: bool, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_points(&mut rng, 5, 3);
        let b = if same_set { a.clone() } else { random_points(&mut rng, 4, 3) };
        let mut p = KernelParams::default();
        for &k in spec.params() {
            p.set(k, rng.random_range(-1.0..1.0));
        }
        let analytic = kernel_grad_params(spec, &p, &a, &b, same_set).unwrap();
        let h = 1e-6;
        for (k, g) in analytic {
            let mut up = p;
            up.set(k, p.get(k) + h);
            let mut dn = p;
            dn.set(k, p.get(k) - h);
            let fd = (gram(spec, &up, &a, &b, same_set).unwrap().values
                - gram(spec, &dn, &a, &b, same_set).unwrap().values)
                / (2.0 * h);
            for (x, y) in g.iter().zip(fd.iter()) {
                let err = (x - y).abs() / x.abs().max(y.abs()).max(1e-8);
                assert!(err < 1e-5 || (x - y).abs() < 1e-9, "{k:?}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn grad_params_match_finite_differences() {
        for seed in 0..3 {
            fd_param_check(KernelSpec::Rbf, true, seed);
            fd_param_check(KernelSpec::Rbf, false, seed);
            fd_param_check(KernelSpec::Linear, true, seed);
            fd_param_check(KernelSpec::Linear, false, seed);
        }
    }

    #[test]
    fn grad_inputs_examples() {
        let p = params(1.0, 1.0, 1.0, 0.1, 0.1);
        let a = DMatrix::from_row_slice(1, 2, &[0.4, -0.2]);
        let b = DMatrix::from_row_slice(1, 2, &[2.0, 3.0]);
        let g = kernel_grad_inputs(KernelSpec::Linear, &p, &a, &b).unwrap();
        assert_relative_eq!(g.wrt_rows[0][(0, 0)], 2.0);
        assert_relative_eq!(g.wrt_rows[1][(0, 0)], 3.0);

        let g = kernel_grad_inputs(KernelSpec::Rbf, &p, &b, &b).unwrap();
        assert_eq!(g.wrt_rows[0][(0, 0)], 0.0);
        assert_eq!(g.wrt_rows[1][(0, 0)], 0.0);
    }

    #[test]
    fn grad_inputs_match_finite_differences() {
        let h = 1e-6;
        for spec in [KernelSpec::Linear, KernelSpec::Rbf] {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let a = random_points(&mut rng, 4, 2);
            let b = random_points(&mut rng, 3, 2);
            let p = params(0.8, 1.4, 0.6, 0.1, 0.2);
            let g = kernel_grad_inputs(spec, &p, &a, &b).unwrap();
            for q in 0..2 {
                for i in 0..4 {
                    let mut up = a.clone();
                    up[(i, q)] += h;
                    let mut dn = a.clone();
                    dn[(i, q)] -= h;
                    let fd = (gram(spec, &p, &up, &b, false).unwrap().values
                        - gram(spec, &p, &dn, &b, false).unwrap().values)
                        / (2.0 * h);
                    for j in 0..3 {
                        let x = g.wrt_rows[q][(i, j)];
                        let y = fd[(i, j)];
                        assert!((x - y).abs() <= 1e-5 * x.abs().max(y.abs()).max(1e-4));
                    }
                }
                for j in 0..3 {
                    let mut up = b.clone();
                    up[(j, q)] += h;
                    let mut dn = b.clone();
                    dn[(j, q)] -= h;
                    let fd = (gram(spec, &p, &a, &up, false).unwrap().values
                        - gram(spec, &p, &a, &dn, false).unwrap().values)
                        / (2.0 * h);
                    for i in 0..4 {
                        let x = g.wrt_cols[q][(i, j)];
                        let y = fd[(i, j)];
                        assert!((x - y).abs() <= 1e-5 * x.abs().max(y.abs()).max(1e-4));
                    }
                }
            }
        }
    }

    #[test]
    fn contractions_agree_with_full_tensors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for spec in [KernelSpec::Linear, KernelSpec::Rbf] {
            let a = random_points(&mut rng, 5, 2);
            let b = random_points(&mut rng, 3, 2);
            let w = random_points(&mut rng, 5, 3);
            let p = params(0.8, 1.4, 0.6, 0.1, 0.2);
            let full = kernel_grad_params(spec, &p, &a, &b, false).unwrap();
            let c = contract_param_grads(spec, &p, &a, &b, false, &w).unwrap();
            for ((_, m), v) in full.iter().zip(&c) {
                assert_relative_eq!(m.component_mul(&w).sum(), *v, epsilon = 1e-12);
            }
            let g = kernel_grad_inputs(spec, &p, &a, &b).unwrap();
            let (da, db) = contract_input_grads(spec, &p, &a, &b, &w).unwrap();
            for q in 0..2 {
                for i in 0..5 {
                    let s: f64 = (0..3).map(|j| w[(i, j)] * g.wrt_rows[q][(i, j)]).sum();
                    assert_relative_eq!(da[(i, q)], s, epsilon = 1e-12);
                }
                for j in 0..3 {
                    let s: f64 = (0..5).map(|i| w[(i, j)] * g.wrt_cols[q][(i, j)]).sum();
                    assert_relative_eq!(db[(j, q)], s, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn jitter_examples() {
        let k = GramMatrix {
            values: DMatrix::identity(3, 3),
            rows_same_as_cols: true,
        };
        let j = add_jitter(&k, 1e-6).unwrap();
        for i in 0..3 {
            assert_relative_eq!(j.gram.values[(i, i)], 1.0 + 1e-6, epsilon = 1e-15);
        }

        let k = GramMatrix {
            values: DMatrix::from_element(2, 2, 1.0),
            rows_same_as_cols: true,
        };
        let j = add_jitter(&k, 1e-6).unwrap();
        assert!(j.chol_lower[(1, 1)] > 0.0);

        let mut bad = DMatrix::identity(2, 2);
        bad[(0, 1)] = f64::NAN;
        let k = GramMatrix {
            values: bad,
            rows_same_as_cols: true,
        };
        assert!(add_jitter(&k, 1e-6).is_err());
    }

    #[test]
    fn jitter_gives_up_on_indefinite_matrix() {
        let k = GramMatrix {
            values: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -5.0]),
            rows_same_as_cols: true,
        };
        assert!(matches!(add_jitter(&k, 1e-6), Err(Error::SingularKernel { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn points(n: usize, q: usize) -> impl Strategy<Value = DMatrix<f64>> {
            proptest::collection::vec(-2.0f64..2.0, n * q)
                .prop_map(move |v| DMatrix::from_row_slice(n, q, &v))
        }

        proptest! {
            #[test]
            fn same_set_gram_is_symmetric_and_factorizable(
                a in points(6, 2),
                lg in -1.0f64..1.0,
                lr in -1.0f64..1.0,
                rbf in any::<bool>(),
            ) {
                let spec = if rbf { KernelSpec::Rbf } else { KernelSpec::Linear };
                let mut p = KernelParams::default();
                p.log_gamma = lg;
                p.log_rbf = lr;
                p.log_lin = lr;
                let k = gram(spec, &p, &a, &a, true).unwrap();
                prop_assert!(k.max_asymmetry() <= 1e-12);
                prop_assert!(add_jitter(&k, 1e-6).is_ok());
            }

            #[test]
            fn eval_is_exchange_symmetric(
                z in proptest::collection::vec(-2.0f64..2.0, 3),
                w in proptest::collection::vec(-2.0f64..2.0, 3),
                rbf in any::<bool>(),
            ) {
                let spec = if rbf { KernelSpec::Rbf } else { KernelSpec::Linear };
                let p = KernelParams { log_gamma: 0.3, ..KernelParams::default() };
                let x = kernel_eval(spec, &p, &z, &w, false).unwrap();
                let y = kernel_eval(spec, &p, &w, &z, false).unwrap();
                prop_assert_eq!(x, y);
            }

            #[test]
            fn rbf_part_is_bounded_by_its_scale(
                z in proptest::collection::vec(-2.0f64..2.0, 2),
                w in proptest::collection::vec(-2.0f64..2.0, 2),
                lr in -2.0f64..2.0,
            ) {
                let p = KernelParams { log_rbf: lr, log_bias: -700.0, ..KernelParams::default() };
                let v = kernel_eval(KernelSpec::Rbf, &p, &z, &w, false).unwrap() - p.log_bias.exp();
                prop_assert!(v > 0.0 && v <= lr.exp() * (1.0 + 1e-15));
            }
        }
    }
}
