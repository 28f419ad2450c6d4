//! The variational EM loop.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::bound::{estep_qf, estep_qs, kl_bound_grads, kl_bound_value, BoundReport};
use super::state::{init_model, InitConfig, ModelState};
use super::{assign_clusters, Responsibilities, TracePoint};
use crate::data::{standardize, Dataset, DEFAULT_NEIGHBORS};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::metrics::{clustering_accuracy, nmi, LabelPair};
use crate::scg::{scg_minimize, ScgConfig, StopReason};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub kernel: KernelSpec,
    pub n_clusters: usize,
    pub latent_dim: usize,
    pub n_inducing: usize,
    /// Outer EM iterations.
    pub n_iter: usize,
    /// SCG iterations per M-step.
    pub inner_iters: usize,
    pub seed: u64,
    /// Scale every output column to zero mean and unit variance first.
    pub standardize: bool,
    pub isomap_neighbors: usize,
}

impl EmConfig {
    pub fn new(kernel: KernelSpec, n_clusters: usize, latent_dim: usize, n_inducing: usize) -> Self {
        EmConfig {
            kernel,
            n_clusters,
            latent_dim,
            n_inducing,
            n_iter: 100,
            inner_iters: 20,
            seed: 0,
            standardize: true,
            isomap_neighbors: DEFAULT_NEIGHBORS,
        }
    }

    pub fn init_config(&self) -> InitConfig {
        InitConfig {
            n_clusters: self.n_clusters,
            latent_dim: self.latent_dim,
            n_inducing: self.n_inducing,
            kernel: self.kernel,
            seed: self.seed,
            isomap_neighbors: self.isomap_neighbors,
        }
    }
}

/// What happened during one outer iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    /// Bound right after the responsibilities were updated.
    pub bound_after_estep: f64,
    /// Bound at the end of the M-step.
    pub kl_bound: f64,
    pub accuracy: Option<f64>,
    pub nmi: Option<f64>,
    /// Negated bound after each SCG iteration, starting point first.
    pub mstep_objective: Vec<f64>,
    pub scg_stop: Option<StopReason>,
}

#[derive(Clone, Debug)]
pub struct FitOutput {
    pub state: ModelState,
    pub responsibilities: Responsibilities,
    pub report: BoundReport,
    pub clusters: Vec<usize>,
    pub records: Vec<IterationRecord>,
    /// The outputs the model was fitted to, after preprocessing.
    pub y_model: DMatrix<f64>,
}

fn at_iteration(t: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numerical { message, .. } => Error::Numerical { iteration: t, message },
        e @ (Error::NonFinite(_) | Error::SingularKernel { .. }) => Error::Numerical {
            iteration: t,
            message: e.to_string(),
        },
        e => e,
    }
}

/// Preprocesses the data, initializes and runs EM.
pub fn em_fit(data: &Dataset, cfg: &EmConfig) -> Result<FitOutput> {
    let y = if cfg.standardize {
        standardize(&data.y)?
    } else {
        data.y.clone()
    };
    let (state, r) = init_model(&y, &cfg.init_config())?;
    fit_from_state(&y, state, r, data.labels.as_deref(), cfg)
}

/// Runs `cfg.n_iter` EM iterations from a given state and responsibilities.
/// Each iteration recomputes `q(f)` and `q(S)` and then maximizes the bound
/// over every parameter jointly with a fixed SCG budget.
pub fn fit_from_state(
    y: &DMatrix<f64>,
    mut state: ModelState,
    mut r: Responsibilities,
    labels: Option<&[i64]>,
    cfg: &EmConfig,
) -> Result<FitOutput> {
    if cfg.n_iter == 0 {
        return Err(Error::InvalidArgument("need at least one EM iteration".into()));
    }
    state.validate()?;
    if let Some(l) = labels {
        if l.len() != state.n() {
            return Err(Error::DimensionMismatch("labels and data rows differ".into()));
        }
    }
    let scg_cfg = ScgConfig {
        max_iters: cfg.inner_iters.max(1),
        ..ScgConfig::default()
    };
    let mut records = Vec::with_capacity(cfg.n_iter);
    let mut last = f64::NAN;
    for t in 1..=cfg.n_iter {
        let err = at_iteration(t);
        let posteriors = estep_qf(&state, &r, y).map_err(&err)?;
        r = estep_qs(&state, &posteriors, y).map_err(&err)?;
        let before = kl_bound_value(&state, &r, y).map_err(&err)?;

        let x0 = state.flatten();
        let n_params = x0.len();
        let objective = |x: &[f64]| {
            state
                .unflatten(x)
                .and_then(|s| kl_bound_value(&s, &r, y))
                .map(|v| -v)
                .unwrap_or(f64::INFINITY)
        };
        let gradient = |x: &[f64]| {
            state
                .unflatten(x)
                .and_then(|s| kl_bound_grads(&s, &r, y))
                .map(|g| g.into_iter().map(|v| -v).collect())
                .unwrap_or_else(|_| vec![f64::NAN; n_params])
        };
        let (result, stop) = match scg_minimize(objective, gradient, &x0, &scg_cfg) {
            Ok(res) => {
                let stop = res.converged_by;
                (res, Some(stop))
            }
            Err(abort) => {
                log::warn!("iteration {t}: {abort}; keeping the last finite point");
                (abort.last_finite, None)
            }
        };
        state = state.unflatten(&result.x_star)?;
        state.validate().map_err(&err)?;
        let after = -result.f_star;
        if !after.is_finite() {
            return Err(Error::Numerical {
                iteration: t,
                message: "bound is not finite".into(),
            });
        }
        last = after;

        let (accuracy, nmi_score) = match labels {
            Some(l) => {
                let pair = LabelPair::from_clusters(l, &assign_clusters(&r))?;
                (Some(clustering_accuracy(&pair)), Some(nmi(&pair)))
            }
            None => (None, None),
        };
        log::debug!("iteration {t}: bound {before:.6} -> {after:.6}");
        records.push(IterationRecord {
            iteration: t,
            bound_after_estep: before,
            kl_bound: after,
            accuracy,
            nmi: nmi_score,
            mstep_objective: result.trace,
            scg_stop: stop,
        });
    }

    let posteriors = estep_qf(&state, &r, y)?;
    let standard = super::bound::standard_bound(&state, &r, &posteriors, y).ok();
    let report = super::bound::kl_bound(&state, &r, y)?;
    debug_assert!((report.kl_corrected - last).abs() <= 1e-6 * last.abs().max(1.0));
    let report = BoundReport {
        standard,
        trace: records
            .iter()
            .map(|rec| TracePoint {
                iteration: rec.iteration,
                kl_bound: rec.kl_bound,
                accuracy: rec.accuracy,
            })
            .collect(),
        ..report
    };
    let clusters = assign_clusters(&r);
    Ok(FitOutput {
        state,
        responsibilities: r,
        report,
        clusters,
        records,
        y_model: y.clone(),
    })
}
