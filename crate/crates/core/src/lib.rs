//! Joint dimensionality reduction and clustering with a mixture of sparse
//! Gaussian process latent variable models.
//!
//! Each mixture component is a GP-LVM whose prior over function values uses
//! the deterministic training conditional (DTC) approximation anchored on a
//! shared set of inducing inputs. Cluster indicators, latent coordinates and
//! all hyperparameters are learned by variational EM: the E-step computes the
//! closed-form posteriors over function values and indicators, the M-step
//! maximizes the KL-corrected lower bound with scaled conjugate gradients.
//!
//! Module map:
//! * [`kernel`]: covariance functions, Gram matrices and their derivatives.
//! * [`sparse`]: Nyström factorization, Woodbury log-marginals, `q(f)`.
//! * [`mixture`]: model state, E-step, bounds, gradients and the EM driver.
//! * [`scg`]: scaled conjugate gradients.
//! * [`data`]: datasets, ISOMAP, fuzzy c-means, PCA dimension selection,
//!   inducing-point sampling and synthetic generators.
//! * [`metrics`]: clustering accuracy and NMI.

pub mod data;
pub mod error;
pub mod kernel;
pub mod metrics;
pub mod mixture;
pub mod scg;
pub mod sparse;

pub use data::Dataset;
pub use error::{Error, Result};
pub use kernel::{GramMatrix, KernelParams, KernelSpec};
pub use mixture::{
    em_fit, BoundReport, EmConfig, FitOutput, IterationRecord, ModelState, Responsibilities,
};
pub use nalgebra::{DMatrix, DVector};
pub use scg::{scg_minimize, ScgConfig, ScgResult, StopReason};
pub use sparse::{ComponentPosterior, DtcFactor, WeightMatrix};
