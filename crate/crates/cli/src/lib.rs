//! Library side of the `gpmix` command-line tool. Every subcommand is a
//! plain function so it can be driven from tests as well as from `main`.

pub mod config;
pub mod error;
pub mod gradcheck;
pub mod output;
pub mod plot;
pub mod run;

pub use config::{ExperimentArgs, ExperimentConfig};
pub use error::{CliError, CliResult};
pub use gradcheck::{run_gradcheck, GradcheckConfig, GradcheckReport};
pub use plot::cmd_plot;
pub use run::{cmd_fit, cmd_fit_observed, cmd_sweep_inducing, InducingCount, RunRecord, SweepReport};

use std::path::Path;

use config::SynthSpec;

/// Writes a generated dataset as CSV with a trailing label column.
pub fn cmd_synth(spec: &SynthSpec, out: &Path) -> CliResult<usize> {
    let data = spec.generate().map_err(CliError::Input)?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf).map_err(CliError::Input)?;
    output::write_atomic(out, &buf)?;
    Ok(data.n())
}
