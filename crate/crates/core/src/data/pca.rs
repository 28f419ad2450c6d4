use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues of the sample covariance of `y`, largest first.
pub fn explained_variance(y: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = y.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two rows".into()));
    }
    let mut centered = y.clone();
    for mut col in centered.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let mut ev: Vec<f64> = SymmetricEigen::new(cov)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0))
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    Ok(ev)
}

/// Smallest number of principal directions whose eigenvalues account for at
/// least `pct` percent of the total variance.
pub fn pca_variance_dims(y: &DMatrix<f64>, pct: f64) -> Result<usize> {
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(Error::InvalidArgument(format!("percentage {pct} outside (0, 100]")));
    }
    let ev = explained_variance(y)?;
    let total: f64 = ev.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("data has zero variance".into()));
    }
    let target = pct / 100.0;
    let mut acc = 0.0;
    for (i, v) in ev.iter().enumerate() {
        acc += v;
        // relative slack so exact ratios such as 2/4 are not lost to rounding
        if acc / total >= target - 1e-12 {
            return Ok(i + 1);
        }
    }
    Ok(ev.len())
}
