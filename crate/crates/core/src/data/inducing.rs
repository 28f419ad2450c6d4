use nalgebra::DMatrix;
use rand::seq::index;

use super::{seeded_rng, streams};
use crate::error::{Error, Result};

/// Picks `count` distinct rows of `x` at random. With `count == N` the result
/// is a row permutation of `x`.
pub fn select_inducing(x: &DMatrix<f64>, count: usize, seed: u64) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if count == 0 || count > n {
        return Err(Error::InvalidArgument(format!(
            "cannot choose {count} inducing inputs from {n} points"
        )));
    }
    let mut rng = seeded_rng(seed, streams::INDUCING);
    let picks = index::sample(&mut rng, n, count);
    let mut out = DMatrix::zeros(count, x.ncols());
    for (j, i) in picks.iter().enumerate() {
        out.row_mut(j).copy_from(&x.row(i));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_count_is_a_permutation() {
        let x = DMatrix::from_fn(12, 2, |i, j| (i * 2 + j) as f64);
        let u = select_inducing(&x, 12, 9).unwrap();
        let mut firsts: Vec<i64> = u.column(0).iter().map(|v| *v as i64).collect();
        firsts.sort();
        assert_eq!(firsts, (0..12).map(|i| 2 * i).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_and_distinct() {
        let x = DMatrix::from_fn(30, 1, |i, _| i as f64);
        let a = select_inducing(&x, 10, 3).unwrap();
        assert_eq!(a, select_inducing(&x, 10, 3).unwrap());
        let mut v: Vec<i64> = a.iter().map(|v| *v as i64).collect();
        v.sort();
        v.dedup();
        assert_eq!(v.len(), 10);
    }

    #[test]
    fn rejects_bad_counts() {
        let x = DMatrix::zeros(5, 2);
        assert!(select_inducing(&x, 0, 0).is_err());
        assert!(select_inducing(&x, 6, 0).is_err());
    }
}
