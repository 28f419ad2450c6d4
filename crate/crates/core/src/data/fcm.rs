//! Fuzzy c-means on latent coordinates.

use nalgebra::DMatrix;
use rand::Rng;

use super::{seeded_rng, streams};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FcmConfig {
    pub fuzzifier: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Independent seedings; the run with the lowest final objective wins.
    pub restarts: usize,
}

impl Default for FcmConfig {
    fn default() -> Self {
        FcmConfig {
            fuzzifier: 2.0,
            max_iters: 300,
            tol: 1e-6,
            restarts: 10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FcmResult {
    /// `M × Q`, one center per row.
    pub centers: DMatrix<f64>,
    /// `N × M`, rows sum to one.
    pub memberships: DMatrix<f64>,
    /// Objective after every iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

impl FcmResult {
    /// Index of the largest membership in every row.
    pub fn hard_assignments(&self) -> Vec<usize> {
        self.memberships
            .row_iter()
            .map(|r| r.iter().enumerate().fold(0, |b, (j, &v)| if v > r[b] { j } else { b }))
            .collect()
    }
}

fn sq_dist(x: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, j: usize) -> f64 {
    (0..x.ncols()).map(|q| (x[(i, q)] - c[(j, q)]).powi(2)).sum()
}

fn update_memberships(x: &DMatrix<f64>, centers: &DMatrix<f64>, fuzzifier: f64, u: &mut DMatrix<f64>) {
    let m = centers.nrows();
    let expo = -1.0 / (fuzzifier - 1.0);
    let mut d2 = vec![0.0; m];
    for i in 0..x.nrows() {
        for (j, d) in d2.iter_mut().enumerate() {
            *d = sq_dist(x, i, centers, j);
        }
        if let Some(hit) = d2.iter().position(|&d| d == 0.0) {
            for j in 0..m {
                u[(i, j)] = if j == hit { 1.0 } else { 0.0 };
            }
            continue;
        }
        // scale by the smallest distance so the powers stay in range
        let dmin = d2.iter().cloned().fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = d2.iter().map(|d| (d / dmin).powf(expo)).collect();
        let total: f64 = w.iter().sum();
        for j in 0..m {
            u[(i, j)] = w[j] / total;
        }
    }
}

fn update_centers(x: &DMatrix<f64>, u: &DMatrix<f64>, fuzzifier: f64, centers: &mut DMatrix<f64>) {
    for j in 0..centers.nrows() {
        let mut denom = 0.0;
        let mut acc = vec![0.0; x.ncols()];
        for i in 0..x.nrows() {
            let w = u[(i, j)].powf(fuzzifier);
            denom += w;
            for (q, a) in acc.iter_mut().enumerate() {
                *a += w * x[(i, q)];
            }
        }
        if denom > 0.0 {
            for (q, a) in acc.iter().enumerate() {
                centers[(j, q)] = a / denom;
            }
        }
    }
}

fn objective(x: &DMatrix<f64>, centers: &DMatrix<f64>, u: &DMatrix<f64>, fuzzifier: f64) -> f64 {
    let mut j_val = 0.0;
    for i in 0..x.nrows() {
        for j in 0..centers.nrows() {
            j_val += u[(i, j)].powf(fuzzifier) * sq_dist(x, i, centers, j);
        }
    }
    j_val
}

/// D² seeding: the first center is a uniformly random row, every further
/// one is drawn with probability proportional to the squared distance to the
/// nearest center chosen so far.
fn seed_centers(x: &DMatrix<f64>, m: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let n = x.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(x, i, x, chosen[0])).collect();
    while chosen.len() < m {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // every point coincides with a center: fall back to unused rows
            (0..n).find(|i| !chosen.contains(i)).expect("m <= n")
        };
        chosen.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(x, i, x, next));
        }
    }
    let mut centers = DMatrix::zeros(m, x.ncols());
    for (j, &i) in chosen.iter().enumerate() {
        centers.row_mut(j).copy_from(&x.row(i));
    }
    centers
}

/// Soft-clusters the rows of `x` into `m` groups. Each restart seeds `m`
/// centers by D² sampling and iterates until no center moves by more than
/// `tol`; the restart with the lowest objective is returned.
pub fn fcm_cluster(x: &DMatrix<f64>, m: usize, cfg: &FcmConfig, seed: u64) -> Result<FcmResult> {
    let n = x.nrows();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!("{m} clusters for {n} points")));
    }
    if !(cfg.fuzzifier > 1.0) {
        return Err(Error::InvalidArgument("fuzzifier must exceed 1".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("clustering input".into()));
    }
    let mut rng = seeded_rng(seed, streams::FCM);
    let mut best: Option<FcmResult> = None;
    for _ in 0..cfg.restarts.max(1) {
        let run = fcm_single(x, seed_centers(x, m, &mut rng), cfg);
        let score = |r: &FcmResult| objective(x, &r.centers, &r.memberships, cfg.fuzzifier);
        if best.as_ref().is_none_or(|b| score(&run) < score(b)) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn fcm_single(x: &DMatrix<f64>, mut centers: DMatrix<f64>, cfg: &FcmConfig) -> FcmResult {
    let (n, m) = (x.nrows(), centers.nrows());
    let mut u = DMatrix::zeros(n, m);
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        update_memberships(x, &centers, cfg.fuzzifier, &mut u);
        let previous = centers.clone();
        update_centers(x, &u, cfg.fuzzifier, &mut centers);
        trace.push(objective(x, &centers, &u, cfg.fuzzifier));
        let shift = (0..m)
            .map(|j| (centers.row(j) - previous.row(j)).norm())
            .fold(0.0, f64::max);
        if shift < cfg.tol {
            break;
        }
    }
    update_memberships(x, &centers, cfg.fuzzifier, &mut u);
    FcmResult {
        centers,
        memberships: u,
        objective: trace,
        iterations,
    }
}
