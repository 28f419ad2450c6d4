//! Small generated datasets with known structure.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{seeded_rng, streams, Dataset};
use crate::error::Result;

pub const ARC_COUNT: usize = 5;
const ARC_RADIUS: f64 = 1.0;
const LAYOUT_RADIUS: f64 = 3.0;
const ARC_SPAN: f64 = 4.0 * PI / 3.0;
const ARC_NOISE: f64 = 0.02;

/// `n` points `(t cos t, t sin t, t)` with `t` evenly spaced over `[0, 4π]`,
/// plus isotropic Gaussian noise. Label `k` marks `t ∈ [kπ, (k+1)π)`, so there
/// are four classes.
pub fn synth_spiral3d(n: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    let n = n.max(1);
    let mut rng = seeded_rng(seed, streams::SYNTH);
    let noise = Normal::new(0.0, noise_sd.abs()).expect("finite sd");
    let mut vals = Vec::with_capacity(3 * n);
    let mut labels = Vec::with_capacity(n);
    for k in 0..n {
        let t = if n == 1 { 0.0 } else { 4.0 * PI * k as f64 / (n - 1) as f64 };
        for base in [t * t.cos(), t * t.sin(), t] {
            let e = if noise_sd == 0.0 { 0.0 } else { noise.sample(&mut rng) };
            vals.push(base + e);
        }
        labels.push(((t / PI).floor() as i64).min(3));
    }
    Dataset::new(DMatrix::from_row_slice(n, 3, &vals), Some(labels), "spiral")
}

/// Five unit-radius arcs, each spanning 240°, centered on the vertices of a
/// regular pentagon of circumradius 3 with their open side facing the
/// middle. The layout has equal spread along both axes, so per-column
/// standardization only rescales it. Angles are drawn uniformly along each
/// arc and the radius carries small Gaussian noise.
pub fn synth_circle_arcs(n_per_arc: usize, seed: u64) -> Result<Dataset> {
    let n_per_arc = n_per_arc.max(1);
    let mut rng = seeded_rng(seed, streams::SYNTH);
    let noise = Normal::new(0.0, ARC_NOISE).expect("finite sd");
    let n = ARC_COUNT * n_per_arc;
    let mut vals = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for k in 0..ARC_COUNT {
        let phi = 2.0 * PI * k as f64 / ARC_COUNT as f64;
        let (cx, cy) = (LAYOUT_RADIUS * phi.cos(), LAYOUT_RADIUS * phi.sin());
        // the uncovered 120° faces the pentagon's center, i.e. direction phi + π
        let start = phi + PI + (2.0 * PI - ARC_SPAN) / 2.0;
        for _ in 0..n_per_arc {
            let a = start + rng.random_range(0.0..ARC_SPAN);
            let r = ARC_RADIUS + noise.sample(&mut rng);
            vals.push(cx + r * a.cos());
            vals.push(cy + r * a.sin());
            labels.push(k as i64);
        }
    }
    Dataset::new(DMatrix::from_row_slice(n, 2, &vals), Some(labels), "arcs")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_spiral_lies_on_cone() {
        let d = synth_spiral3d(200, 0.0, 1).unwrap();
        for r in d.y.row_iter() {
            assert!((r[0] * r[0] + r[1] * r[1] - r[2] * r[2]).abs() < 1e-9);
        }
        let labels = d.labels.unwrap();
        assert_eq!(labels[0], 0);
        assert_eq!(*labels.last().unwrap(), 3);
    }

    #[test]
    fn arcs_have_five_labels_and_stay_separate() {
        let d = synth_circle_arcs(40, 7).unwrap();
        assert_eq!(d.n_classes(), Some(5));
        assert_eq!(d.n(), 200);
        let labels = d.labels.as_ref().unwrap();
        for i in 0..d.n() {
            let phi = 2.0 * PI * labels[i] as f64 / ARC_COUNT as f64;
            let (cx, cy) = (LAYOUT_RADIUS * phi.cos(), LAYOUT_RADIUS * phi.sin());
            let r = ((d.y[(i, 0)] - cx).powi(2) + (d.y[(i, 1)] - cy).powi(2)).sqrt();
            assert!((r - 1.0).abs() < 0.2);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        synth_circle_arcs(30, 5).unwrap().write_csv(&mut a).unwrap();
        synth_circle_arcs(30, 5).unwrap().write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        synth_circle_arcs(30, 6).unwrap().write_csv(&mut c).unwrap();
        assert_ne!(a, c);
    }
}
