//! Clustering quality: majority-map accuracy and NMI, both on a 0-100 scale.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Ground-truth labels paired with predicted cluster indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelPair {
    truth: Vec<i64>,
    predicted: Vec<i64>,
}

impl LabelPair {
    pub fn new(truth: Vec<i64>, predicted: Vec<i64>) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} true labels vs {} cluster assignments",
                truth.len(),
                predicted.len()
            )));
        }
        if truth.is_empty() {
            return Err(Error::InvalidArgument("label pair is empty".into()));
        }
        Ok(LabelPair { truth, predicted })
    }

    pub fn from_clusters(truth: &[i64], clusters: &[usize]) -> Result<Self> {
        Self::new(truth.to_vec(), clusters.iter().map(|&c| c as i64).collect())
    }

    pub fn truth(&self) -> &[i64] {
        &self.truth
    }

    pub fn predicted(&self) -> &[i64] {
        &self.predicted
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    /// Contingency counts keyed by (cluster, label).
    fn table(&self) -> BTreeMap<(i64, i64), usize> {
        let mut t = BTreeMap::new();
        for (&y, &c) in self.truth.iter().zip(&self.predicted) {
            *t.entry((c, y)).or_insert(0) += 1;
        }
        t
    }
}

/// Every cluster is mapped to its most frequent true label (smallest label on
/// ties) and the fraction of points whose label matches is returned × 100.
pub fn clustering_accuracy(pair: &LabelPair) -> f64 {
    // BTreeMap iterates labels in ascending order within a cluster, so a
    // strict `>` keeps the smallest label among equally frequent ones.
    let mut best: BTreeMap<i64, (i64, usize)> = BTreeMap::new();
    for (&(c, y), &count) in &pair.table() {
        let e = best.entry(c).or_insert((y, count));
        if count > e.1 {
            *e = (y, count);
        }
    }
    let correct: usize = best.values().map(|&(_, count)| count).sum();
    100.0 * correct as f64 / pair.len() as f64
}

// Sums run over counts sorted by value, so renaming labels or clusters
// cannot change the floating-point summation order.
fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    let mut counts: Vec<usize> = counts.filter(|&c| c > 0).collect();
    counts.sort_unstable();
    counts
        .into_iter()
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `200 · I(Y; C) / (H(Y) + H(C))` with natural logarithms.
///
/// When exactly one partition is constant the score is 0; when both are it
/// is 100.
pub fn nmi(pair: &LabelPair) -> f64 {
    let n = pair.len() as f64;
    let mut by_label: BTreeMap<i64, usize> = BTreeMap::new();
    let mut by_cluster: BTreeMap<i64, usize> = BTreeMap::new();
    for (&y, &c) in pair.truth.iter().zip(&pair.predicted) {
        *by_label.entry(y).or_insert(0) += 1;
        *by_cluster.entry(c).or_insert(0) += 1;
    }
    let h_y = entropy(by_label.values().copied(), n);
    let h_c = entropy(by_cluster.values().copied(), n);
    if by_label.len() == 1 && by_cluster.len() == 1 {
        return 100.0;
    }
    if by_label.len() == 1 || by_cluster.len() == 1 {
        return 0.0;
    }
    let mut cells: Vec<(usize, usize, usize)> = pair
        .table()
        .iter()
        .map(|(&(c, y), &count)| (count, by_label[&y], by_cluster[&c]))
        .collect();
    cells.sort_unstable();
    let mut mi = 0.0;
    for (count, n_y, n_c) in cells {
        let p_joint = count as f64 / n;
        let (p_y, p_c) = (n_y as f64 / n, n_c as f64 / n);
        mi += p_joint * (p_joint / (p_y * p_c)).ln();
    }
    (200.0 * mi / (h_y + h_c)).clamp(0.0, 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pair(t: &[i64], c: &[i64]) -> LabelPair {
        LabelPair::new(t.to_vec(), c.to_vec()).unwrap()
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(clustering_accuracy(&pair(&[0, 0, 1, 1], &[1, 1, 2, 2])), 100.0);
        assert_eq!(clustering_accuracy(&pair(&[0, 0, 0, 1], &[1, 1, 2, 2])), 75.0);
        let truth: Vec<i64> = (0..10).map(|i| i % 2).collect();
        assert_eq!(clustering_accuracy(&pair(&truth, &[0; 10])), 50.0);
    }

    #[test]
    fn accuracy_tie_breaks_to_smallest_label() {
        // cluster 7 holds one point of label 3 and one of label 1: label 1 wins
        let p = pair(&[3, 1, 3], &[7, 7, 8]);
        assert_relative_eq!(clustering_accuracy(&p), 200.0 / 3.0);
    }

    #[test]
    fn nmi_examples() {
        assert_relative_eq!(nmi(&pair(&[0, 0, 1, 1], &[0, 0, 1, 1])), 100.0, epsilon = 1e-12);
        assert_relative_eq!(nmi(&pair(&[0, 0, 1, 1], &[0, 1, 0, 1])), 0.0, epsilon = 1e-12);
        assert_eq!(nmi(&pair(&[0, 0, 0], &[1, 1, 1])), 100.0);
        assert_eq!(nmi(&pair(&[0, 1, 0], &[1, 1, 1])), 0.0);
    }

    #[test]
    fn nmi_against_hand_table() {
        // truth [0,0,1,1,1,1], clusters [0,0,0,1,1,1]
        // joint: (c0,y0)=2, (c0,y1)=1, (c1,y1)=3
        let n = 6.0f64;
        let h = |ps: &[f64]| -ps.iter().map(|p| p * p.ln()).sum::<f64>();
        let hy = h(&[2.0 / n, 4.0 / n]);
        let hc = h(&[3.0 / n, 3.0 / n]);
        let mi = (2.0 / n) * ((2.0 / n) / ((2.0 / n) * (3.0 / n))).ln()
            + (1.0 / n) * ((1.0 / n) / ((4.0 / n) * (3.0 / n))).ln()
            + (3.0 / n) * ((3.0 / n) / ((4.0 / n) * (3.0 / n))).ln();
        let expect = 200.0 * mi / (hy + hc);
        assert_relative_eq!(nmi(&pair(&[0, 0, 1, 1, 1, 1], &[0, 0, 0, 1, 1, 1])), expect, epsilon = 1e-10);
    }

    #[test]
    fn rejects_mismatched_lengths() {
        assert!(LabelPair::new(vec![0, 1], vec![0]).is_err());
        assert!(LabelPair::new(vec![], vec![]).is_err());
    }
}
