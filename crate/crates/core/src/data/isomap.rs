//! Geodesic-distance embedding: k-nearest-neighbour graph, all-pairs
//! shortest paths, classical MDS.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_NEIGHBORS: usize = 10;

#[derive(Clone, Debug)]
pub struct IsomapEmbedding {
    /// `N × Q`, one point per row.
    pub coords: DMatrix<f64>,
    /// Leading eigenvalues of the centered Gram matrix, largest first.
    pub eigenvalues: Vec<f64>,
    /// Number of coordinates filled with zeros for lack of positive eigenvalues.
    pub padded: usize,
    /// Extra edges added to join disconnected neighbourhood components.
    pub bridges: usize,
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier {
    dist: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed so the max-heap pops the nearest node
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn pairwise(y: &DMatrix<f64>) -> DMatrix<f64> {
    let n = y.nrows();
    DMatrix::from_fn(n, n, |i, j| (y.row(i) - y.row(j)).norm())
}

fn add_edge(adj: &mut [Vec<(usize, f64)>], a: usize, b: usize, w: f64) {
    if !adj[a].iter().any(|&(v, _)| v == b) {
        adj[a].push((b, w));
        adj[b].push((a, w));
    }
}

fn components(adj: &[Vec<(usize, f64)>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![s];
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    comp.push(v);
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adj.len()];
    dist[source] = 0.0;
    let mut heap = BinaryHeap::from([Frontier { dist: 0.0, node: source }]);
    while let Some(Frontier { dist: d, node: u }) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Frontier { dist: nd, node: v });
            }
        }
    }
    dist
}

/// Builds the symmetric neighbourhood graph and joins every smaller
/// component to the largest one through its closest pair of points.
fn neighbourhood_graph(d: &DMatrix<f64>, k: usize) -> (Vec<Vec<(usize, f64)>>, usize) {
    let n = d.nrows();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| d[(i, a)].total_cmp(&d[(i, b)]).then(a.cmp(&b)));
        for &j in order.iter().take(k) {
            add_edge(&mut adj, i, j, d[(i, j)]);
        }
    }
    let comps = components(&adj);
    if comps.len() <= 1 {
        return (adj, 0);
    }
    let main = comps
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .expect("at least one component");
    let mut bridges = 0;
    for (ci, comp) in comps.iter().enumerate() {
        if ci == main {
            continue;
        }
        let mut best = (f64::INFINITY, 0, 0);
        for &a in comp {
            for &b in &comps[main] {
                if d[(a, b)] < best.0 {
                    best = (d[(a, b)], a, b);
                }
            }
        }
        add_edge(&mut adj, best.1, best.2, best.0);
        bridges += 1;
    }
    (adj, bridges)
}

/// Embeds the rows of `y` into `q` dimensions. Each eigenvector's sign is
/// fixed so that its largest-magnitude entry is positive.
pub fn isomap_embed(y: &DMatrix<f64>, k_neighbors: usize, q: usize) -> Result<IsomapEmbedding> {
    let n = y.nrows();
    if k_neighbors == 0 || q == 0 {
        return Err(Error::InvalidArgument("neighbour count and dimension must be positive".into()));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two points".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embedding input".into()));
    }
    let d = pairwise(y);
    let (adj, bridges) = neighbourhood_graph(&d, k_neighbors.min(n - 1));
    if bridges > 0 {
        log::warn!("neighbourhood graph had {} extra components; bridged", bridges);
    }
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|s| dijkstra(&adj, s)).collect();
    let mut g2 = DMatrix::from_fn(n, n, |i, j| {
        // symmetrize against floating-point path-order differences
        let v = 0.5 * (rows[i][j] + rows[j][i]);
        v * v
    });
    // double centering: B = -1/2 J G² J
    let row_means: Vec<f64> = (0..n).map(|i| g2.row(i).mean()).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            g2[(i, j)] = -0.5 * (g2[(i, j)] - row_means[i] - row_means[j] + grand);
        }
    }
    let eig = SymmetricEigen::new(g2);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let positive_floor = scale * 1e-12;

    let mut coords = DMatrix::zeros(n, q);
    let mut eigenvalues = Vec::with_capacity(q);
    let mut padded = 0;
    for (c, &idx) in order.iter().take(q).enumerate() {
        let lambda = eig.eigenvalues[idx];
        eigenvalues.push(lambda);
        if lambda <= positive_floor {
            padded += 1;
            continue;
        }
        let v = eig.eigenvectors.column(idx);
        let pivot = (0..n).fold(0, |b, i| if v[i].abs() > v[b].abs() { i } else { b });
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        let s = lambda.sqrt() * sign;
        for i in 0..n {
            coords[(i, c)] = v[i] * s;
        }
    }
    padded += q.saturating_sub(n);
    if padded > 0 {
        log::warn!("only {} positive eigenvalues; padding {} coordinates with zeros", q - padded, padded);
    }
    Ok(IsomapEmbedding {
        coords,
        eigenvalues,
        padded,
        bridges,
    })
}
