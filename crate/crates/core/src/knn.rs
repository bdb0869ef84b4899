//! Exact k-nearest-neighbor search and directed kNN graphs with self-loops.
//!
//! Search is brute force over every point. Results are ordered by distance,
//! ties going to the lower index, so the output is fully determined by the
//! input and identical whether queries run in parallel or not.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::matrix::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum KnnError {
    #[error("points have dimension {points} but queries have dimension {queries}")]
    DimensionMismatch { points: usize, queries: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("cannot search an empty point set")]
    Empty,
}

/// Distance used to rank neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Metric {
    #[default]
    SquaredEuclidean,
    Manhattan,
}

impl Metric {
    #[inline]
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::SquaredEuclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            Metric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[inline]
fn closer(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance.total_cmp(&b.distance).then(a.index.cmp(&b.index))
}

/// The `k` nearest rows of `points` to each row of `queries` under squared
/// Euclidean distance. `k` is clamped to the number of points.
pub fn knn_search(points: &Matrix, queries: &Matrix, k: usize) -> Result<Vec<Vec<Neighbor>>, KnnError> {
    search(points, queries, k, Metric::SquaredEuclidean, false)
}

/// Like [`knn_search`] with the points as their own queries, excluding each
/// query's own index. `k` is clamped to `n - 1`. Duplicate points are still
/// returned as neighbors of each other.
pub fn knn_search_excluding_self(points: &Matrix, k: usize, metric: Metric) -> Result<Vec<Vec<Neighbor>>, KnnError> {
    search(points, points, k, metric, true)
}

fn search(
    points: &Matrix,
    queries: &Matrix,
    k: usize,
    metric: Metric,
    exclude_self: bool,
) -> Result<Vec<Vec<Neighbor>>, KnnError> {
    if k == 0 {
        return Err(KnnError::ZeroK);
    }
    if points.cols() != queries.cols() {
        return Err(KnnError::DimensionMismatch { points: points.cols(), queries: queries.cols() });
    }
    if points.rows() == 0 {
        return Err(KnnError::Empty);
    }
    let n = points.rows();
    let available = if exclude_self { n - 1 } else { n };
    let k = k.min(available);
    let results = (0..queries.rows())
        .into_par_iter()
        .map(|q| {
            if k == 0 {
                return Vec::new();
            }
            let query = queries.row(q);
            let mut cand: Vec<Neighbor> = (0..n)
                .filter(|&j| !(exclude_self && j == q))
                .map(|j| Neighbor { index: j, distance: metric.distance(query, points.row(j)) })
                .collect();
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, closer);
                cand.truncate(k);
            }
            cand.sort_unstable_by(closer);
            cand
        })
        .collect();
    Ok(results)
}

/// Directed kNN graph: node `i`'s list is `[i, nearest, second nearest, ...]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    k: usize,
    neighbors: Vec<Vec<usize>>,
}

impl NeighborGraph {
    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    /// Requested neighbor count; lists hold `min(k, n - 1) + 1` entries.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn lists(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    /// Edges `(i, j)` for `j ∈ N(i)`, node-major in list order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors.iter().enumerate().flat_map(|(i, l)| l.iter().map(move |&j| (i, j)))
    }

    /// Builds a graph from explicit lists. Each list must start with its own
    /// node and contain unique in-range indices.
    pub fn from_lists(k: usize, neighbors: Vec<Vec<usize>>) -> Result<Self, String> {
        let n = neighbors.len();
        for (i, l) in neighbors.iter().enumerate() {
            if l.first() != Some(&i) {
                return Err(format!("list {i} does not start with its own index"));
            }
            let mut seen = l.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != l.len() || seen.last().is_some_and(|&j| j >= n) {
                return Err(format!("list {i} has duplicate or out-of-range entries"));
            }
        }
        Ok(Self { k, neighbors })
    }

    /// Writes one `i j` line per edge.
    pub fn write_edge_list(&self, path: &Path) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "# nodes {} k {}", self.node_count(), self.k)?;
        for (i, j) in self.edges() {
            writeln!(w, "{i} {j}")?;
        }
        w.flush()
    }
}

/// kNN graph over the rows of `embeddings` with squared Euclidean distance.
pub fn build_graph(embeddings: &Matrix, k: usize) -> Result<NeighborGraph, KnnError> {
    build_graph_with(embeddings, k, Metric::SquaredEuclidean)
}

pub fn build_graph_with(embeddings: &Matrix, k: usize, metric: Metric) -> Result<NeighborGraph, KnnError> {
    let found = knn_search_excluding_self(embeddings, k, metric)?;
    let neighbors = found
        .into_iter()
        .enumerate()
        .map(|(i, nn)| std::iter::once(i).chain(nn.into_iter().map(|n| n.index)).collect())
        .collect();
    Ok(NeighborGraph { k, neighbors })
}
