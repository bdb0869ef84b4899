use super::{cv_folds, pick_best, training_rows, BaselineError, GridTrace};
use crate::dataset::FingerprintDataset;
use crate::knn::{knn_search, Neighbor};
use crate::matrix::Matrix;

pub const DEFAULT_K_CANDIDATES: [usize; 7] = [1, 3, 5, 7, 9, 11, 15];

/// Majority vote over the `k` nearest stored rows under Euclidean distance.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnClassifier {
    k: usize,
    points: Matrix,
    labels: Vec<usize>,
    class_count: usize,
}

/// Vote among `neighbors`; a tied vote goes to the class whose voters have
/// the smaller distance sum, then to the lower class index.
fn vote(neighbors: &[Neighbor], labels: &[usize], class_count: usize) -> usize {
    let mut votes = vec![0usize; class_count];
    let mut dist = vec![0.0f64; class_count];
    for n in neighbors {
        let c = labels[n.index];
        votes[c] += 1;
        dist[c] += n.distance.sqrt();
    }
    let mut best = 0;
    for c in 1..class_count {
        if votes[c] > votes[best] || (votes[c] == votes[best] && dist[c] < dist[best]) {
            best = c;
        }
    }
    best
}

impl KnnClassifier {
    pub fn new(points: Matrix, labels: Vec<usize>, class_count: usize, k: usize) -> Result<Self, BaselineError> {
        if points.rows() == 0 {
            return Err(BaselineError::EmptyTrainMask);
        }
        if k == 0 || k > points.rows() {
            return Err(BaselineError::InvalidK { k, available: points.rows() });
        }
        if labels.len() != points.rows() || labels.iter().any(|&l| l >= class_count) {
            return Err(BaselineError::InvalidParameter("labels do not match the stored points".into()));
        }
        Ok(Self { k, points, labels, class_count })
    }

    /// Stores the masked training rows of `dataset`.
    pub fn fit(dataset: &FingerprintDataset, k: usize) -> Result<Self, BaselineError> {
        let (points, labels) = training_rows(dataset)?;
        Self::new(points, labels, dataset.class_count(), k)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn predict(&self, queries: &Matrix) -> Result<Vec<usize>, BaselineError> {
        let found = knn_search(&self.points, queries, self.k)?;
        Ok(found.iter().map(|nn| vote(nn, &self.labels, self.class_count)).collect())
    }
}

/// Mean 5-fold accuracy of every candidate `k` on the masked training rows.
///
/// Each fold runs one neighbor search at the largest candidate and scores
/// every `k` on prefixes of the same lists. Candidates above the smallest
/// fold's training size are scored on all of its rows.
pub fn grid_search_k(
    dataset: &FingerprintDataset,
    candidates: &[usize],
    folds: usize,
    seed: u64,
) -> Result<GridTrace<usize>, BaselineError> {
    let mut candidates = candidates.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    if candidates.is_empty() || candidates[0] == 0 {
        return Err(BaselineError::InvalidParameter("k candidates must be non-empty and positive".into()));
    }
    let (points, labels) = training_rows(dataset)?;
    let mut warnings = Vec::new();
    let split = cv_folds(&labels, folds, seed, &mut warnings)?;
    let k_max = *candidates.last().expect("non-empty");
    let mut totals = vec![0.0; candidates.len()];
    for fold in &split {
        let train_x = points.select_rows(&fold.train);
        let train_y: Vec<usize> = fold.train.iter().map(|&i| labels[i]).collect();
        let val_x = points.select_rows(&fold.validation);
        let found = knn_search(&train_x, &val_x, k_max)?;
        for (slot, &k) in candidates.iter().enumerate() {
            let hits = found
                .iter()
                .zip(&fold.validation)
                .filter(|(nn, &i)| vote(&nn[..k.min(nn.len())], &train_y, dataset.class_count()) == labels[i])
                .count();
            totals[slot] += hits as f64 / fold.validation.len() as f64;
        }
    }
    let scores: Vec<f64> = totals.iter().map(|t| t / split.len() as f64).collect();
    let best = pick_best(&candidates, &scores);
    Ok(GridTrace { candidates, scores, best, folds_used: split.len(), warnings })
}
