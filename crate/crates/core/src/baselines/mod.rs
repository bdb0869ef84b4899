//! Comparison classifiers trained on the masked training rows of a
//! [`FingerprintDataset`]: k-nearest-neighbor vote, a feed-forward network
//! and a one-vs-rest RBF support vector machine, plus the cross-validated
//! grids that pick `k` and `C`.

mod knn_classifier;
mod mlp;
mod svm;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::dataset::FingerprintDataset;
use crate::knn::KnnError;
use crate::matrix::Matrix;

pub use knn_classifier::{grid_search_k, KnnClassifier, DEFAULT_K_CANDIDATES};
pub use mlp::{train_mlp, MlpConfig, MlpModel};
pub use svm::{default_gamma, dual_objective, grid_search_c, train_svm_ovr, BinaryMachine, SvmConfig, SvmModel, DEFAULT_C_CANDIDATES};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("training mask selects no rows")]
    EmptyTrainMask,
    #[error("k = {k} needs between 1 and {available} training rows")]
    InvalidK { k: usize, available: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("every cross-validation fold was skipped")]
    NoUsableFolds,
    #[error("loss became non-finite ({value}) at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, value: f64 },
    #[error("checkpoint does not describe this model: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Knn(#[from] KnnError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Masked training rows as a feature matrix and a label vector.
pub fn training_rows(dataset: &FingerprintDataset) -> Result<(Matrix, Vec<usize>), BaselineError> {
    let idx = dataset.train_indices();
    if idx.is_empty() {
        return Err(BaselineError::EmptyTrainMask);
    }
    let labels = idx.iter().map(|&i| dataset.labels()[i]).collect();
    Ok((dataset.features().select_rows(&idx), labels))
}

/// Fraction of `pred` equal to `truth`; `None` when empty.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Option<f64> {
    if truth.is_empty() {
        return None;
    }
    let hit = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Some(hit as f64 / truth.len() as f64)
}

/// Predictions for the test rows of `dataset` scored against their labels.
pub fn test_accuracy(dataset: &FingerprintDataset, predict: impl FnOnce(&Matrix) -> Result<Vec<usize>, BaselineError>) -> Result<f64, BaselineError> {
    let idx = dataset.test_indices();
    let pred = predict(&dataset.features().select_rows(&idx))?;
    let truth: Vec<usize> = idx.iter().map(|&i| dataset.labels()[i]).collect();
    accuracy(&pred, &truth).ok_or_else(|| BaselineError::InvalidParameter("dataset has no test rows".into()))
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Vec<usize> {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        for i in members {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    assignment
}

/// One cross-validation split.
#[derive(Debug, Clone)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Splits rows into `folds` stratified folds. A fold whose training part
/// lacks a class present in the data is dropped with a warning.
pub fn cv_folds(labels: &[usize], folds: usize, seed: u64, warnings: &mut Vec<String>) -> Result<Vec<Fold>, BaselineError> {
    if folds < 2 {
        return Err(BaselineError::InvalidParameter(format!("need at least 2 folds, got {folds}")));
    }
    let assignment = stratified_folds(labels, folds, seed);
    let present: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    let mut out = Vec::new();
    for f in 0..folds {
        let (train, validation): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| assignment[i] != f);
        let seen: std::collections::BTreeSet<usize> = train.iter().map(|&i| labels[i]).collect();
        if validation.is_empty() || seen != present {
            let msg = format!("cross-validation fold {f} skipped: its training part is missing a class");
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        out.push(Fold { index: f, train, validation });
    }
    if out.is_empty() {
        return Err(BaselineError::NoUsableFolds);
    }
    Ok(out)
}

/// Cross-validated scores for every candidate of a grid.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridTrace<T> {
    pub candidates: Vec<T>,
    /// Mean validation accuracy over the used folds, per candidate.
    pub scores: Vec<f64>,
    pub best: T,
    pub folds_used: usize,
    pub warnings: Vec<String>,
}

/// First candidate with the highest score, so ties go to the earlier one.
/// Candidates are expected in increasing order.
pub(crate) fn pick_best<T: Copy>(candidates: &[T], scores: &[f64]) -> T {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    candidates[best]
}
