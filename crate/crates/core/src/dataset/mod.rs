//! Fingerprint ingestion, preprocessing, label synthesis and train/test views.
//!
//! Both supported corpora converge on [`FingerprintDataset`]: one feature matrix
//! holding every point (training rows first, then test rows), a label per row,
//! a sorted label vocabulary, and two masks. `test_mask` marks the evaluation
//! rows; `train_mask` marks the rows whose labels the learner may see. The two
//! never overlap, and rows that are in neither are training points withheld by
//! [`apply_train_ratio`].

mod assemble;
mod canonical;
mod labels;
mod load;
mod preprocess;
mod split;

use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

use crate::matrix::Matrix;

pub use assemble::{mnav_dataset, ujiindoorloc_dataset, MNAV_TEST_FRACTION};
pub use canonical::{read_canonical, write_canonical, CANONICAL_MAGIC};
pub use labels::{labels_from_column, synthesize_labels_uji};
pub use load::{load_mnav, load_ujiindoorloc, read_mnav, read_ujiindoorloc, MnavFormat};
pub use preprocess::{normalize_min_max, preprocess, RSSI_SHIFT};
pub use split::{apply_train_ratio, split_random, stratified_subset, RatioOutcome};

/// One fingerprint as read from a corpus file, before any transformation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub rssi_raw: Vec<f64>,
    pub metadata: BTreeMap<String, String>,
}

/// Corpus-specific conventions for raw RSSI values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Corpus {
    UjiIndoorLoc,
    Mnav,
}

impl Corpus {
    /// Raw code meaning "access point not detected".
    pub fn sentinel(self) -> f64 {
        match self {
            Corpus::UjiIndoorLoc => 100.0,
            Corpus::Mnav => 0.0,
        }
    }

    /// Weakest valid reading in dBm.
    pub fn min_dbm(self) -> f64 {
        match self {
            Corpus::UjiIndoorLoc => -104.0,
            Corpus::Mnav => -99.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Corpus::UjiIndoorLoc => "ujiindoorloc",
            Corpus::Mnav => "mnav",
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column {0}")]
    MissingColumn(String),
    #[error("row {row}, column {column}: cannot parse {value:?} as a number")]
    Parse { row: usize, column: String, value: String },
    #[error("row {row}: expected {expected} fields, found {found}")]
    InconsistentWidth { row: usize, expected: usize, found: usize },
    #[error("row {row}: empty region label")]
    EmptyLabel { row: usize },
    #[error("record {record}, access point {ap}: value {value} falls outside [0, 104] after shifting")]
    OutOfRange { record: usize, ap: usize, value: f64 },
    #[error("label {0:?} is not in the vocabulary")]
    UnknownLabel(String),
    #[error("need at least 2 points to split, got {0}")]
    TooFewPoints(usize),
    #[error("fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("train ratio {0} must lie in (0, 1]")]
    InvalidRatio(f64),
    #[error("inconsistent dataset: {0}")]
    Invalid(String),
    #[error("canonical file line {line}: {message}")]
    Canonical { line: usize, message: String },
}

/// Preprocessed corpus with labels and split metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintDataset {
    features: Matrix,
    labels: Vec<usize>,
    label_vocab: Vec<String>,
    train_mask: Vec<bool>,
    test_mask: Vec<bool>,
}

impl FingerprintDataset {
    /// Validates and assembles a dataset.
    ///
    /// Checks the value range of every feature, label bounds, mask lengths and
    /// that no row is both trainable and held out for testing.
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        label_vocab: Vec<String>,
        train_mask: Vec<bool>,
        test_mask: Vec<bool>,
    ) -> Result<Self, DatasetError> {
        let n = features.rows();
        if labels.len() != n || train_mask.len() != n || test_mask.len() != n {
            return Err(DatasetError::Invalid(format!(
                "{n} feature rows but {} labels, {} train-mask and {} test-mask entries",
                labels.len(),
                train_mask.len(),
                test_mask.len()
            )));
        }
        for (i, row) in features.iter_rows().enumerate() {
            if let Some((ap, &v)) =
                row.iter().enumerate().find(|(_, v)| !(0.0..=RSSI_SHIFT).contains(*v))
            {
                return Err(DatasetError::OutOfRange { record: i, ap, value: v });
            }
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= label_vocab.len()) {
            return Err(DatasetError::Invalid(format!(
                "label index {l} out of range for a vocabulary of {}",
                label_vocab.len()
            )));
        }
        if train_mask.iter().zip(&test_mask).any(|(&a, &b)| a && b) {
            return Err(DatasetError::Invalid("a row is marked both train and test".into()));
        }
        Ok(Self { features, labels, label_vocab, train_mask, test_mask })
    }

    /// Concatenates a training portion and a test portion into one transductive
    /// dataset with every training row unmasked.
    pub fn from_split(
        train_features: Matrix,
        train_labels: Vec<usize>,
        test_features: Matrix,
        test_labels: Vec<usize>,
        label_vocab: Vec<String>,
    ) -> Result<Self, DatasetError> {
        if train_features.cols() != test_features.cols() {
            return Err(DatasetError::Invalid(format!(
                "train has {} access points, test has {}",
                train_features.cols(),
                test_features.cols()
            )));
        }
        let n_train = train_features.rows();
        let n_test = test_features.rows();
        let features = train_features.vstack(&test_features);
        let mut labels = train_labels;
        labels.extend(test_labels);
        let train_mask = (0..n_train + n_test).map(|i| i < n_train).collect();
        let test_mask = (0..n_train + n_test).map(|i| i >= n_train).collect();
        Self::new(features, labels, label_vocab, train_mask, test_mask)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_vocab(&self) -> &[String] {
        &self.label_vocab
    }

    pub fn train_mask(&self) -> &[bool] {
        &self.train_mask
    }

    pub fn test_mask(&self) -> &[bool] {
        &self.test_mask
    }

    pub fn ap_count(&self) -> usize {
        self.features.cols()
    }

    pub fn point_count(&self) -> usize {
        self.features.rows()
    }

    pub fn class_count(&self) -> usize {
        self.label_vocab.len()
    }

    /// Rows of the training portion, masked or not.
    pub fn training_portion(&self) -> Vec<usize> {
        (0..self.point_count()).filter(|&i| !self.test_mask[i]).collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        indices_of(&self.train_mask)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        indices_of(&self.test_mask)
    }

    /// Per-class counts of masked training rows.
    pub fn train_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count()];
        for (i, &m) in self.train_mask.iter().enumerate() {
            if m {
                counts[self.labels[i]] += 1;
            }
        }
        counts
    }

    /// Same rows with replacement masks, validated like [`Self::new`].
    pub fn with_masks(&self, train_mask: Vec<bool>, test_mask: Vec<bool>) -> Result<Self, DatasetError> {
        Self::new(self.features.clone(), self.labels.clone(), self.label_vocab.clone(), train_mask, test_mask)
    }

    /// The listed rows, in order, with their masks. The vocabulary is kept.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            label_vocab: self.label_vocab.clone(),
            train_mask: rows.iter().map(|&i| self.train_mask[i]).collect(),
            test_mask: rows.iter().map(|&i| self.test_mask[i]).collect(),
        }
    }

    /// Features divided by [`RSSI_SHIFT`], mapping the shifted range onto `[0, 1]`.
    pub fn scaled_to_unit(&self) -> Self {
        let mut out = self.clone();
        out.features.as_mut_slice().iter_mut().for_each(|v| *v /= RSSI_SHIFT);
        out
    }

    pub(crate) fn with_train_mask(&self, train_mask: Vec<bool>) -> Self {
        debug_assert_eq!(train_mask.len(), self.point_count());
        Self { train_mask, ..self.clone() }
    }

    #[cfg(test)]
    pub(crate) fn features_mut(&mut self) -> &mut Matrix {
        &mut self.features
    }
}

fn indices_of(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect()
}
