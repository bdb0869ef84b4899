use super::{
    labels_from_column, preprocess, split_random, synthesize_labels_uji, Corpus, DatasetError, FingerprintDataset, RawRecord,
    RSSI_SHIFT,
};

/// Held-out fraction of the MNAV corpus.
pub const MNAV_TEST_FRACTION: f64 = 0.2;

/// UJIIndoorLoc training rows followed by validation rows, the validation
/// file serving as the test set.
pub fn ujiindoorloc_dataset(train: &[RawRecord], test: &[RawRecord]) -> Result<FingerprintDataset, DatasetError> {
    let all: Vec<RawRecord> = train.iter().chain(test).cloned().collect();
    let (labels, vocab) = synthesize_labels_uji(&all)?;
    let features = preprocess(&all, Corpus::UjiIndoorLoc.sentinel(), RSSI_SHIFT)?;
    let n_train = train.len();
    let train_mask = (0..all.len()).map(|i| i < n_train).collect();
    let test_mask = (0..all.len()).map(|i| i >= n_train).collect();
    FingerprintDataset::new(features, labels, vocab, train_mask, test_mask)
}

/// MNAV records split at random into train and test portions, labels taken
/// from the `"region"` metadata key.
pub fn mnav_dataset(records: &[RawRecord], test_fraction: f64, seed: u64) -> Result<FingerprintDataset, DatasetError> {
    let (labels, vocab) = labels_from_column(records, "region")?;
    let features = preprocess(records, Corpus::Mnav.sentinel(), RSSI_SHIFT)?;
    let (train_idx, test_idx) = split_random(records.len(), test_fraction, seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<_>>();
    FingerprintDataset::from_split(
        features.select_rows(&train_idx),
        pick(&train_idx),
        features.select_rows(&test_idx),
        pick(&test_idx),
        vocab,
    )
}
