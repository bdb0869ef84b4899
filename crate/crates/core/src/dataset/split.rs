use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DatasetError, FingerprintDataset};

/// Seeded random train/test split of `n` items.
///
/// The test set has `round(n * test_fraction)` items, clamped so that neither
/// side is empty. Both index lists come back sorted.
pub fn split_random(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(test_fraction));
    }
    if n < 2 {
        return Err(DatasetError::TooFewPoints(n));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Result of [`apply_train_ratio`].
#[derive(Debug, Clone)]
pub struct RatioOutcome {
    pub dataset: FingerprintDataset,
    pub requested: f64,
    /// Kept fraction of the previously-masked training rows.
    pub realized: f64,
    pub kept: usize,
    pub warnings: Vec<String>,
}

/// Keeps a seeded, class-stratified fraction `ratio` of the masked training rows.
///
/// Per-class quotas use largest-remainder apportionment of
/// `round(ratio * n_train)`, so the realized ratio is within `1 / n_train` of
/// the request. A class that would lose all of its points keeps one, with a
/// warning. Test rows are untouched.
pub fn apply_train_ratio(dataset: &FingerprintDataset, ratio: f64, seed: u64) -> Result<RatioOutcome, DatasetError> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(DatasetError::InvalidRatio(ratio));
    }
    let counts = dataset.train_class_counts();
    let n_train: usize = counts.iter().sum();
    if n_train == 0 {
        return Err(DatasetError::Invalid("training mask is empty".into()));
    }
    if ratio == 1.0 {
        return Ok(RatioOutcome {
            dataset: dataset.clone(),
            requested: ratio,
            realized: 1.0,
            kept: n_train,
            warnings: vec![],
        });
    }

    let target = (ratio * n_train as f64).round() as usize;
    let exact: Vec<f64> = counts.iter().map(|&c| ratio * c as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut leftover = target.saturating_sub(quota.iter().sum());
    let mut by_remainder: Vec<usize> = (0..counts.len()).filter(|&c| quota[c] < counts[c]).collect();
    by_remainder.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for c in by_remainder {
        if leftover == 0 {
            break;
        }
        quota[c] += 1;
        leftover -= 1;
    }

    let mut warnings = Vec::new();
    for (c, q) in quota.iter_mut().enumerate() {
        if *q == 0 && counts[c] > 0 {
            *q = 1;
            warnings.push(format!(
                "train ratio {ratio} would empty class {:?}; keeping 1 of its {} points",
                dataset.label_vocab()[c],
                counts[c]
            ));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = vec![false; dataset.point_count()];
    for (c, &q) in quota.iter().enumerate() {
        let mut members: Vec<usize> = dataset
            .train_mask()
            .iter()
            .enumerate()
            .filter(|&(i, &m)| m && dataset.labels()[i] == c)
            .map(|(i, _)| i)
            .collect();
        members.shuffle(&mut rng);
        for &i in &members[..q] {
            mask[i] = true;
        }
    }
    let kept = mask.iter().filter(|&&m| m).count();
    Ok(RatioOutcome {
        dataset: dataset.with_train_mask(mask),
        requested: ratio,
        realized: kept as f64 / n_train as f64,
        kept,
        warnings,
    })
}

/// Seeded sample of `fraction` of the rows, drawn separately from every
/// (label, split) group so class balance and the train/test division survive.
/// Each non-empty group keeps at least one row. Masks carry over.
pub fn stratified_subset(dataset: &FingerprintDataset, fraction: f64, seed: u64) -> Result<FingerprintDataset, DatasetError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DatasetError::InvalidFraction(fraction));
    }
    let mut groups: std::collections::BTreeMap<(usize, bool), Vec<usize>> = Default::default();
    for i in 0..dataset.point_count() {
        groups.entry((dataset.labels()[i], dataset.test_mask()[i])).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for (_, mut members) in groups {
        let q = ((fraction * members.len() as f64).round() as usize).clamp(1, members.len());
        members.shuffle(&mut rng);
        keep.extend_from_slice(&members[..q]);
    }
    keep.sort_unstable();
    Ok(dataset.subset(&keep))
}
