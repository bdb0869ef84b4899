use std::collections::BTreeSet;

use super::{DatasetError, RawRecord};

/// Builds region labels `B{BUILDINGID}-F{FLOOR}` for UJIIndoorLoc records.
///
/// Pass the training and test records together so the vocabulary covers both.
/// The vocabulary is sorted lexicographically.
pub fn synthesize_labels_uji(records: &[RawRecord]) -> Result<(Vec<usize>, Vec<String>), DatasetError> {
    let names = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let field = |key: &str| -> Result<i64, DatasetError> {
                let raw = r.metadata.get(key).ok_or_else(|| DatasetError::MissingColumn(key.to_string()))?;
                raw.parse::<i64>().map_err(|_| DatasetError::Parse {
                    row: i,
                    column: key.to_string(),
                    value: raw.clone(),
                })
            };
            Ok(format!("B{}-F{}", field("BUILDINGID")?, field("FLOOR")?))
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    Ok(index_labels(names))
}

/// Reads labels verbatim from a metadata column (e.g. `"region"` for MNAV).
pub fn labels_from_column(records: &[RawRecord], column: &str) -> Result<(Vec<usize>, Vec<String>), DatasetError> {
    let names = records
        .iter()
        .enumerate()
        .map(|(i, r)| match r.metadata.get(column) {
            Some(v) if !v.is_empty() => Ok(v.clone()),
            Some(_) => Err(DatasetError::EmptyLabel { row: i }),
            None => Err(DatasetError::MissingColumn(column.to_string())),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(index_labels(names))
}

fn index_labels(names: Vec<String>) -> (Vec<usize>, Vec<String>) {
    let vocab: Vec<String> = names.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let labels = names
        .iter()
        .map(|n| vocab.binary_search(n).expect("vocabulary built from these names"))
        .collect();
    (labels, vocab)
}
