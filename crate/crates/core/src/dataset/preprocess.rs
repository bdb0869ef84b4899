use rayon::prelude::*;

use super::{DatasetError, RawRecord};
use crate::matrix::Matrix;

/// Offset added to every detected reading; also the upper bound of a
/// preprocessed feature.
pub const RSSI_SHIFT: f64 = 104.0;

/// Shifts detected readings by `shift` and maps the not-detected `sentinel` to 0.
///
/// Output rows follow input order. A shifted value outside `[0, 104]` is an
/// error naming the record and access point.
pub fn preprocess(records: &[RawRecord], sentinel: f64, shift: f64) -> Result<Matrix, DatasetError> {
    let m = records.first().map_or(0, |r| r.rssi_raw.len());
    if let Some((i, r)) = records.iter().enumerate().find(|(_, r)| r.rssi_raw.len() != m) {
        return Err(DatasetError::InconsistentWidth { row: i, expected: m, found: r.rssi_raw.len() });
    }
    let rows: Vec<Vec<f64>> = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            r.rssi_raw
                .iter()
                .enumerate()
                .map(|(ap, &raw)| {
                    if raw == sentinel {
                        return Ok(0.0);
                    }
                    let v = raw + shift;
                    if (0.0..=RSSI_SHIFT).contains(&v) {
                        Ok(v)
                    } else {
                        Err(DatasetError::OutOfRange { record: i, ap, value: v })
                    }
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let mut data = Vec::with_capacity(records.len() * m);
    rows.into_iter().for_each(|r| data.extend(r));
    Ok(Matrix::from_vec(records.len(), m, data).expect("row widths checked above"))
}

/// Rescales each access point column to `[0, 1]` using its min and max over
/// all rows. Constant columns become 0. Not part of the default pipeline.
pub fn normalize_min_max(features: &mut Matrix) {
    let (n, m) = features.shape();
    for c in 0..m {
        let (lo, hi) = (0..n).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            let v = features[(r, c)];
            (lo.min(v), hi.max(v))
        });
        let span = hi - lo;
        for r in 0..n {
            features[(r, c)] = if span > 0.0 { (features[(r, c)] - lo) / span } else { 0.0 };
        }
    }
}
