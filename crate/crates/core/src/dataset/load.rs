use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use super::{DatasetError, RawRecord};

/// Number of access-point columns in the UJIIndoorLoc files.
pub const UJI_AP_COUNT: usize = 520;

fn open(path: &Path) -> Result<File, DatasetError> {
    File::open(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(reader)
}

fn parse_cell(cell: &str, row: usize, column: &str) -> Result<f64, DatasetError> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| DatasetError::Parse {
        row,
        column: column.to_string(),
        value: cell.to_string(),
    })
}

/// Loads the UJIIndoorLoc training and validation files.
///
/// Row numbers in errors are file line numbers, the header being line 1.
pub fn load_ujiindoorloc(
    train_path: &Path,
    test_path: &Path,
) -> Result<(Vec<RawRecord>, Vec<RawRecord>), DatasetError> {
    let train = read_ujiindoorloc(open(train_path)?)?;
    let test = read_ujiindoorloc(open(test_path)?)?;
    Ok((train, test))
}

/// Parses one UJIIndoorLoc CSV stream. Every `WAP001..WAP520` column plus
/// `FLOOR` and `BUILDINGID` must be present; all other columns land in
/// `metadata` as text.
pub fn read_ujiindoorloc<R: Read>(reader: R) -> Result<Vec<RawRecord>, DatasetError> {
    let mut rdr = csv_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let position = |name: &str| headers.iter().position(|h| h == name);

    let mut wap_cols = Vec::with_capacity(UJI_AP_COUNT);
    for ap in 1..=UJI_AP_COUNT {
        let name = format!("WAP{ap:03}");
        wap_cols.push(position(&name).ok_or(DatasetError::MissingColumn(name))?);
    }
    for required in ["FLOOR", "BUILDINGID"] {
        if position(required).is_none() {
            return Err(DatasetError::MissingColumn(required.to_string()));
        }
    }
    let mut is_wap = vec![false; headers.len()];
    for &c in &wap_cols {
        is_wap[c] = true;
    }

    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map_or(out.len() + 2, |p| p.line() as usize);
        if rec.len() != headers.len() {
            return Err(DatasetError::InconsistentWidth { row, expected: headers.len(), found: rec.len() });
        }
        let rssi_raw = wap_cols
            .iter()
            .map(|&c| parse_cell(&rec[c], row, &headers[c]))
            .collect::<Result<Vec<_>, _>>()?;
        let metadata = headers
            .iter()
            .zip(rec.iter())
            .zip(&is_wap)
            .filter(|(_, &w)| !w)
            .map(|((h, v), _)| (h.clone(), v.to_string()))
            .collect();
        out.push(RawRecord { rssi_raw, metadata });
    }
    Ok(out)
}

/// Column layout of an MNAV-style table: one region column, a set of
/// ignored metadata columns, and every other column read as an RSSI feature.
#[derive(Debug, Clone, PartialEq)]
pub struct MnavFormat {
    /// Region column name. `None` picks the first header matching
    /// [`MnavFormat::LABEL_CANDIDATES`] case-insensitively.
    pub label_column: Option<String>,
    /// Non-feature columns, matched case-insensitively.
    pub metadata_columns: Vec<String>,
    /// When set, labels outside this list are rejected.
    pub expected_labels: Option<Vec<String>>,
}

impl MnavFormat {
    pub const LABEL_CANDIDATES: [&'static str; 5] = ["region", "zone", "label", "location", "class"];
}

impl Default for MnavFormat {
    fn default() -> Self {
        let metadata = ["x", "y", "lat", "latitude", "lon", "lng", "longitude", "timestamp", "time", "id", "device", "user"];
        Self {
            label_column: None,
            metadata_columns: metadata.iter().map(|s| s.to_string()).collect(),
            expected_labels: None,
        }
    }
}

/// Loads an MNAV-style table; the region name is stored under the
/// `"region"` metadata key.
pub fn load_mnav(path: &Path, format: &MnavFormat) -> Result<Vec<RawRecord>, DatasetError> {
    read_mnav(open(path)?, format)
}

pub fn read_mnav<R: Read>(reader: R, format: &MnavFormat) -> Result<Vec<RawRecord>, DatasetError> {
    let mut rdr = csv_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let label_col = match &format.label_column {
        Some(name) => headers.iter().position(|h| h == name).ok_or_else(|| DatasetError::MissingColumn(name.clone()))?,
        None => MnavFormat::LABEL_CANDIDATES
            .iter()
            .find_map(|cand| headers.iter().position(|h| h.eq_ignore_ascii_case(cand)))
            .ok_or_else(|| DatasetError::MissingColumn(MnavFormat::LABEL_CANDIDATES.join("|")))?,
    };
    let is_meta = |h: &str| format.metadata_columns.iter().any(|m| m.eq_ignore_ascii_case(h));
    let feature_cols: Vec<usize> =
        (0..headers.len()).filter(|&c| c != label_col && !is_meta(&headers[c])).collect();
    if feature_cols.is_empty() {
        return Err(DatasetError::Invalid("no feature columns found".into()));
    }

    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map_or(out.len() + 2, |p| p.line() as usize);
        if rec.len() != headers.len() {
            return Err(DatasetError::InconsistentWidth { row, expected: headers.len(), found: rec.len() });
        }
        let label = rec[label_col].to_string();
        if label.is_empty() {
            return Err(DatasetError::EmptyLabel { row });
        }
        if let Some(allowed) = &format.expected_labels {
            if !allowed.contains(&label) {
                return Err(DatasetError::UnknownLabel(label));
            }
        }
        let rssi_raw = feature_cols
            .iter()
            .map(|&c| parse_cell(&rec[c], row, &headers[c]))
            .collect::<Result<Vec<_>, _>>()?;
        let mut metadata = BTreeMap::new();
        for (c, h) in headers.iter().enumerate() {
            if c != label_col && is_meta(h) {
                metadata.insert(h.clone(), rec[c].to_string());
            }
        }
        metadata.insert("region".to_string(), label);
        out.push(RawRecord { rssi_raw, metadata });
    }
    Ok(out)
}
