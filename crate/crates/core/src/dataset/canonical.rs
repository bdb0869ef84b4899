//! The `fpv1` canonical fingerprint file.
//!
//! ```text
//! fpv1
//! ap_count,<m>
//! point_count,<n>
//! label_vocab,<name_0>,<name_1>,...
//! <f_1>,...,<f_m>,<label index>,<train|test>,<mask 0|1>     (n rows)
//! ```
//!
//! Feature values are written with Rust's shortest round-trip float format,
//! so a write/read cycle is lossless. Region names may not contain commas,
//! line breaks or be empty.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{DatasetError, FingerprintDataset};
use crate::matrix::Matrix;

pub const CANONICAL_MAGIC: &str = "fpv1";

pub fn write_canonical(dataset: &FingerprintDataset, path: &Path) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io { path: path.to_path_buf(), source };
    for name in dataset.label_vocab() {
        if name.is_empty() || name.contains([',', '\n', '\r']) {
            return Err(DatasetError::Invalid(format!("region name {name:?} cannot be stored in fpv1")));
        }
    }
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    write_to(dataset, &mut w).map_err(io)?;
    w.flush().map_err(io)
}

fn write_to<W: Write>(d: &FingerprintDataset, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "{CANONICAL_MAGIC}")?;
    writeln!(w, "ap_count,{}", d.ap_count())?;
    writeln!(w, "point_count,{}", d.point_count())?;
    write!(w, "label_vocab")?;
    for name in d.label_vocab() {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    let mut line = String::new();
    for (i, row) in d.features().iter_rows().enumerate() {
        line.clear();
        for v in row {
            line.push_str(&v.to_string());
            line.push(',');
        }
        let split = if d.test_mask()[i] { "test" } else { "train" };
        let mask = u8::from(d.train_mask()[i]);
        writeln!(w, "{line}{},{split},{mask}", d.labels()[i])?;
    }
    Ok(())
}

pub fn read_canonical(path: &Path) -> Result<FingerprintDataset, DatasetError> {
    let file = fs::File::open(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    let mut lines = BufReader::new(file).lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| -> Result<(usize, String), DatasetError> {
        match lines.next() {
            Some((n, Ok(l))) => Ok((n, l)),
            Some((n, Err(e))) => Err(DatasetError::Canonical { line: n, message: e.to_string() }),
            None => Err(DatasetError::Canonical { line: 0, message: format!("unexpected end of file, expected {what}") }),
        }
    };
    let bad = |line: usize, message: String| DatasetError::Canonical { line, message };

    let (n, magic) = next("header")?;
    if magic.trim_end() != CANONICAL_MAGIC {
        return Err(bad(n, format!("expected {CANONICAL_MAGIC:?}, found {magic:?}")));
    }
    let mut header_count = |key: &str| -> Result<usize, DatasetError> {
        let (n, l) = next(key)?;
        l.strip_prefix(key)
            .and_then(|r| r.strip_prefix(','))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad(n, format!("expected `{key},<count>`")))
    };
    let m = header_count("ap_count")?;
    let point_count = header_count("point_count")?;
    let (n, vocab_line) = next("label_vocab")?;
    let vocab: Vec<String> = vocab_line
        .strip_prefix("label_vocab")
        .ok_or_else(|| bad(n, "expected `label_vocab,...`".into()))?
        .split(',')
        .skip(1)
        .map(str::to_string)
        .collect();

    let mut data = Vec::with_capacity(point_count * m);
    let mut labels = Vec::with_capacity(point_count);
    let mut train_mask = Vec::with_capacity(point_count);
    let mut test_mask = Vec::with_capacity(point_count);
    for _ in 0..point_count {
        let (n, l) = next("data row")?;
        let fields: Vec<&str> = l.split(',').collect();
        if fields.len() != m + 3 {
            return Err(bad(n, format!("expected {} fields, found {}", m + 3, fields.len())));
        }
        for f in &fields[..m] {
            data.push(f.parse::<f64>().map_err(|_| bad(n, format!("bad feature value {f:?}")))?);
        }
        labels.push(fields[m].parse::<usize>().map_err(|_| bad(n, format!("bad label {:?}", fields[m])))?);
        test_mask.push(match fields[m + 1] {
            "train" => false,
            "test" => true,
            other => return Err(bad(n, format!("bad split {other:?}"))),
        });
        train_mask.push(match fields[m + 2] {
            "0" => false,
            "1" => true,
            other => return Err(bad(n, format!("bad mask bit {other:?}"))),
        });
    }
    if let Some((n, Ok(extra))) = lines.next() {
        if !extra.trim().is_empty() {
            return Err(bad(n, "trailing data after declared point_count".into()));
        }
    }
    let features = Matrix::from_vec(point_count, m, data).expect("row widths checked");
    FingerprintDataset::new(features, labels, vocab, train_mask, test_mask)
}
