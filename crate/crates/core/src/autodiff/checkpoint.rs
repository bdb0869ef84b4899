//! Text checkpoint of a [`ParamStore`].
//!
//! ```text
//! paramsv1
//! count <n>
//! param <name> <rows> <cols>
//! <rows*cols values, space separated, row-major>
//! ... (one param/values pair per parameter)
//! ```
//!
//! Values use the shortest round-trip scientific notation, so loading gives
//! back bit-identical values. Names may not contain whitespace. Gradients are
//! not stored.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{AutodiffError, ParamStore};
use crate::matrix::Matrix;

pub const CHECKPOINT_MAGIC: &str = "paramsv1";

pub fn write_checkpoint<W: Write>(store: &ParamStore, mut w: W) -> Result<(), AutodiffError> {
    let io = |e: std::io::Error| AutodiffError::Io(e.to_string());
    writeln!(w, "{CHECKPOINT_MAGIC}").map_err(io)?;
    writeln!(w, "count {}", store.len()).map_err(io)?;
    for p in store.iter() {
        if p.name.is_empty() || p.name.chars().any(char::is_whitespace) {
            return Err(AutodiffError::Io(format!("parameter name {:?} contains whitespace", p.name)));
        }
        writeln!(w, "param {} {} {}", p.name, p.value.rows(), p.value.cols()).map_err(io)?;
        let line: Vec<String> = p.value.as_slice().iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", line.join(" ")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<(), AutodiffError> {
    let f = fs::File::create(path).map_err(|e| AutodiffError::Io(format!("{}: {e}", path.display())))?;
    write_checkpoint(store, BufWriter::new(f))
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<ParamStore, AutodiffError> {
    let mut lines = BufReader::new(r).lines().enumerate();
    let mut next = || -> Result<(usize, String), AutodiffError> {
        match lines.next() {
            Some((i, Ok(l))) => Ok((i + 1, l)),
            Some((i, Err(e))) => Err(AutodiffError::Checkpoint { line: i + 1, message: e.to_string() }),
            None => Err(AutodiffError::Checkpoint { line: 0, message: "unexpected end of file".into() }),
        }
    };
    let bad = |line: usize, message: &str| AutodiffError::Checkpoint { line, message: message.to_string() };

    let (n, magic) = next()?;
    if magic.trim() != CHECKPOINT_MAGIC {
        return Err(bad(n, "not a paramsv1 checkpoint"));
    }
    let (n, count_line) = next()?;
    let count: usize = count_line
        .strip_prefix("count ")
        .and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| bad(n, "expected `count <n>`"))?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let (n, header) = next()?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let [tag, name, rows, cols] = parts[..] else {
            return Err(bad(n, "expected `param <name> <rows> <cols>`"));
        };
        let (Ok(rows), Ok(cols)) = (rows.parse::<usize>(), cols.parse::<usize>()) else {
            return Err(bad(n, "bad parameter shape"));
        };
        if tag != "param" {
            return Err(bad(n, "expected `param`"));
        }
        let (n, values) = next()?;
        let data = values
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad(n, "bad value"))?;
        let value = Matrix::from_vec(rows, cols, data).map_err(|e| bad(n, &e.to_string()))?;
        store.add(name, value);
    }
    Ok(store)
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore, AutodiffError> {
    let f = fs::File::open(path).map_err(|e| AutodiffError::Io(format!("{}: {e}", path.display())))?;
    read_checkpoint(f)
}
