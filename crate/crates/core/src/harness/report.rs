use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::{Algorithm, ExperimentRun, HarnessError};

pub const RESULTS_HEADER: [&str; 9] =
    ["run_id", "dataset", "algorithm", "ratio", "seed", "train_points", "test_points", "realized_ratio", "accuracy"];

/// One line of the results table. Floats are written in their shortest
/// round-trip form with at least one decimal.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub run_id: String,
    pub dataset: String,
    pub algorithm: Algorithm,
    pub ratio: f64,
    pub seed: u64,
    pub train_points: usize,
    pub test_points: usize,
    pub realized_ratio: f64,
    pub accuracy: f64,
}

impl From<&ExperimentRun> for ResultRow {
    fn from(r: &ExperimentRun) -> Self {
        Self {
            run_id: r.run_id.clone(),
            dataset: r.dataset.clone(),
            algorithm: r.algorithm,
            ratio: r.ratio,
            seed: r.seed,
            train_points: r.train_points,
            test_points: r.test_points,
            realized_ratio: r.realized_ratio,
            accuracy: r.accuracy,
        }
    }
}

impl ResultRow {
    fn record(&self) -> [String; 9] {
        [
            self.run_id.clone(),
            self.dataset.clone(),
            self.algorithm.id().to_string(),
            format!("{:?}", self.ratio),
            self.seed.to_string(),
            self.train_points.to_string(),
            self.test_points.to_string(),
            format!("{:?}", self.realized_ratio),
            format!("{:?}", self.accuracy),
        ]
    }
}

/// Results file that is flushed after every appended row.
pub(crate) struct ResultsWriter {
    path: std::path::PathBuf,
    inner: csv::Writer<File>,
}

impl ResultsWriter {
    pub(crate) fn create(path: &Path) -> Result<Self, HarnessError> {
        let file = File::create(path).map_err(|e| HarnessError::output(path, e))?;
        let mut inner = csv::Writer::from_writer(file);
        inner.write_record(RESULTS_HEADER).map_err(|e| HarnessError::output(path, e.into()))?;
        inner.flush().map_err(|e| HarnessError::output(path, e))?;
        Ok(Self { path: path.to_path_buf(), inner })
    }

    pub(crate) fn append(&mut self, row: &ResultRow) -> Result<(), HarnessError> {
        self.inner.write_record(row.record()).map_err(|e| HarnessError::output(&self.path, e.into()))?;
        self.inner.flush().map_err(|e| HarnessError::output(&self.path, e))
    }
}

pub fn write_results(rows: &[ResultRow], path: &Path) -> Result<(), HarnessError> {
    let mut w = ResultsWriter::create(path)?;
    for r in rows {
        w.append(r)?;
    }
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, HarnessError> {
    let data = |msg: String| HarnessError::Data(format!("{}: {msg}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| data(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| data(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != RESULTS_HEADER {
        return Err(data(format!("unexpected header {:?}", headers)));
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| data(e.to_string()))?;
        let bad = |field: &str| data(format!("line {}: invalid {field}", line + 2));
        let num = |i: usize, field: &str| rec[i].parse::<f64>().map_err(|_| bad(field));
        rows.push(ResultRow {
            run_id: rec[0].to_string(),
            dataset: rec[1].to_string(),
            algorithm: rec[2].parse().map_err(|_| bad("algorithm"))?,
            ratio: num(3, "ratio")?,
            seed: rec[4].parse().map_err(|_| bad("seed"))?,
            train_points: rec[5].parse().map_err(|_| bad("train_points"))?,
            test_points: rec[6].parse().map_err(|_| bad("test_points"))?,
            realized_ratio: num(7, "realized_ratio")?,
            accuracy: num(8, "accuracy")?,
        });
    }
    Ok(rows)
}

/// Mean and sample standard deviation; the deviation is `None` for one value.
fn mean_stdev(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    let mut f = File::create(path).map_err(|e| HarnessError::output(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| HarnessError::output(path, e))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Accuracy per algorithm and dataset over the full-training-set runs
/// (`ratio == 1.0`), as `mean ± stdev` across seeds.
///
/// Algorithms come in the fixed order MLP, kNN, SVM, IndoorGNN and datasets
/// alphabetically. The last column lists the contributing run ids.
pub fn render_table(rows: &[ResultRow]) -> String {
    let full: Vec<&ResultRow> = rows.iter().filter(|r| r.ratio == 1.0).collect();
    let mut cells: BTreeMap<(Algorithm, &str), Vec<&ResultRow>> = BTreeMap::new();
    for r in &full {
        cells.entry((r.algorithm, r.dataset.as_str())).or_default().push(r);
    }
    let mut datasets: Vec<&str> = full.iter().map(|r| r.dataset.as_str()).collect();
    datasets.sort_unstable();
    datasets.dedup();
    let mut out = String::from("algorithm");
    for d in &datasets {
        out.push(',');
        out.push_str(&csv_field(d));
    }
    out.push_str(",run_ids\n");
    for alg in Algorithm::ALL {
        if !datasets.iter().any(|d| cells.contains_key(&(alg, *d))) {
            continue;
        }
        out.push_str(alg.display_name());
        let mut ids = Vec::new();
        for d in &datasets {
            out.push(',');
            if let Some(members) = cells.get(&(alg, *d)) {
                let acc: Vec<f64> = members.iter().map(|r| r.accuracy).collect();
                let (mean, sd) = mean_stdev(&acc);
                match sd {
                    Some(sd) => out.push_str(&format!("{mean:.4} ± {sd:.4}")),
                    None => out.push_str(&format!("{mean:.4}")),
                }
                ids.extend(members.iter().map(|r| r.run_id.as_str()));
            }
        }
        out.push(',');
        out.push_str(&csv_field(&ids.join(" ")));
        out.push('\n');
    }
    out
}

pub fn emit_table(rows: &[ResultRow], path: &Path) -> Result<(), HarnessError> {
    write_text(path, &render_table(rows))
}

/// One point of a train-ratio series.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub algorithm: Algorithm,
    pub dataset: String,
    pub ratio: f64,
    pub mean: f64,
    pub stdev: Option<f64>,
    pub run_ids: Vec<String>,
}

/// Series per (dataset, algorithm), each sorted by ratio ascending.
pub fn sweep_points(rows: &[ResultRow]) -> Vec<SweepPoint> {
    let mut groups: BTreeMap<(&str, Algorithm), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.dataset.as_str(), r.algorithm)).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((dataset, algorithm), members) in groups {
        let mut ratios: Vec<f64> = members.iter().map(|r| r.ratio).collect();
        ratios.sort_by(f64::total_cmp);
        ratios.dedup();
        for ratio in ratios {
            let at: Vec<&&ResultRow> = members.iter().filter(|r| r.ratio == ratio).collect();
            let acc: Vec<f64> = at.iter().map(|r| r.accuracy).collect();
            let (mean, stdev) = mean_stdev(&acc);
            out.push(SweepPoint {
                algorithm,
                dataset: dataset.to_string(),
                ratio,
                mean,
                stdev,
                run_ids: at.iter().map(|r| r.run_id.clone()).collect(),
            });
        }
    }
    out
}

pub fn render_sweep(rows: &[ResultRow]) -> String {
    let mut out = String::from("algorithm,dataset,ratio,mean_accuracy,stdev_accuracy,runs,run_ids\n");
    for p in sweep_points(rows) {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.algorithm.display_name(),
            csv_field(&p.dataset),
            format_args!("{:?}", p.ratio),
            format_args!("{:?}", p.mean),
            p.stdev.map(|s| format!("{s:?}")).unwrap_or_default(),
            p.run_ids.len(),
            csv_field(&p.run_ids.join(" "))
        ));
    }
    out
}

/// Plot data: one series per algorithm and dataset, ratio against accuracy.
pub fn emit_sweep(rows: &[ResultRow], path: &Path) -> Result<(), HarnessError> {
    write_text(path, &render_sweep(rows))
}

/// Outcome of an empirical expectation about the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Widest accuracy spread across train ratios tolerated on UJIIndoorLoc.
pub const UJI_MAX_SPREAD: f64 = 0.06;

/// Expected tendencies of the restricted-data sweep:
/// on MNAV, IndoorGNN at `r = 1.0` is not worse than at `r = 0.2`; on
/// UJIIndoorLoc every algorithm's accuracy varies by at most
/// [`UJI_MAX_SPREAD`] across ratios. Checks whose points are missing are
/// not reported.
pub fn trend_checks(rows: &[ResultRow]) -> Vec<TrendCheck> {
    let points = sweep_points(rows);
    let mut checks = Vec::new();
    let at = |dataset: &str, alg: Algorithm, ratio: f64| {
        points.iter().find(|p| p.dataset == dataset && p.algorithm == alg && p.ratio == ratio).map(|p| p.mean)
    };
    if let (Some(lo), Some(hi)) = (at("mnav", Algorithm::IndoorGnn, 0.2), at("mnav", Algorithm::IndoorGnn, 1.0)) {
        checks.push(TrendCheck {
            name: "mnav/indoorgnn accuracy at r=1.0 >= r=0.2".into(),
            passed: hi >= lo,
            detail: format!("r=0.2 {lo:.4}, r=1.0 {hi:.4}"),
        });
    }
    for alg in Algorithm::ALL {
        let series: Vec<f64> = points.iter().filter(|p| p.dataset == "ujiindoorloc" && p.algorithm == alg).map(|p| p.mean).collect();
        if series.len() < 2 {
            continue;
        }
        let spread = series.iter().copied().fold(f64::NEG_INFINITY, f64::max) - series.iter().copied().fold(f64::INFINITY, f64::min);
        checks.push(TrendCheck {
            name: format!("ujiindoorloc/{} spread across ratios <= {UJI_MAX_SPREAD}", alg.id()),
            passed: spread <= UJI_MAX_SPREAD,
            detail: format!("spread {spread:.4} over {} ratios", series.len()),
        });
    }
    checks
}
