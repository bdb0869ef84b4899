//! Experiment orchestration: dataset lookup, one run per
//! (dataset, algorithm, train ratio, seed) cell, and the result files.
//!
//! Every run gets an id such as `mnav-knn-r0.4-s2`. The id appears in the
//! results table, in the aggregated table and plot-data files, and names the
//! run's sidecar files under `<out>/runs/`.

mod cell;
mod report;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::baselines::{MlpConfig, DEFAULT_C_CANDIDATES, DEFAULT_K_CANDIDATES};
use crate::dataset::{self, DatasetError, FingerprintDataset, MnavFormat};

pub use cell::{evaluate_run, gnn_train_config, read_run, run_cell, run_id, CellOutcome, DataSource, ExperimentRun, Settings, Timings};
pub use report::{
    emit_sweep, emit_table, read_results, render_sweep, render_table, sweep_points, trend_checks, write_results, ResultRow, SweepPoint, TrendCheck,
    RESULTS_HEADER, UJI_MAX_SPREAD,
};

/// Environment variable naming the directory that holds the corpora.
pub const DATA_DIR_ENV: &str = "INDOORGNN_DATA_DIR";

pub const DEFAULT_RATIOS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];
pub const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Training(String),
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn category(&self) -> &'static str {
        match self {
            HarnessError::Usage(_) => "usage",
            HarnessError::Data(_) => "data",
            HarnessError::Training(_) => "training",
            HarnessError::Output { .. } => "output",
        }
    }

    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 2,
            HarnessError::Data(_) => 3,
            HarnessError::Training(_) => 4,
            HarnessError::Output { .. } => 5,
        }
    }

    pub(crate) fn output(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Output { path: path.to_path_buf(), source }
    }
}

impl From<DatasetError> for HarnessError {
    fn from(e: DatasetError) -> Self {
        HarnessError::Data(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum DatasetId {
    UjiIndoorLoc,
    Mnav,
    /// A canonical `fpv1` file.
    Custom(PathBuf),
}

impl DatasetId {
    /// Short name used in run ids and table headers.
    pub fn name(&self) -> String {
        match self {
            DatasetId::UjiIndoorLoc => "ujiindoorloc".into(),
            DatasetId::Mnav => "mnav".into(),
            DatasetId::Custom(p) => p.file_stem().map_or_else(|| "custom".into(), |s| s.to_string_lossy().into_owned()),
        }
    }

    /// Raw files read from the data root, in the order they are needed.
    pub fn expected_files(&self, root: &Path) -> Vec<PathBuf> {
        match self {
            DatasetId::UjiIndoorLoc => vec![
                root.join("ujiindoorloc").join("trainingData.csv"),
                root.join("ujiindoorloc").join("validationData.csv"),
            ],
            DatasetId::Mnav => vec![root.join("mnav").join("mnav.csv")],
            DatasetId::Custom(p) => vec![p.clone()],
        }
    }

    /// Where `prepare` writes the canonical copy inside the data root.
    pub fn canonical_path(&self, root: &Path) -> PathBuf {
        match self {
            DatasetId::Custom(p) => p.clone(),
            other => root.join(format!("{}.fpv1", other.name())),
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for DatasetId {
    type Err = HarnessError;

    /// `ujiindoorloc`, `mnav`, or a path to an `fpv1` file.
    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s.to_ascii_lowercase().as_str() {
            "ujiindoorloc" | "uji" => Ok(DatasetId::UjiIndoorLoc),
            "mnav" => Ok(DatasetId::Mnav),
            _ if s.ends_with(".fpv1") || s.contains(std::path::MAIN_SEPARATOR) => Ok(DatasetId::Custom(PathBuf::from(s))),
            _ => Err(HarnessError::Usage(format!(
                "unknown dataset {s:?}; expected ujiindoorloc, mnav or a path to an .fpv1 file"
            ))),
        }
    }
}

/// Algorithms in the row order of the results table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum Algorithm {
    Mlp,
    Knn,
    Svm,
    IndoorGnn,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Mlp, Algorithm::Knn, Algorithm::Svm, Algorithm::IndoorGnn];

    /// Lowercase identifier used on the command line and in run ids.
    pub fn id(self) -> &'static str {
        match self {
            Algorithm::Mlp => "mlp",
            Algorithm::Knn => "knn",
            Algorithm::Svm => "svm",
            Algorithm::IndoorGnn => "indoorgnn",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Algorithm::Mlp => "MLP",
            Algorithm::Knn => "kNN",
            Algorithm::Svm => "SVM",
            Algorithm::IndoorGnn => "IndoorGNN",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Algorithm {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.id().eq_ignore_ascii_case(s) || a.display_name().eq_ignore_ascii_case(s))
            .ok_or_else(|| HarnessError::Usage(format!("unknown algorithm {s:?}; expected one of indoorgnn, knn, mlp, svm")))
    }
}

/// Hyperparameters of every algorithm. `None` fields fall back to
/// per-dataset defaults or to the cross-validated grid.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Hyperparameters {
    /// Graph neighbors for IndoorGNN.
    pub gnn_k: Option<usize>,
    pub gnn_epochs: usize,
    pub gnn_lr: f64,
    pub refresh_period: usize,
    pub inductive: bool,
    /// Fixed kNN-baseline `k`; `None` runs the grid.
    pub knn_k: Option<usize>,
    pub knn_candidates: Vec<usize>,
    /// Fixed SVM `C`; `None` runs the grid.
    pub svm_c: Option<f64>,
    pub svm_candidates: Vec<f64>,
    pub svm_cache_mb: usize,
    pub mlp: MlpConfig,
    pub cv_folds: usize,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            gnn_k: None,
            gnn_epochs: 200,
            gnn_lr: 1e-3,
            refresh_period: 5,
            inductive: false,
            knn_k: None,
            knn_candidates: DEFAULT_K_CANDIDATES.to_vec(),
            svm_c: None,
            svm_candidates: DEFAULT_C_CANDIDATES.to_vec(),
            svm_cache_mb: 512,
            mlp: MlpConfig::default(),
            cv_folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExperimentConfig {
    pub datasets: Vec<DatasetId>,
    pub algorithms: Vec<Algorithm>,
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    pub hyper: Hyperparameters,
    /// Keep a stratified fraction of every dataset before anything else.
    pub subset: Option<f64>,
    /// Seed of the MNAV train/test split.
    pub mnav_split_seed: u64,
    pub data_root: PathBuf,
    pub output_dir: PathBuf,
    /// Write IndoorGNN's final kNN graphs as edge lists.
    pub dump_graphs: bool,
}

impl ExperimentConfig {
    pub fn new(datasets: Vec<DatasetId>, algorithms: Vec<Algorithm>, data_root: PathBuf, output_dir: PathBuf) -> Self {
        Self {
            datasets,
            algorithms,
            ratios: DEFAULT_RATIOS.to_vec(),
            seeds: DEFAULT_SEEDS.to_vec(),
            hyper: Hyperparameters::default(),
            subset: None,
            mnav_split_seed: 0,
            data_root,
            output_dir,
            dump_graphs: false,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.datasets.is_empty() || self.algorithms.is_empty() {
            return Err(HarnessError::Usage("at least one dataset and one algorithm are required".into()));
        }
        if let Some(r) = self.ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(HarnessError::Usage(format!("train ratio {r} must lie in (0, 1]")));
        }
        if self.ratios.is_empty() || self.seeds.is_empty() {
            return Err(HarnessError::Usage("ratios and seeds must be non-empty".into()));
        }
        if self.subset.is_some_and(|f| !(f > 0.0 && f <= 1.0)) {
            return Err(HarnessError::Usage("subset fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Cells in execution order: dataset, then algorithm, ratio and seed.
    pub fn cells(&self) -> Vec<(DatasetId, Algorithm, f64, u64)> {
        let mut algorithms = self.algorithms.clone();
        algorithms.sort();
        algorithms.dedup();
        let mut out = Vec::new();
        for d in &self.datasets {
            for &a in &algorithms {
                for &r in &self.ratios {
                    for &s in &self.seeds {
                        out.push((d.clone(), a, r, s));
                    }
                }
            }
        }
        out
    }
}

/// Data root from [`DATA_DIR_ENV`], defaulting to `./data`.
pub fn data_root_from_env() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"))
}

fn missing_files_message(id: &DatasetId, root: &Path, missing: &[PathBuf]) -> String {
    let mut msg = format!("dataset {id} is not available. Missing:\n");
    for p in missing {
        msg.push_str(&format!("  {}\n", p.display()));
    }
    match id {
        DatasetId::UjiIndoorLoc => msg.push_str(
            "Download the UJIIndoorLoc archive from the UCI Machine Learning Repository and place trainingData.csv \
             and validationData.csv in the directory above",
        ),
        DatasetId::Mnav => msg.push_str(
            "Fetch the MNAV fingerprint table from the posifi_mnav repository on GitHub and save it as mnav.csv \
             in the directory above",
        ),
        DatasetId::Custom(_) => msg.push_str("Create it with `indoorgnn prepare`"),
    }
    msg.push_str(&format!(" (data root {}; set {DATA_DIR_ENV} to change it).", root.display()));
    msg
}

/// Loads a dataset, preferring a prepared `fpv1` copy in the data root.
pub fn load_dataset(id: &DatasetId, root: &Path, mnav_split_seed: u64) -> Result<FingerprintDataset, HarnessError> {
    let canonical = id.canonical_path(root);
    if canonical.is_file() {
        log::info!("reading {}", canonical.display());
        return Ok(dataset::read_canonical(&canonical)?);
    }
    ingest_raw(id, root, mnav_split_seed)
}

/// Reads and preprocesses the raw corpus files, ignoring prepared copies.
pub fn ingest_raw(id: &DatasetId, root: &Path, mnav_split_seed: u64) -> Result<FingerprintDataset, HarnessError> {
    let files = id.expected_files(root);
    let missing: Vec<PathBuf> = files.iter().filter(|p| !p.is_file()).cloned().collect();
    if !missing.is_empty() {
        return Err(HarnessError::Data(missing_files_message(id, root, &missing)));
    }
    let ds = match id {
        DatasetId::UjiIndoorLoc => {
            let (train, test) = dataset::load_ujiindoorloc(&files[0], &files[1])?;
            dataset::ujiindoorloc_dataset(&train, &test)?
        }
        DatasetId::Mnav => {
            let records = dataset::load_mnav(&files[0], &MnavFormat::default())?;
            dataset::mnav_dataset(&records, dataset::MNAV_TEST_FRACTION, mnav_split_seed)?
        }
        DatasetId::Custom(p) => dataset::read_canonical(p)?,
    };
    log::info!(
        "{id}: {} points, {} access points, {} classes, {} train / {} test",
        ds.point_count(),
        ds.ap_count(),
        ds.class_count(),
        ds.train_indices().len(),
        ds.test_indices().len()
    );
    Ok(ds)
}

/// Results of [`run`]: completed runs and failed cells, both in cell order.
#[derive(Debug, Default)]
pub struct RunSummary {
    pub runs: Vec<ExperimentRun>,
    pub failures: Vec<(String, HarnessError)>,
}

/// Executes every cell of `config`, writing per-run sidecars and appending
/// each finished run to `<out>/results.csv`. A failing cell is logged and
/// skipped; datasets that cannot be loaded fail all their cells.
/// Loads a corpus and applies the recorded split seed and subset.
pub fn load_source(id: &DatasetId, data_root: &Path, source: DataSource) -> Result<FingerprintDataset, HarnessError> {
    let ds = load_dataset(id, data_root, source.split_seed)?;
    match source.subset {
        Some(f) => Ok(dataset::stratified_subset(&ds, f, source.split_seed)?),
        None => Ok(ds),
    }
}

pub fn run(config: &ExperimentConfig) -> Result<RunSummary, HarnessError> {
    config.validate()?;
    let out = &config.output_dir;
    std::fs::create_dir_all(out.join("runs")).map_err(|e| HarnessError::output(out, e))?;
    let results_path = out.join("results.csv");
    let mut results = report::ResultsWriter::create(&results_path)?;
    let mut summary = RunSummary::default();
    let cells = config.cells();
    let source = DataSource { split_seed: config.mnav_split_seed, subset: config.subset };
    let mut current: Option<(DatasetId, Result<FingerprintDataset, String>)> = None;
    for (dataset_id, algorithm, ratio, seed) in cells {
        if current.as_ref().map(|(d, _)| d) != Some(&dataset_id) {
            let loaded = load_source(&dataset_id, &config.data_root, source);
            current = Some((dataset_id.clone(), loaded.map_err(|e| e.to_string())));
        }
        let id = cell::run_id(&dataset_id, algorithm, ratio, seed);
        let ds = match &current.as_ref().expect("set above").1 {
            Ok(ds) => ds,
            Err(msg) => {
                log::error!("{id}: {msg}");
                summary.failures.push((id, HarnessError::Data(msg.clone())));
                continue;
            }
        };
        match run_cell(ds, &dataset_id, algorithm, ratio, seed, &config.hyper, source, out, config.dump_graphs) {
            Ok(outcome) => {
                log::info!("{id}: accuracy {:.4}", outcome.run.accuracy);
                results.append(&ResultRow::from(&outcome.run))?;
                summary.runs.push(outcome.run);
            }
            Err(e) => {
                log::error!("{id}: {e}");
                summary.failures.push((id, e));
            }
        }
    }
    let rows: Vec<ResultRow> = summary.runs.iter().map(ResultRow::from).collect();
    emit_table(&rows, &out.join("table.csv"))?;
    emit_sweep(&rows, &out.join("sweep.csv"))?;
    for check in trend_checks(&rows) {
        if check.passed {
            log::info!("trend check {}: ok ({})", check.name, check.detail);
        } else {
            log::warn!("trend check {} violated: {}", check.name, check.detail);
        }
    }
    Ok(summary)
}
