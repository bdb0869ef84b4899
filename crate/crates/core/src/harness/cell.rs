use std::path::{Path, PathBuf};
use std::time::Instant;

use super::{Algorithm, DatasetId, HarnessError, Hyperparameters};
use crate::autodiff::{load_checkpoint, save_checkpoint, Adam, ParamStore};
use crate::baselines::{
    grid_search_c, grid_search_k, test_accuracy, train_mlp, train_svm_ovr, BaselineError, KnnClassifier, MlpConfig, MlpModel,
    SvmConfig, SvmModel,
};
use crate::dataset::{apply_train_ratio, FingerprintDataset};
use crate::model::{evaluate, fit, History, IndoorGnnModel, ModelConfig, ModelError, TrainConfig};

/// `<dataset>-<algorithm>-r<ratio>-s<seed>`.
pub fn run_id(dataset: &DatasetId, algorithm: Algorithm, ratio: f64, seed: u64) -> String {
    format!("{}-{}-r{ratio:?}-s{seed}", dataset.name(), algorithm.id())
}

/// Exact settings a run was trained with.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Settings {
    Knn { k: usize, folds: usize },
    Svm { config: SvmConfig, folds: usize },
    Mlp { config: MlpConfig },
    IndoorGnn { config: TrainConfig },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Timings {
    pub train_secs: f64,
    pub evaluate_secs: f64,
}

/// How the dataset was derived from its corpus, so a run can be reloaded.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DataSource {
    pub split_seed: u64,
    /// Stratified fraction kept, when the corpus was subsampled.
    pub subset: Option<f64>,
}

/// Everything recorded about one cell. Serialized as the run's JSON sidecar.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExperimentRun {
    pub run_id: String,
    pub dataset: String,
    pub dataset_id: DatasetId,
    pub algorithm: Algorithm,
    pub ratio: f64,
    pub seed: u64,
    pub realized_ratio: f64,
    pub source: DataSource,
    /// Feature columns of the loaded corpus.
    pub ap_count: usize,
    pub train_points: usize,
    pub test_points: usize,
    /// Masked training rows per class.
    pub class_counts: Vec<usize>,
    pub label_vocab: Vec<String>,
    pub ratio_warnings: Vec<String>,
    /// `"unit"` when features were divided by 104, else `"shifted"`.
    pub feature_scaling: String,
    pub accuracy: f64,
    pub settings: Settings,
    /// Cross-validation trace when a grid chose the hyperparameter.
    pub grid: Option<serde_json::Value>,
    pub history: Option<History>,
    pub timings: Timings,
    /// Files written for this run, relative to the output directory.
    pub files: Vec<String>,
}

/// A finished cell.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub run: ExperimentRun,
    /// Sidecar location.
    pub metadata_path: PathBuf,
}

fn training(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Training(e.to_string())
}

impl From<BaselineError> for HarnessError {
    fn from(e: BaselineError) -> Self {
        training(e)
    }
}

impl From<ModelError> for HarnessError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Dataset(d) => d.into(),
            other => training(other),
        }
    }
}

fn uses_unit_scale(algorithm: Algorithm) -> bool {
    matches!(algorithm, Algorithm::Mlp | Algorithm::IndoorGnn)
}

/// Model preset for a dataset; the preset with the narrower blocks goes to
/// MNAV and to custom data with at most 200 access points.
pub fn gnn_train_config(dataset: &DatasetId, ap_count: usize, hyper: &Hyperparameters, seed: u64) -> TrainConfig {
    let mut model = match dataset {
        DatasetId::Mnav => ModelConfig::mnav(),
        DatasetId::UjiIndoorLoc => ModelConfig::ujiindoorloc(),
        DatasetId::Custom(_) if ap_count <= 200 => ModelConfig::mnav(),
        DatasetId::Custom(_) => ModelConfig::ujiindoorloc(),
    };
    if let Some(k) = hyper.gnn_k {
        model.k = k;
    }
    TrainConfig {
        model,
        epochs: hyper.gnn_epochs,
        adam: Adam { lr: hyper.gnn_lr, ..Adam::default() },
        seed,
        refresh_period: hyper.refresh_period,
        eval_every: 1,
        inductive: hyper.inductive,
    }
}

fn relative(out: &Path, p: &Path) -> String {
    p.strip_prefix(out).unwrap_or(p).to_string_lossy().into_owned()
}

/// Trains and evaluates one (algorithm, ratio, seed) cell on `dataset`.
/// Writes `runs/<id>.json` and, where the algorithm has parameters,
/// `runs/<id>.params` below `out`.
#[allow(clippy::too_many_arguments)]
pub fn run_cell(
    dataset: &FingerprintDataset,
    dataset_id: &DatasetId,
    algorithm: Algorithm,
    ratio: f64,
    seed: u64,
    hyper: &Hyperparameters,
    source: DataSource,
    out: &Path,
    dump_graphs: bool,
) -> Result<CellOutcome, HarnessError> {
    let id = run_id(dataset_id, algorithm, ratio, seed);
    let runs_dir = out.join("runs");
    std::fs::create_dir_all(&runs_dir).map_err(|e| HarnessError::output(&runs_dir, e))?;
    let outcome = apply_train_ratio(dataset, ratio, seed)?;
    for w in &outcome.warnings {
        log::warn!("{id}: {w}");
    }
    let view = if uses_unit_scale(algorithm) { outcome.dataset.scaled_to_unit() } else { outcome.dataset.clone() };
    let checkpoint = runs_dir.join(format!("{id}.params"));
    let mut files = Vec::new();
    let mut grid = None;
    let mut history = None;
    let started = Instant::now();
    let eval_secs;

    let (accuracy, settings) = match algorithm {
        Algorithm::Knn => {
            let k = match hyper.knn_k {
                Some(k) => k,
                None => {
                    let trace = grid_search_k(&view, &hyper.knn_candidates, hyper.cv_folds, seed)?;
                    log::info!("{id}: grid chose k = {} (scores {:?})", trace.best, trace.scores);
                    let best = trace.best;
                    grid = Some(serde_json::to_value(&trace).expect("serializable"));
                    best
                }
            };
            let clf = KnnClassifier::fit(&view, k)?;
            let t = Instant::now();
            let acc = test_accuracy(&view, |q| clf.predict(q))?;
            eval_secs = t.elapsed().as_secs_f64();
            (acc, Settings::Knn { k, folds: hyper.cv_folds })
        }
        Algorithm::Svm => {
            let base = SvmConfig { cache_mb: hyper.svm_cache_mb, ..SvmConfig::default() };
            let c = match hyper.svm_c {
                Some(c) => c,
                None => {
                    let trace = grid_search_c(&view, &hyper.svm_candidates, &base, hyper.cv_folds, seed)?;
                    log::info!("{id}: grid chose C = {} (scores {:?})", trace.best, trace.scores);
                    let best = trace.best;
                    grid = Some(serde_json::to_value(&trace).expect("serializable"));
                    best
                }
            };
            let config = SvmConfig { c, ..base };
            let model = train_svm_ovr(&view, &config)?;
            let t = Instant::now();
            let acc = test_accuracy(&view, |q| model.predict(q))?;
            eval_secs = t.elapsed().as_secs_f64();
            save_checkpoint(&model.to_store(), &checkpoint).map_err(training)?;
            files.push(relative(out, &checkpoint));
            let config = SvmConfig { gamma: Some(model.gamma), ..config };
            (acc, Settings::Svm { config, folds: hyper.cv_folds })
        }
        Algorithm::Mlp => {
            let config = MlpConfig { seed, ..hyper.mlp.clone() };
            let (model, _losses) = train_mlp(&view, &config)?;
            let t = Instant::now();
            let acc = test_accuracy(&view, |q| model.predict(q))?;
            eval_secs = t.elapsed().as_secs_f64();
            save_checkpoint(model.store(), &checkpoint).map_err(training)?;
            files.push(relative(out, &checkpoint));
            (acc, Settings::Mlp { config })
        }
        Algorithm::IndoorGnn => {
            let config = gnn_train_config(dataset_id, view.ap_count(), hyper, seed);
            let mut model = IndoorGnnModel::new(view.ap_count(), view.class_count(), &config.model, seed)?;
            let h = fit(&mut model, &view, &config)?;
            let t = Instant::now();
            let acc = evaluate(&mut model, &view)?;
            eval_secs = t.elapsed().as_secs_f64();
            save_checkpoint(model.store(), &checkpoint).map_err(training)?;
            files.push(relative(out, &checkpoint));
            let history_path = runs_dir.join(format!("{id}.history.csv"));
            std::fs::write(&history_path, h.to_csv()).map_err(|e| HarnessError::output(&history_path, e))?;
            files.push(relative(out, &history_path));
            if dump_graphs {
                let (g1, g2) = model.graphs().expect("evaluate builds both graphs");
                for (name, g) in [("g1", g1), ("g2", g2)] {
                    let p = runs_dir.join(format!("{id}.{name}.edges"));
                    g.write_edge_list(&p).map_err(|e| HarnessError::output(&p, e))?;
                    files.push(relative(out, &p));
                }
            }
            history = Some(h);
            (acc, Settings::IndoorGnn { config })
        }
    };
    let total = started.elapsed().as_secs_f64();
    if !(0.0..=1.0).contains(&accuracy) {
        return Err(training(format!("{id}: accuracy {accuracy} outside [0, 1]")));
    }

    let metadata_path = runs_dir.join(format!("{id}.json"));
    files.push(relative(out, &metadata_path));
    let run = ExperimentRun {
        run_id: id,
        dataset: dataset_id.name(),
        dataset_id: dataset_id.clone(),
        algorithm,
        ratio,
        seed,
        realized_ratio: outcome.realized,
        source,
        ap_count: view.ap_count(),
        train_points: outcome.kept,
        test_points: view.test_indices().len(),
        class_counts: outcome.dataset.train_class_counts(),
        label_vocab: view.label_vocab().to_vec(),
        ratio_warnings: outcome.warnings.clone(),
        feature_scaling: if uses_unit_scale(algorithm) { "unit" } else { "shifted" }.into(),
        accuracy,
        settings,
        grid,
        history,
        timings: Timings { train_secs: total - eval_secs, evaluate_secs: eval_secs },
        files,
    };
    let json = serde_json::to_string_pretty(&run).expect("serializable");
    std::fs::write(&metadata_path, json).map_err(|e| HarnessError::output(&metadata_path, e))?;
    Ok(CellOutcome { run, metadata_path })
}

pub fn read_run(metadata_path: &Path) -> Result<ExperimentRun, HarnessError> {
    let text = std::fs::read_to_string(metadata_path)
        .map_err(|e| HarnessError::Data(format!("cannot read {}: {e}", metadata_path.display())))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Data(format!("{}: {e}", metadata_path.display())))
}

/// Recomputes a finished run's test accuracy from its sidecar and checkpoint.
///
/// The dataset must be the one the run was trained on; the train ratio is
/// reapplied with the recorded seed.
pub fn evaluate_run(run: &ExperimentRun, dataset: &FingerprintDataset, checkpoint: Option<&Path>) -> Result<f64, HarnessError> {
    let outcome = apply_train_ratio(dataset, run.ratio, run.seed)?;
    let view = if uses_unit_scale(run.algorithm) { outcome.dataset.scaled_to_unit() } else { outcome.dataset };
    let load = || -> Result<ParamStore, HarnessError> {
        let p = checkpoint.ok_or_else(|| HarnessError::Usage(format!("{} needs a checkpoint", run.run_id)))?;
        load_checkpoint(p).map_err(|e| HarnessError::Data(format!("{}: {e}", p.display())))
    };
    let acc = match &run.settings {
        Settings::Knn { k, .. } => {
            let clf = KnnClassifier::fit(&view, *k)?;
            test_accuracy(&view, |q| clf.predict(q))?
        }
        Settings::Svm { .. } => {
            let model = SvmModel::from_store(&load()?)?;
            test_accuracy(&view, |q| model.predict(q))?
        }
        Settings::Mlp { config } => {
            let model = MlpModel::from_store(view.ap_count(), &config.hidden, view.class_count(), load()?)?;
            test_accuracy(&view, |q| model.predict(q))?
        }
        Settings::IndoorGnn { config } => {
            let mut model = IndoorGnnModel::from_store(view.ap_count(), view.class_count(), &config.model, load()?)?;
            evaluate(&mut model, &view)?
        }
    };
    Ok(acc)
}
