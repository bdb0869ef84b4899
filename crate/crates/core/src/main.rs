use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use indoorgnn::dataset::{self, write_canonical};
use indoorgnn::harness::{
    self, evaluate_run, ingest_raw, load_source, read_results, read_run, Algorithm, DataSource, DatasetId, ExperimentConfig, HarnessError,
    ResultRow, DATA_DIR_ENV, DEFAULT_RATIOS, DEFAULT_SEEDS,
};

#[derive(Parser)]
#[command(name = "indoorgnn", version, about = "Region classification from WiFi RSSI fingerprints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a raw corpus and write its canonical fpv1 copy.
    Prepare(PrepareArgs),
    /// Train and evaluate a single (dataset, algorithm, ratio, seed) cell.
    Train(TrainArgs),
    /// Recompute the test accuracy of a finished run from its sidecar.
    Evaluate(EvaluateArgs),
    /// Run the grid of datasets, algorithms, ratios and seeds.
    Sweep(SweepArgs),
    /// Rebuild the table and plot-data files from a results file.
    Report(ReportArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding the corpora.
    #[arg(long, env = DATA_DIR_ENV, default_value = "data")]
    data_root: PathBuf,
    /// Seed of the MNAV 80:20 split and of `--subset` [default: 0].
    #[arg(long)]
    split_seed: Option<u64>,
    /// Keep only this stratified fraction of the dataset.
    #[arg(long)]
    subset: Option<f64>,
}

#[derive(Args)]
struct HyperArgs {
    /// Neighbor count for the kNN baseline and the IndoorGNN graphs.
    #[arg(long)]
    k: Option<usize>,
    /// IndoorGNN and MLP training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// IndoorGNN and MLP learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Epochs between graph rebuilds.
    #[arg(long)]
    refresh_period: Option<usize>,
    /// SVM box constraint; skips the C grid.
    #[arg(long)]
    c: Option<f64>,
    /// Train IndoorGNN on the training rows only.
    #[arg(long)]
    inductive: bool,
    /// Write the final IndoorGNN graphs as edge lists.
    #[arg(long)]
    dump_graphs: bool,
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    dataset: DatasetId,
    #[command(flatten)]
    data: DataArgs,
    /// Destination file; defaults to `<data-root>/<dataset>.fpv1`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: DatasetId,
    #[arg(long)]
    algo: Algorithm,
    #[arg(long, default_value_t = 1.0)]
    ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    hyper: HyperArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run sidecar (`<out>/runs/<id>.json`).
    #[arg(long)]
    run: PathBuf,
    /// Parameter file; defaults to the one recorded in the sidecar.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Repeatable; defaults to both corpora.
    #[arg(long)]
    dataset: Vec<DatasetId>,
    /// Repeatable; defaults to every algorithm.
    #[arg(long)]
    algo: Vec<Algorithm>,
    /// Repeatable; defaults to 0.2, 0.4, 0.6, 0.8 and 1.0.
    #[arg(long)]
    ratio: Vec<f64>,
    /// Repeatable; defaults to 0, 1 and 2.
    #[arg(long)]
    seed: Vec<u64>,
    #[command(flatten)]
    hyper: HyperArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, default_value = "out/results.csv")]
    results: PathBuf,
    /// Directory for table.csv and sweep.csv; defaults to the results directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn configure(
    datasets: Vec<DatasetId>,
    algorithms: Vec<Algorithm>,
    hyper: &HyperArgs,
    data: &DataArgs,
    out: &Path,
) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(datasets, algorithms, data.data_root.clone(), out.to_path_buf());
    cfg.subset = data.subset;
    cfg.mnav_split_seed = data.split_seed.unwrap_or(0);
    cfg.dump_graphs = hyper.dump_graphs;
    let h = &mut cfg.hyper;
    h.gnn_k = hyper.k;
    h.knn_k = hyper.k;
    h.svm_c = hyper.c;
    h.inductive = hyper.inductive;
    if let Some(e) = hyper.epochs {
        h.gnn_epochs = e;
        h.mlp.epochs = e;
    }
    if let Some(lr) = hyper.lr {
        h.gnn_lr = lr;
        h.mlp.adam.lr = lr;
    }
    if let Some(r) = hyper.refresh_period {
        h.refresh_period = r;
    }
    cfg
}

fn print_summary(summary: &harness::RunSummary) -> Result<(), HarnessError> {
    for run in &summary.runs {
        println!("{}\t{:.4}", run.run_id, run.accuracy);
    }
    match summary.failures.first() {
        None => Ok(()),
        Some((id, first)) => {
            let msg = format!("{} of {} runs failed; first: {id}: {first}", summary.failures.len(), summary.failures.len() + summary.runs.len());
            Err(match first {
                HarnessError::Usage(_) => HarnessError::Usage(msg),
                HarnessError::Data(_) => HarnessError::Data(msg),
                _ => HarnessError::Training(msg),
            })
        }
    }
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Prepare(a) => {
            let split_seed = a.data.split_seed.unwrap_or(0);
            let ds = ingest_raw(&a.dataset, &a.data.data_root, split_seed)?;
            let ds = match a.data.subset {
                Some(f) => dataset::stratified_subset(&ds, f, split_seed)?,
                None => ds,
            };
            let dest = a.out.unwrap_or_else(|| a.dataset.canonical_path(&a.data.data_root));
            if let Some(parent) = dest.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| HarnessError::Output { path: parent.to_path_buf(), source: e })?;
            }
            write_canonical(&ds, &dest).map_err(|e| match e {
                dataset::DatasetError::Io { source, .. } => HarnessError::Output { path: dest.clone(), source },
                other => other.into(),
            })?;
            println!("{}: {} points, {} classes -> {}", a.dataset, ds.point_count(), ds.class_count(), dest.display());
            Ok(())
        }
        Command::Train(a) => {
            let mut cfg = configure(vec![a.dataset], vec![a.algo], &a.hyper, &a.data, &a.out);
            cfg.ratios = vec![a.ratio];
            cfg.seeds = vec![a.seed];
            print_summary(&harness::run(&cfg)?)
        }
        Command::Sweep(a) => {
            let datasets = if a.dataset.is_empty() { vec![DatasetId::UjiIndoorLoc, DatasetId::Mnav] } else { a.dataset };
            let algos = if a.algo.is_empty() { Algorithm::ALL.to_vec() } else { a.algo };
            let mut cfg = configure(datasets, algos, &a.hyper, &a.data, &a.out);
            cfg.ratios = if a.ratio.is_empty() { DEFAULT_RATIOS.to_vec() } else { a.ratio };
            cfg.seeds = if a.seed.is_empty() { DEFAULT_SEEDS.to_vec() } else { a.seed };
            print_summary(&harness::run(&cfg)?)
        }
        Command::Evaluate(a) => {
            let run = read_run(&a.run)?;
            let source = DataSource {
                split_seed: a.data.split_seed.unwrap_or(run.source.split_seed),
                subset: a.data.subset.or(run.source.subset),
            };
            let ds = load_source(&run.dataset_id, &a.data.data_root, source)?;
            let checkpoint = a.checkpoint.or_else(|| {
                let out_dir = a.run.parent()?.parent()?;
                run.files.iter().find(|f| f.ends_with(".params")).map(|f| out_dir.join(f))
            });
            let acc = evaluate_run(&run, &ds, checkpoint.as_deref())?;
            println!("{}\t{acc:.4}\t(recorded {:.4})", run.run_id, run.accuracy);
            Ok(())
        }
        Command::Report(a) => {
            let rows: Vec<ResultRow> = read_results(&a.results)?;
            let out = a.out.unwrap_or_else(|| a.results.parent().map(Path::to_path_buf).unwrap_or_default());
            std::fs::create_dir_all(&out).map_err(|e| HarnessError::Output { path: out.clone(), source: e })?;
            harness::emit_table(&rows, &out.join("table.csv"))?;
            harness::emit_sweep(&rows, &out.join("sweep.csv"))?;
            print!("{}", harness::render_table(&rows));
            for check in harness::trend_checks(&rows) {
                println!("{} {}: {}", if check.passed { "ok" } else { "VIOLATED" }, check.name, check.detail);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
