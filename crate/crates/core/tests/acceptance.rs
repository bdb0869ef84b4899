//! Acceptance gate. Prints one status line per criterion and exits non-zero
//! when any criterion that could run failed.
//!
//! Criteria 8 to 12 need the corpora under `$INDOORGNN_DATA_DIR` (see the
//! README). Without them they report BLOCKED, which counts as a failure only
//! when `INDOORGNN_REQUIRE_DATA=1`. `INDOORGNN_FULL_SWEEP=1` additionally runs
//! the advisory UJIIndoorLoc ratio sweep.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use indoorgnn::autodiff::{step_adam, Adam, OptimizerState, ParamStore};
use indoorgnn::baselines::{dual_objective, training_rows, train_svm_ovr, SvmConfig};
use indoorgnn::dataset::{self, read_mnav, read_ujiindoorloc, stratified_subset, write_canonical, FingerprintDataset, MnavFormat};
use indoorgnn::harness::{
    self, data_root_from_env, load_dataset, run_cell, Algorithm, DataSource, DatasetId, ExperimentConfig, ExperimentRun, Hyperparameters,
    DEFAULT_RATIOS, DEFAULT_SEEDS, UJI_MAX_SPREAD,
};
use indoorgnn::knn::build_graph;
use indoorgnn::model::{EdgeConvBlock, EdgeInput, IndoorGnnModel, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{blobs, brute_force_lists, dual_qp_oracle, edgeconv_loop, model_gradient_check, op_gradient_error, random_matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Status {
    Pass,
    Blocked,
    Fail,
}

/// One checked part of a criterion.
struct Part {
    status: Status,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Part {
    Part { status: Status::Pass, detail: detail.into() }
}

fn fail(detail: impl Into<String>) -> Part {
    Part { status: Status::Fail, detail: detail.into() }
}

fn blocked(detail: impl Into<String>) -> Part {
    Part { status: Status::Blocked, detail: detail.into() }
}

fn check(ok: bool, detail: String) -> Part {
    if ok {
        pass(detail)
    } else {
        fail(detail)
    }
}

/// The worst part decides: any failure fails, otherwise any block blocks.
fn verdict(parts: &[Part]) -> Status {
    parts.iter().map(|p| p.status).max().unwrap_or(Status::Pass)
}

fn ac1() -> Vec<Part> {
    let started = Instant::now();
    let op_worst = (0..20).map(op_gradient_error).fold(0.0, f64::max);
    let (mut model_worst, mut checked, mut straddling) = (0.0f64, 0, 0);
    for seed in 0..20 {
        let c = model_gradient_check(seed, 30, 8, 3);
        model_worst = model_worst.max(c.worst);
        checked += c.checked;
        straddling += c.straddling;
    }
    let secs = started.elapsed().as_secs_f64();
    vec![
        check(op_worst < 1e-4, format!("ops: max rel err {op_worst:.2e} over 20 seeds")),
        check(
            model_worst < 1e-4 && straddling * 100 < checked,
            format!("model n=30 m=8 k=3: max rel err {model_worst:.2e} over {checked} entries, {straddling} excluded at ReLU kinks"),
        ),
        check(secs < 60.0, format!("{secs:.1}s")),
    ]
}

fn ac2() -> Vec<Part> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    let mut shape_errors = 0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=500);
        let d = rng.gen_range(1..=64);
        let k = rng.gen_range(1..=20);
        let mut x = random_matrix(n, d, &mut rng);
        if rng.gen_bool(0.2) && n > 1 {
            // Duplicated rows exercise the tie rule.
            let src = x.row(0).to_vec();
            x.row_mut(n - 1).copy_from_slice(&src);
        }
        let g = build_graph(&x, k).unwrap();
        if g.lists() != brute_force_lists(&x, k).as_slice() {
            mismatches += 1;
        }
        shape_errors += (0..n).filter(|&i| g.neighbors(i)[0] != i || g.neighbors(i).len() != k.min(n - 1) + 1).count();
    }
    vec![check(mismatches == 0 && shape_errors == 0, format!("200 instances: {mismatches} mismatched, {shape_errors} malformed lists"))]
}

fn uji_csv(rows: &[(Vec<f64>, usize, usize)]) -> String {
    let mut s: String = (1..=520).map(|i| format!("WAP{i:03},")).collect();
    s.push_str("LONGITUDE,LATITUDE,FLOOR,BUILDINGID,SPACEID,RELATIVEPOSITION,USERID,PHONEID,TIMESTAMP\n");
    for (rssi, building, floor) in rows {
        for ap in 0..520 {
            s.push_str(&format!("{},", rssi[ap % rssi.len()]));
        }
        s.push_str(&format!("-7600.0,4864900.0,{floor},{building},101,2,1,1,1371713733\n"));
    }
    s
}

fn ac3(uji: &Result<FingerprintDataset, String>, mnav: &Result<FingerprintDataset, String>) -> Vec<Part> {
    let floors = [(0, 4), (1, 4), (2, 5)];
    let mut rows = Vec::new();
    for (b, nf) in floors {
        for f in 0..nf {
            rows.push((vec![-104.0, 0.0, 100.0, -60.0], b, f));
        }
    }
    let records = read_ujiindoorloc(uji_csv(&rows).as_bytes()).unwrap();
    let ds = dataset::ujiindoorloc_dataset(&records, &records[..2]).unwrap();
    let r = ds.features().row(0);
    let uji_ok = r[0] == 0.0 && r[1] == 104.0 && r[2] == 0.0 && r[3] == 44.0;

    let mut csv: String = (1..=188).map(|i| format!("AP{i},")).collect();
    csv.push_str("region\n");
    for region in 0..16 {
        for rep in 0..3 {
            let vals: Vec<String> = (0..188).map(|ap| if ap == 0 { "-99".into() } else if ap == 1 { "0.0".into() } else { format!("{}", -50 - rep) }).collect();
            csv.push_str(&format!("{},region{region}\n", vals.join(",")));
        }
    }
    let mnav_records = read_mnav(csv.as_bytes(), &MnavFormat::default()).unwrap();
    let mds = dataset::mnav_dataset(&mnav_records, 0.2, 0).unwrap();
    let m = mds.features().row(0);
    let mnav_ok = m[0] == 5.0 && m[1] == 0.0 && m[2] > 0.0;

    let mut parts = vec![
        check(uji_ok, format!("UJI -104 -> {}, 0 -> {}, 100 -> {}", r[0], r[1], r[2])),
        check(mnav_ok, format!("MNAV -99 -> {}, 0.0 -> {}", m[0], m[1])),
        check(ds.class_count() == 13, format!("UJI label synthesis over the 13 building/floor pairs gives {} classes", ds.class_count())),
        check(mds.class_count() == 16, format!("16 MNAV regions give {} classes", mds.class_count())),
    ];
    for (name, loaded, expected) in [("ujiindoorloc", uji, 13), ("mnav", mnav, 16)] {
        parts.push(match loaded {
            Ok(d) => check(d.class_count() == expected, format!("{name} corpus: {} classes, {} points", d.class_count(), d.point_count())),
            Err(e) => blocked(format!("{name} corpus: {e}")),
        });
    }
    parts
}

fn ac4() -> Vec<Part> {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let n = rng.gen_range(1..=50);
        let d = rng.gen_range(1..=10);
        let k = rng.gen_range(1..=12);
        let (hidden, out) = (rng.gen_range(1..=12), rng.gen_range(1..=8));
        let x = random_matrix(n, d, &mut rng);
        let mut store = ParamStore::new();
        let block = EdgeConvBlock::new(&mut store, "b", d, hidden, out, k, EdgeInput::Difference, Default::default(), &mut rng);
        for id in store.ids().collect::<Vec<_>>() {
            let (r, c) = store.value(id).shape();
            *store.value_mut(id) = random_matrix(r, c, &mut rng);
        }
        let get = |name: &str| store.value(store.find(name).unwrap()).clone();
        let w1 = get("b.edge1.w_self").vstack(&get("b.edge1.w_neigh"));
        let graph = build_graph(&x, k).unwrap();
        let expected =
            edgeconv_loop(&x, &graph, &w1, get("b.edge1.bias").as_slice(), &get("b.edge2.weight"), get("b.edge2.bias").as_slice());
        let got = block.forward_values(&store, &x, &graph).unwrap();
        worst = got.as_slice().iter().zip(expected.as_slice()).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    vec![check(worst < 1e-10, format!("100 instances (n <= 50): max abs diff {worst:.2e}"))]
}

fn ac5() -> Vec<Part> {
    let seed = 17;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_matrix(50, 8, &mut rng);
    let labels: Vec<usize> = (0..50).map(|_| rng.gen_range(0..4)).collect();
    let mask: Vec<bool> = (0..50).map(|i| i % 5 != 0).collect();
    let config = ModelConfig { k: 5, ..ModelConfig::mnav() };
    let mut model = IndoorGnnModel::new(8, 4, &config, seed).unwrap();
    let mut state = OptimizerState::new(model.store());
    model.loss_and_gradients(&x, &labels, &mask, true).unwrap();
    step_adam(model.store_mut(), &mut state, &Adam::default());
    model.forward(&x, true).unwrap();
    let (g1, g2) = model.graphs().unwrap();
    let differing = (0..50).filter(|&i| g1.neighbors(i) != g2.neighbors(i)).count();
    vec![check(differing > 0, format!("seed {seed}: {differing} of 50 neighbor lists differ between the two graphs"))]
}

fn ac6() -> Vec<Part> {
    let mut worst_gap = 0.0f64;
    let mut worst_violation = 0.0f64;
    let mut machines = 0;
    let instances: Vec<FingerprintDataset> = (0..5).map(|s| blobs(2 + s as usize % 3, 20 / (2 + s as usize % 3), 2, 4, s)).collect();
    for ds in &instances {
        let config = SvmConfig { tolerance: 1e-6, ..SvmConfig::default() };
        let model = train_svm_ovr(ds, &config).unwrap();
        let (x, _) = training_rows(ds).unwrap();
        for m in &model.machines {
            machines += 1;
            worst_violation = worst_violation.max(m.feasibility_violation(model.c));
            let ours = dual_objective(&x, &m.y, &m.alpha, model.gamma);
            // One-sided machines carry no dual problem.
            if m.y.iter().all(|&y| y == m.y[0]) {
                continue;
            }
            let oracle = dual_qp_oracle(&x, &m.y, model.c, model.gamma);
            worst_gap = worst_gap.max((ours - oracle).abs());
        }
    }
    let big = blobs(5, 40, 5, 6, 9);
    let model = train_svm_ovr(&big, &SvmConfig::default()).unwrap();
    let big_violation = model.machines.iter().map(|m| m.feasibility_violation(model.c)).fold(0.0, f64::max);
    vec![
        check(worst_violation < 1e-6 && big_violation < 1e-6, format!("{} machines: max KKT feasibility violation {:.2e}", machines + 5, worst_violation.max(big_violation))),
        check(worst_gap < 1e-2, format!("20-point instances: max |dual - QP oracle| {worst_gap:.2e}")),
    ]
}

fn ac7(scratch: &Path) -> Vec<Part> {
    let data = scratch.join("determinism.fpv1");
    write_canonical(&blobs(4, 12, 6, 8, 7), &data).unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let mut cfg = ExperimentConfig::new(vec![DatasetId::Custom(data.clone())], Algorithm::ALL.to_vec(), scratch.to_path_buf(), scratch.join(run));
        cfg.ratios = vec![0.4, 1.0];
        cfg.seeds = vec![0, 1];
        cfg.hyper.gnn_epochs = 10;
        cfg.hyper.mlp.epochs = 10;
        cfg.hyper.svm_candidates = vec![0.1, 1.0, 10.0];
        let summary = harness::run(&cfg).unwrap();
        assert!(summary.failures.is_empty(), "{:?}", summary.failures);
        let files: Vec<Vec<u8>> =
            ["results.csv", "table.csv", "sweep.csv"].iter().map(|f| std::fs::read(scratch.join(run).join(f)).unwrap()).collect();
        outputs.push(files);
    }
    let same = outputs[0] == outputs[1];
    vec![check(same, format!("16 cells run twice: results, table and sweep files {}", if same { "bitwise identical" } else { "differ" }))]
}

type Criterion<'a> = Box<dyn FnOnce(&mut Runs) -> Vec<Part> + 'a>;

/// Corpus-scale runs shared by criteria 8 to 12.
struct Runs {
    out: PathBuf,
    uji: Result<FingerprintDataset, String>,
    mnav: Result<FingerprintDataset, String>,
    uji_subset: Option<FingerprintDataset>,
    done: BTreeMap<String, Result<ExperimentRun, String>>,
}

impl Runs {
    fn dataset(&self, which: &str) -> Result<(&FingerprintDataset, DatasetId), String> {
        match which {
            "ujiindoorloc" => self.uji.as_ref().map(|d| (d, DatasetId::UjiIndoorLoc)).map_err(|e| e.clone()),
            "mnav" => self.mnav.as_ref().map(|d| (d, DatasetId::Mnav)).map_err(|e| e.clone()),
            "uji25" => match &self.uji_subset {
                Some(d) => Ok((d, DatasetId::UjiIndoorLoc)),
                None => Err(self.uji.as_ref().err().cloned().unwrap_or_default()),
            },
            _ => unreachable!(),
        }
    }

    /// Runs (or reuses) a cell; `Err` carries a BLOCKED or failure message.
    fn get(&mut self, which: &str, algo: Algorithm, ratio: f64, seed: u64) -> Result<ExperimentRun, Part> {
        let key = format!("{which}-{}-r{ratio:?}-s{seed}", algo.id());
        if !self.done.contains_key(&key) {
            let (ds, id) = self.dataset(which).map_err(|e| blocked(format!("{which}: {e}")))?;
            let out = self.out.join(which);
            eprintln!("running {key}");
            let source = DataSource { split_seed: 0, subset: (which == "uji25").then_some(0.25) };
            let result = run_cell(ds, &id, algo, ratio, seed, &Hyperparameters::default(), source, &out, false)
                .map(|o| o.run)
                .map_err(|e| format!("{key}: {e}"));
            self.done.insert(key.clone(), result);
        }
        self.done[&key].clone().map_err(fail)
    }
}

/// Mean accuracy over the default seeds and the slowest training time.
fn seed_mean(runs: &mut Runs, which: &str, algo: Algorithm, ratio: f64) -> Result<(f64, f64), Part> {
    let mut accs = Vec::new();
    let mut slowest = 0.0f64;
    for seed in DEFAULT_SEEDS {
        let r = runs.get(which, algo, ratio, seed)?;
        accs.push(r.accuracy);
        slowest = slowest.max(r.timings.train_secs);
    }
    Ok((accs.iter().sum::<f64>() / accs.len() as f64, slowest))
}

/// Seed-mean accuracy within `target ± tol` on the full training set, with
/// an optional per-run training-time bound in seconds.
fn band(runs: &mut Runs, algo: Algorithm, which: &str, target: f64, tol: f64, max_secs: Option<f64>) -> Part {
    match seed_mean(runs, which, algo, 1.0) {
        Err(p) => p,
        Ok((acc, secs)) => check(
            (acc - target).abs() <= tol && max_secs.is_none_or(|m| secs <= m),
            format!("{which}: mean {acc:.4} over seeds 0-2 (target {target} ± {tol}), slowest run trained in {secs:.0}s"),
        ),
    }
}

fn ac8(runs: &mut Runs) -> Vec<Part> {
    vec![band(runs, Algorithm::Knn, "ujiindoorloc", 0.925, 0.015, None), band(runs, Algorithm::Knn, "mnav", 0.975, 0.015, None)]
}

fn ac9(runs: &mut Runs) -> Vec<Part> {
    let limit = Some(30.0 * 60.0);
    vec![band(runs, Algorithm::Mlp, "ujiindoorloc", 0.920, 0.025, limit), band(runs, Algorithm::Mlp, "mnav", 0.948, 0.025, limit)]
}

fn ac10(runs: &mut Runs) -> Vec<Part> {
    let limit = Some(2.0 * 3600.0);
    vec![band(runs, Algorithm::Svm, "ujiindoorloc", 0.945, 0.020, limit), band(runs, Algorithm::Svm, "mnav", 0.950, 0.020, limit)]
}

fn ac11(runs: &mut Runs) -> Vec<Part> {
    let mut parts = Vec::new();
    for (which, floor) in [("mnav", 0.955), ("ujiindoorloc", 0.930)] {
        match (seed_mean(runs, which, Algorithm::IndoorGnn, 1.0), seed_mean(runs, which, Algorithm::Mlp, 1.0)) {
            (Ok((g, _)), Ok((m, _))) => {
                parts.push(check(g >= floor, format!("{which}: IndoorGNN mean {g:.4} (floor {floor})")));
                parts.push(check(g >= m, format!("{which}: IndoorGNN {g:.4} vs MLP {m:.4}")));
            }
            (Err(p), _) | (_, Err(p)) => parts.push(p),
        }
    }
    match (seed_mean(runs, "uji25", Algorithm::IndoorGnn, 1.0), seed_mean(runs, "uji25", Algorithm::Knn, 1.0)) {
        (Ok((g, secs)), Ok((k, _))) => parts.push(check(
            g >= k - 0.01 && secs < 30.0 * 60.0,
            format!("25% UJI subset: IndoorGNN {g:.4} vs kNN {k:.4} (margin -0.01), slowest run trained in {secs:.0}s"),
        )),
        (Err(p), _) | (_, Err(p)) => parts.push(p),
    }
    parts
}

fn ac12(runs: &mut Runs) -> Vec<Part> {
    let mut parts = vec![match (seed_mean(runs, "mnav", Algorithm::IndoorGnn, 0.2), seed_mean(runs, "mnav", Algorithm::IndoorGnn, 1.0)) {
        (Ok((lo, _)), Ok((hi, _))) => check(hi - lo >= 0.01, format!("mnav IndoorGNN: r=0.2 {lo:.4}, r=1.0 {hi:.4} over seeds 0-2")),
        (Err(p), _) | (_, Err(p)) => p,
    }];
    // Advisory only: a wide spread is reported but does not fail the gate.
    if runs.uji.is_ok() && std::env::var("INDOORGNN_FULL_SWEEP").is_ok_and(|v| v == "1") {
        for algo in Algorithm::ALL {
            let accs: Result<Vec<f64>, Part> = DEFAULT_RATIOS.iter().map(|&r| runs.get("ujiindoorloc", algo, r, 0).map(|x| x.accuracy)).collect();
            match accs {
                Ok(a) => {
                    let spread = a.iter().copied().fold(f64::MIN, f64::max) - a.iter().copied().fold(f64::MAX, f64::min);
                    let note = format!("ujiindoorloc {}: spread {spread:.4} across ratios", algo.id());
                    if spread <= UJI_MAX_SPREAD {
                        parts.push(pass(note));
                    } else {
                        eprintln!("WARN {note} exceeds {UJI_MAX_SPREAD}");
                        parts.push(pass(format!("{note} (WARN: above {UJI_MAX_SPREAD})")));
                    }
                }
                Err(p) => eprintln!("WARN UJI spread check for {} not computed: {}", algo.id(), p.detail),
            }
        }
    }
    parts
}

fn load(id: DatasetId, root: &Path) -> Result<FingerprintDataset, String> {
    load_dataset(&id, root, 0).map_err(|e| {
        let missing: Vec<String> = id.expected_files(root).iter().filter(|p| !p.is_file()).map(|p| p.display().to_string()).collect();
        if missing.is_empty() {
            e.to_string().replace('\n', " ")
        } else {
            format!("missing {}", missing.join(", "))
        }
    })
}

fn main() -> ExitCode {
    let scratch = tempfile::tempdir().expect("temporary directory");
    let root = data_root_from_env();
    let uji = load(DatasetId::UjiIndoorLoc, &root);
    let mnav = load(DatasetId::Mnav, &root);
    let uji_subset = uji.as_ref().ok().map(|d| stratified_subset(d, 0.25, 0).expect("subset of a loaded corpus"));
    let out = std::env::var_os("INDOORGNN_ACCEPTANCE_OUT").map(PathBuf::from).unwrap_or_else(|| scratch.path().join("corpus-runs"));
    let mut runs = Runs { out, uji: uji.clone(), mnav: mnav.clone(), uji_subset, done: BTreeMap::new() };

    let criteria: Vec<(&str, &str, Criterion)> = vec![
        ("AC1", "gradient fidelity", Box::new(|_| ac1())),
        ("AC2", "kNN graph exactness", Box::new(|_| ac2())),
        ("AC3", "preprocessing exactness", Box::new(|r| ac3(&r.uji, &r.mnav))),
        ("AC4", "EdgeConv loop oracle", Box::new(|_| ac4())),
        ("AC5", "dynamic graph", Box::new(|_| ac5())),
        ("AC6", "SVM dual", Box::new(|_| ac6())),
        ("AC7", "determinism", Box::new(|_| ac7(scratch.path()))),
        ("AC8", "kNN baseline accuracy", Box::new(ac8)),
        ("AC9", "MLP baseline accuracy", Box::new(ac9)),
        ("AC10", "SVM baseline accuracy", Box::new(ac10)),
        ("AC11", "IndoorGNN accuracy", Box::new(ac11)),
        ("AC12", "restricted-data sweep", Box::new(ac12)),
    ];
    let mut statuses = Vec::new();
    for (id, name, run) in criteria {
        let started = Instant::now();
        let parts = run(&mut runs);
        let status = verdict(&parts);
        let label = match status {
            Status::Pass => "PASS",
            Status::Blocked => "BLOCKED",
            Status::Fail => "FAIL",
        };
        let details: Vec<&str> = parts.iter().map(|p| p.detail.as_str()).collect();
        println!("{id:<5} {label:<7} {name} [{:.1}s]: {}", started.elapsed().as_secs_f64(), details.join("; "));
        statuses.push(status);
    }
    let failed = statuses.iter().filter(|s| **s == Status::Fail).count();
    let blocked_count = statuses.iter().filter(|s| **s == Status::Blocked).count();
    let require_data = std::env::var("INDOORGNN_REQUIRE_DATA").is_ok_and(|v| v == "1");
    println!(
        "acceptance: {} passed, {failed} failed, {blocked_count} blocked (data root {})",
        statuses.len() - failed - blocked_count,
        root.display()
    );
    if failed > 0 || (require_data && blocked_count > 0) {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
