use std::collections::HashMap;
use std::rc::Rc;

use super::{cv_folds, pick_best, training_rows, BaselineError, GridTrace};
use crate::autodiff::ParamStore;
use crate::dataset::FingerprintDataset;
use crate::matrix::Matrix;

pub const DEFAULT_C_CANDIDATES: [f64; 4] = [0.1, 1.0, 10.0, 100.0];

/// Curvature floor for working pairs with a non-positive second derivative.
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    /// `None` uses [`default_gamma`].
    pub gamma: Option<f64>,
    /// Stop once the maximal KKT violation falls below this.
    pub tolerance: f64,
    /// `None` allows `max(10⁷, 100·n)` pair updates per machine.
    pub max_iter: Option<usize>,
    /// Kernel row cache budget in MiB, shared by all machines of one fit.
    pub cache_mb: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self { c: 1.0, gamma: None, tolerance: 1e-3, max_iter: None, cache_mb: 512 }
    }
}

/// `1 / (m · var(x))` over every entry of `x`.
pub fn default_gamma(x: &Matrix) -> f64 {
    let vals = x.as_slice();
    if vals.is_empty() {
        return 1.0;
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
    if var > 0.0 {
        1.0 / (x.cols() as f64 * var)
    } else {
        1.0
    }
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d).exp()
}

/// Least-recently-used cache of RBF kernel rows over a fixed point set.
struct KernelCache<'a> {
    x: &'a Matrix,
    gamma: f64,
    rows: HashMap<usize, (Rc<[f64]>, u64)>,
    clock: u64,
    capacity: usize,
}

impl<'a> KernelCache<'a> {
    fn new(x: &'a Matrix, gamma: f64, cache_mb: usize) -> Self {
        let row_bytes = (x.rows() * std::mem::size_of::<f64>()).max(1);
        let capacity = (cache_mb * 1024 * 1024 / row_bytes).max(2);
        Self { x, gamma, rows: HashMap::new(), clock: 0, capacity }
    }

    fn row(&mut self, i: usize) -> Rc<[f64]> {
        self.clock += 1;
        if let Some(entry) = self.rows.get_mut(&i) {
            entry.1 = self.clock;
            return entry.0.clone();
        }
        if self.rows.len() >= self.capacity {
            let oldest = *self.rows.iter().min_by_key(|(_, (_, t))| *t).expect("cache is full").0;
            self.rows.remove(&oldest);
        }
        let xi = self.x.row(i);
        let row: Rc<[f64]> = self.x.iter_rows().map(|xt| rbf(xi, xt, self.gamma)).collect();
        self.rows.insert(i, (row.clone(), self.clock));
        row
    }
}

/// One binary machine separating a class from the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMachine {
    /// Dual variables over the training rows, `0 ≤ α ≤ C`.
    pub alpha: Vec<f64>,
    /// `±1` targets over the training rows.
    pub y: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl BinaryMachine {
    /// `max(max(-α), max(α - C), |Σ αᵢ yᵢ|)`, zero for a feasible point.
    pub fn feasibility_violation(&self, c: f64) -> f64 {
        let bound = self.alpha.iter().map(|&a| (-a).max(a - c)).fold(0.0f64, f64::max);
        let eq: f64 = self.alpha.iter().zip(&self.y).map(|(a, y)| a * y).sum();
        bound.max(eq.abs())
    }
}

/// `Σα − ½ Σᵢⱼ αᵢαⱼyᵢyⱼK(xᵢ, xⱼ)`, the maximized dual.
pub fn dual_objective(x: &Matrix, y: &[f64], alpha: &[f64], gamma: f64) -> f64 {
    let mut quad = 0.0;
    for i in 0..x.rows() {
        if alpha[i] == 0.0 {
            continue;
        }
        for j in 0..x.rows() {
            if alpha[j] != 0.0 {
                quad += alpha[i] * alpha[j] * y[i] * y[j] * rbf(x.row(i), x.row(j), gamma);
            }
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// SMO on `min ½αᵀQα − Σα` with `Q = yyᵀ ∘ K`, `0 ≤ α ≤ C`, `yᵀα = 0`.
///
/// The working pair is the maximal violator plus the partner with the best
/// second-order gain. Scans run in index order, so results are deterministic.
fn solve_binary(cache: &mut KernelCache, y: &[f64], c: f64, tol: f64, max_iter: usize) -> BinaryMachine {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;
    let mut iterations = 0;
    let mut converged = false;

    if y.iter().all(|&v| v > 0.0) || y.iter().all(|&v| v < 0.0) {
        // one-sided problem: the constraint pins α at zero
        let rho = -y[0];
        return BinaryMachine { alpha, y: y.to_vec(), rho, iterations, converged: true };
    }

    while iterations < max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            let v = -y[t] * grad[t];
            let in_up = if y[t] > 0.0 { !upper(alpha[t]) } else { !lower(alpha[t]) };
            if in_up && v >= gmax {
                gmax = v;
                i = t;
            }
        }
        if i == usize::MAX {
            converged = true;
            break;
        }
        let ki = cache.row(i);
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best_gain = f64::INFINITY;
        for t in 0..n {
            let in_low = if y[t] > 0.0 { !lower(alpha[t]) } else { !upper(alpha[t]) };
            if !in_low {
                continue;
            }
            let v = y[t] * grad[t];
            gmax2 = gmax2.max(v);
            let diff = gmax + v;
            if diff > 0.0 {
                let quad = 2.0 - 2.0 * ki[t];
                let gain = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                if gain <= best_gain {
                    best_gain = gain;
                    j = t;
                }
            }
        }
        if gmax + gmax2 < tol || j == usize::MAX {
            converged = true;
            break;
        }
        let kj = cache.row(j);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = y[i] * y[j] * ki[j];
        if y[i] != y[j] {
            let quad = (2.0 + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (2.0 - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
        iterations += 1;
    }
    if !converged {
        log::warn!("SMO stopped at the iteration cap ({max_iter}) before reaching tolerance {tol}");
    }

    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut free) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 { free_sum / free as f64 } else { (ub + lb) / 2.0 };
    BinaryMachine { alpha, y: y.to_vec(), rho, iterations, converged }
}

/// One-vs-rest RBF SVM.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub gamma: f64,
    pub c: f64,
    /// Union of the support vectors of every machine.
    pub support: Matrix,
    /// `classes × support` matrix of `αᵢyᵢ`.
    pub dual_coef: Matrix,
    pub rho: Vec<f64>,
    /// Full solver state per class; absent for models read from a checkpoint.
    pub machines: Vec<BinaryMachine>,
}

fn train_with_cache(cache: &mut KernelCache, labels: &[usize], class_count: usize, config: &SvmConfig) -> Result<SvmModel, BaselineError> {
    let x = cache.x;
    let n = x.rows();
    let max_iter = config.max_iter.unwrap_or_else(|| (100 * n).max(10_000_000));
    let machines: Vec<BinaryMachine> = (0..class_count)
        .map(|c| {
            let y: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
            solve_binary(cache, &y, config.c, config.tolerance, max_iter)
        })
        .collect();
    let support_idx: Vec<usize> = (0..n).filter(|&i| machines.iter().any(|m| m.alpha[i] > 0.0)).collect();
    let mut dual_coef = Matrix::zeros(class_count, support_idx.len());
    for (c, m) in machines.iter().enumerate() {
        for (s, &i) in support_idx.iter().enumerate() {
            dual_coef[(c, s)] = m.alpha[i] * m.y[i];
        }
    }
    Ok(SvmModel {
        gamma: cache.gamma,
        c: config.c,
        support: x.select_rows(&support_idx),
        dual_coef,
        rho: machines.iter().map(|m| m.rho).collect(),
        machines,
    })
}

fn check_config(config: &SvmConfig) -> Result<(), BaselineError> {
    if !(config.c > 0.0 && config.c.is_finite()) {
        return Err(BaselineError::InvalidParameter(format!("C = {} must be positive", config.c)));
    }
    if config.gamma.is_some_and(|g| !(g > 0.0 && g.is_finite())) {
        return Err(BaselineError::InvalidParameter("gamma must be positive".into()));
    }
    if config.tolerance.is_nan() || config.tolerance <= 0.0 {
        return Err(BaselineError::InvalidParameter("tolerance must be positive".into()));
    }
    Ok(())
}

/// Trains one machine per class on the masked training rows.
pub fn train_svm_ovr(dataset: &FingerprintDataset, config: &SvmConfig) -> Result<SvmModel, BaselineError> {
    check_config(config)?;
    let (x, labels) = training_rows(dataset)?;
    let gamma = config.gamma.unwrap_or_else(|| default_gamma(&x));
    let mut cache = KernelCache::new(&x, gamma, config.cache_mb);
    train_with_cache(&mut cache, &labels, dataset.class_count(), config)
}

impl SvmModel {
    pub fn class_count(&self) -> usize {
        self.rho.len()
    }

    /// `queries × classes` decision values.
    pub fn decision_function(&self, queries: &Matrix) -> Result<Matrix, BaselineError> {
        if queries.cols() != self.support.cols() && self.support.rows() > 0 {
            return Err(BaselineError::InvalidParameter(format!(
                "queries have {} columns, model expects {}",
                queries.cols(),
                self.support.cols()
            )));
        }
        let k = self.class_count();
        let mut out = Matrix::zeros(queries.rows(), k);
        for (q, row) in queries.iter_rows().enumerate() {
            let kern: Vec<f64> = self.support.iter_rows().map(|s| rbf(row, s, self.gamma)).collect();
            for c in 0..k {
                let coef = self.dual_coef.row(c);
                out[(q, c)] = coef.iter().zip(&kern).map(|(a, b)| a * b).sum::<f64>() - self.rho[c];
            }
        }
        Ok(out)
    }

    /// Class with the largest decision value, lowest index on ties.
    pub fn predict(&self, queries: &Matrix) -> Result<Vec<usize>, BaselineError> {
        Ok(crate::model::argmax_rows(&self.decision_function(queries)?))
    }

    /// Parameters as `svm.support`, `svm.dual_coef`, `svm.rho` and
    /// `svm.hyper` (`[gamma, C]`).
    pub fn to_store(&self) -> ParamStore {
        let mut store = ParamStore::new();
        store.add("svm.support", self.support.clone());
        store.add("svm.dual_coef", self.dual_coef.clone());
        store.add("svm.rho", Matrix::from_vec(1, self.rho.len(), self.rho.clone()).expect("sized"));
        store.add("svm.hyper", Matrix::from_rows(&[[self.gamma, self.c]]).expect("sized"));
        store
    }

    pub fn from_store(store: &ParamStore) -> Result<Self, BaselineError> {
        let get = |name: &str| {
            store
                .find(name)
                .map(|id| store.value(id).clone())
                .ok_or_else(|| BaselineError::Checkpoint(format!("missing {name}")))
        };
        let (support, dual_coef, rho, hyper) = (get("svm.support")?, get("svm.dual_coef")?, get("svm.rho")?, get("svm.hyper")?);
        if dual_coef.cols() != support.rows() || rho.rows() != 1 || rho.cols() != dual_coef.rows() || hyper.shape() != (1, 2) {
            return Err(BaselineError::Checkpoint("inconsistent SVM parameter shapes".into()));
        }
        Ok(Self { gamma: hyper[(0, 0)], c: hyper[(0, 1)], support, dual_coef, rho: rho.into_vec(), machines: vec![] })
    }
}

/// Mean 5-fold accuracy of every candidate `C`; ties go to the smaller `C`.
/// `gamma` is fixed from all masked training rows so every fold and
/// candidate shares one kernel, and one row cache per fold.
pub fn grid_search_c(
    dataset: &FingerprintDataset,
    candidates: &[f64],
    base: &SvmConfig,
    folds: usize,
    seed: u64,
) -> Result<GridTrace<f64>, BaselineError> {
    let mut candidates = candidates.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    if candidates.is_empty() {
        return Err(BaselineError::InvalidParameter("C candidates must be non-empty".into()));
    }
    for &c in &candidates {
        check_config(&SvmConfig { c, ..base.clone() })?;
    }
    let (x, labels) = training_rows(dataset)?;
    let gamma = base.gamma.unwrap_or_else(|| default_gamma(&x));
    let mut warnings = Vec::new();
    let split = cv_folds(&labels, folds, seed, &mut warnings)?;
    let mut totals = vec![0.0; candidates.len()];
    for fold in &split {
        let train_x = x.select_rows(&fold.train);
        let train_y: Vec<usize> = fold.train.iter().map(|&i| labels[i]).collect();
        let val_x = x.select_rows(&fold.validation);
        let mut cache = KernelCache::new(&train_x, gamma, base.cache_mb);
        for (slot, &c) in candidates.iter().enumerate() {
            let cfg = SvmConfig { c, gamma: Some(gamma), ..base.clone() };
            let model = train_with_cache(&mut cache, &train_y, dataset.class_count(), &cfg)?;
            let pred = model.predict(&val_x)?;
            let hits = pred.iter().zip(&fold.validation).filter(|(p, &i)| **p == labels[i]).count();
            totals[slot] += hits as f64 / fold.validation.len() as f64;
        }
    }
    let scores: Vec<f64> = totals.iter().map(|t| t / split.len() as f64).collect();
    let best = pick_best(&candidates, &scores);
    Ok(GridTrace { candidates, scores, best, folds_used: split.len(), warnings })
}
