use super::ParamStore;
use crate::matrix::Matrix;

/// Adaptive-moment hyperparameters. `weight_decay` adds `λ·w` to each gradient.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// First and second moment buffers, one per parameter, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<Matrix>,
    pub second_moment: Vec<Matrix>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|p| Matrix::zeros(p.value.rows(), p.value.cols())).collect();
        Self { first_moment: zeros(), second_moment: zeros(), step: 0 }
    }
}

/// One bias-corrected Adam update from the gradients currently in `store`.
pub fn step_adam(store: &mut ParamStore, state: &mut OptimizerState, cfg: &Adam) {
    assert_eq!(state.first_moment.len(), store.len(), "optimizer state built for another store");
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in store.params_mut().iter_mut().enumerate() {
        let m = state.first_moment[i].as_mut_slice();
        let v = state.second_moment[i].as_mut_slice();
        let w = p.value.as_mut_slice();
        for (j, &g) in p.grad.as_slice().iter().enumerate() {
            let g = g + cfg.weight_decay * w[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            w[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

/// Plain gradient descent: `w ← w − lr·g`.
pub fn step_sgd(store: &mut ParamStore, lr: f64) {
    for p in store.params_mut() {
        for (w, g) in p.value.as_mut_slice().iter_mut().zip(p.grad.as_slice()) {
            *w -= lr * g;
        }
    }
}
