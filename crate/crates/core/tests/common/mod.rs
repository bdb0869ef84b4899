//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use indoorgnn::autodiff::{Tape, Var};
use indoorgnn::dataset::FingerprintDataset;
use indoorgnn::knn::NeighborGraph;
use indoorgnn::matrix::Matrix;
use indoorgnn::model::{IndoorGnnModel, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// `|a − n| / max(|a|, |n|, 1e-6)`; the floor keeps entries whose gradient
/// is zero from dividing by zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error between the taped gradient of a scalar function
/// and its central difference with step `1e-5`.
pub fn gradient_error(input: &Matrix, build: impl Fn(&mut Tape, Var) -> Var) -> f64 {
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone(), true);
    let f = build(&mut tape, x);
    tape.backward(f).unwrap();
    let analytic = tape.grad(x).cloned().unwrap_or_else(|| Matrix::zeros(input.rows(), input.cols()));
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..input.as_slice().len() {
        let eval = |delta: f64| {
            let mut p = input.clone();
            p.as_mut_slice()[i] += delta;
            let mut t = Tape::new();
            let x = t.leaf(p, true);
            let f = build(&mut t, x);
            t.value(f)[(0, 0)]
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        worst = worst.max(relative_error(analytic.as_slice()[i], numeric));
    }
    worst
}

/// Worst gradient error over every differentiable op, each fed through a
/// scalar loss, for one random draw.
pub fn op_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_matrix(6, 4, &mut rng);
    let w = random_matrix(4, 3, &mut rng);
    let other = random_matrix(6, 4, &mut rng);
    let bias = random_matrix(1, 4, &mut rng);
    let proj = random_matrix(4, 3, &mut rng);
    let targets: Vec<usize> = (0..6).map(|_| rng.gen_range(0..3)).collect();
    let mask = [true, true, false, true, false, true];
    let seg = [0, 2, 1, 0, 2, 1];
    let ia = [0, 1, 1, 5, 3, 2, 4];
    let ib = [2, 0, 5, 5, 1, 3, 4];

    let ce = |t: &mut Tape, v: Var, targets: &[usize], mask: &[bool]| {
        let p = t.constant(proj.clone());
        let z = t.matmul(v, p).unwrap();
        t.softmax_cross_entropy(z, targets, mask).unwrap()
    };
    let mut worst = 0.0f64;
    let mut check = |input: &Matrix, build: &dyn Fn(&mut Tape, Var) -> Var| worst = worst.max(gradient_error(input, build));

    check(&x, &|t, v| {
        let w = t.constant(w.clone());
        let y = t.matmul(v, w).unwrap();
        t.softmax_cross_entropy(y, &targets, &mask).unwrap()
    });
    check(&w, &|t, v| {
        let xv = t.constant(x.clone());
        let y = t.matmul(xv, v).unwrap();
        t.softmax_cross_entropy(y, &targets, &mask).unwrap()
    });
    check(&x, &|t, v| {
        let b = t.constant(bias.clone());
        let y = t.add_bias(v, b).unwrap();
        ce(t, y, &targets, &mask)
    });
    check(&bias, &|t, v| {
        let xv = t.constant(x.clone());
        let y = t.add_bias(xv, v).unwrap();
        ce(t, y, &targets, &mask)
    });
    check(&x, &|t, v| {
        let o = t.constant(other.clone());
        let a = t.add(v, o).unwrap();
        let s = t.sub(a, v).unwrap();
        let s = t.add(s, v).unwrap();
        let s = t.sub(o, s).unwrap();
        ce(t, s, &targets, &mask)
    });
    check(&x, &|t, v| {
        let y = t.relu(v);
        ce(t, y, &targets, &mask)
    });
    check(&x, &|t, v| {
        let y = t.mul_const(v, (0..24).map(|i| 0.5 - i as f64 * 0.07).collect()).unwrap();
        ce(t, y, &targets, &mask)
    });
    check(&x, &|t, v| {
        let o = t.constant(other.clone());
        let c = t.concat_cols(v, o).unwrap();
        let s = t.sum(c);
        let r = t.relu(c);
        let y = t.mul_const(r, vec![0.1; 48]).unwrap();
        let y = t.sum(y);
        t.add(s, y).unwrap()
    });
    check(&x, &|t, v| {
        let g = t.gather_rows(v, &[5, 0, 0, 3, 2]).unwrap();
        ce(t, g, &[0, 1, 2, 0, 1], &[true; 5])
    });
    for agg in 0..3 {
        check(&x, &|t, v| {
            let s = match agg {
                0 => t.segment_mean(v, &seg, 3),
                1 => t.segment_sum(v, &seg, 3),
                _ => t.segment_max(v, &seg, 3),
            }
            .unwrap();
            ce(t, s, &[2, 0, 1], &[true, true, true])
        });
    }
    let fused = |t: &mut Tape, a: Var, b: Var, c: Var| {
        let y = t.gather_add_relu(a, &ia, b, &ib, c).unwrap();
        ce(t, y, &[0, 1, 2, 2, 1, 0, 0], &[true; 7])
    };
    check(&x, &|t, v| {
        let (o, b) = (t.constant(other.clone()), t.constant(bias.clone()));
        fused(t, v, o, b)
    });
    check(&other, &|t, v| {
        let (xv, b) = (t.constant(x.clone()), t.constant(bias.clone()));
        fused(t, xv, v, b)
    });
    check(&bias, &|t, v| {
        let (xv, o) = (t.constant(x.clone()), t.constant(other.clone()));
        fused(t, xv, o, v)
    });
    worst
}

/// Narrow configuration for toy-scale model checks.
pub fn toy_config(k: usize) -> ModelConfig {
    ModelConfig { k, block1_hidden: 8, block1_out: 6, block2_hidden: 8, block2_out: 5, ..ModelConfig::default() }
}

/// Signs of every ReLU pre-activation of the model, recomputed with plain
/// loops over the cached graphs (difference edge input, mean aggregation).
fn activation_pattern(model: &IndoorGnnModel, x: &Matrix) -> Vec<bool> {
    let store = model.store();
    let get = |name: &str| store.value(store.find(name).unwrap());
    let (g1, g2) = model.graphs().unwrap();
    let mut pattern = Vec::new();
    let mut h = x.clone();
    for (block, graph) in [("block1", g1), ("block2", g2)] {
        let (ws, wn, b1) = (get(&format!("{block}.edge1.w_self")), get(&format!("{block}.edge1.w_neigh")), get(&format!("{block}.edge1.bias")));
        let (w2, b2) = (get(&format!("{block}.edge2.weight")), get(&format!("{block}.edge2.bias")));
        let d = h.cols();
        let mut next = Matrix::zeros(h.rows(), w2.cols());
        for i in 0..h.rows() {
            let nbrs = graph.neighbors(i);
            for &j in nbrs {
                let hidden: Vec<f64> = (0..ws.cols())
                    .map(|u| {
                        let s = b1[(0, u)] + (0..d).map(|c| h[(i, c)] * ws[(c, u)] + (h[(j, c)] - h[(i, c)]) * wn[(c, u)]).sum::<f64>();
                        pattern.push(s > 0.0);
                        s.max(0.0)
                    })
                    .collect();
                for v in 0..w2.cols() {
                    let s = b2[(0, v)] + (0..hidden.len()).map(|u| hidden[u] * w2[(u, v)]).sum::<f64>();
                    pattern.push(s > 0.0);
                    next.row_mut(i)[v] += s.max(0.0) / nbrs.len() as f64;
                }
            }
        }
        h = next;
    }
    pattern
}

/// Composed-model gradient check outcome.
#[derive(Debug, Clone, Copy)]
pub struct ModelGradientCheck {
    /// Worst relative error over the entries where central differences apply.
    pub worst: f64,
    pub checked: usize,
    /// Entries whose `±h` evaluations fall on different sides of a ReLU kink.
    pub straddling: usize,
}

/// Compares the composed model's parameter gradients with central
/// differences (`h = 1e-5`) of its masked loss, the graphs held at their
/// values from the unperturbed pass. Entries where some ReLU pre-activation
/// changes sign between `θ − h` and `θ + h` are counted, not compared,
/// because the loss is not differentiable across that interval.
pub fn model_gradient_check(seed: u64, n: usize, m: usize, k: usize) -> ModelGradientCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = 3;
    let x = random_matrix(n, m, &mut rng);
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    let mask: Vec<bool> = (0..n).map(|i| i % 3 != 2).collect();
    let mut model = IndoorGnnModel::new(m, classes, &toy_config(k), seed).unwrap();
    // Nonzero biases keep zero-initialized units off the kink.
    for id in model.store().ids().collect::<Vec<_>>() {
        if model.store().get(id).name.ends_with("bias") {
            let b = model.store_mut().value_mut(id);
            b.as_mut_slice().iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
        }
    }
    model.loss_and_gradients(&x, &labels, &mask, true).unwrap();
    let ids: Vec<_> = model.store().ids().collect();
    let analytic: Vec<Matrix> = ids.iter().map(|&id| model.store().grad(id).clone()).collect();
    let h = 1e-5;
    let mut out = ModelGradientCheck { worst: 0.0, checked: 0, straddling: 0 };
    for (pi, &id) in ids.iter().enumerate() {
        for e in 0..model.store().value(id).as_slice().len() {
            let original = model.store().value(id).as_slice()[e];
            let mut eval = |delta: f64| {
                model.store_mut().value_mut(id).as_mut_slice()[e] = original + delta;
                let l = model.loss(&x, &labels, &mask, false).unwrap();
                let p = activation_pattern(&model, &x);
                model.store_mut().value_mut(id).as_mut_slice()[e] = original;
                (l, p)
            };
            let ((up, pu), (down, pd)) = (eval(h), eval(-h));
            if pu != pd {
                out.straddling += 1;
                continue;
            }
            out.checked += 1;
            out.worst = out.worst.max(relative_error(analytic[pi].as_slice()[e], (up - down) / (2.0 * h)));
        }
    }
    out
}

/// Exhaustive neighbor lists: self first, then the `min(k, n−1)` closest
/// other rows by squared distance, ties to the lower index.
pub fn brute_force_lists(x: &Matrix, k: usize) -> Vec<Vec<usize>> {
    let n = x.rows();
    (0..n)
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum(), j))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            std::iter::once(i).chain(others.into_iter().take(k.min(n - 1)).map(|(_, j)| j)).collect()
        })
        .collect()
}

/// Plain-loop edge convolution with difference edge input and mean
/// aggregation. `w1` is the full `2d × hidden` first-layer weight.
pub fn edgeconv_loop(x: &Matrix, graph: &NeighborGraph, w1: &Matrix, b1: &[f64], w2: &Matrix, b2: &[f64]) -> Matrix {
    let (n, d) = x.shape();
    let hidden = w1.cols();
    let out_w = w2.cols();
    let mut out = Matrix::zeros(n, out_w);
    for i in 0..n {
        let nbrs = graph.neighbors(i);
        for &j in nbrs {
            let e: Vec<f64> = (0..d).map(|c| x[(i, c)]).chain((0..d).map(|c| x[(j, c)] - x[(i, c)])).collect();
            let mut h = vec![0.0; hidden];
            for (u, hu) in h.iter_mut().enumerate() {
                let s: f64 = (0..2 * d).map(|r| e[r] * w1[(r, u)]).sum::<f64>() + b1[u];
                *hu = s.max(0.0);
            }
            for v in 0..out_w {
                let s: f64 = (0..hidden).map(|u| h[u] * w2[(u, v)]).sum::<f64>() + b2[v];
                out.row_mut(i)[v] += s.max(0.0) / nbrs.len() as f64;
            }
        }
    }
    out
}

pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    (-gamma * a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>()).exp()
}

/// Projects onto `{0 ≤ α ≤ C, yᵀα = 0}` by bisection on the multiplier of
/// the equality constraint.
fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |nu: f64| -> Vec<f64> { v.iter().zip(y).map(|(vi, yi)| (vi - nu * yi).clamp(0.0, c)).collect() };
    let residual = |a: &[f64]| a.iter().zip(y).map(|(a, y)| a * y).sum::<f64>();
    let span = v.iter().map(|x| x.abs()).fold(0.0, f64::max) + c + 1.0;
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(&at(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Maximizes the RBF dual by projected gradient ascent and returns its
/// objective value.
pub fn dual_qp_oracle(x: &Matrix, y: &[f64], c: f64, gamma: f64) -> f64 {
    let n = x.rows();
    let q: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| y[i] * y[j] * rbf(x.row(i), x.row(j), gamma)).collect()).collect();
    let objective = |a: &[f64]| {
        let quad: f64 = (0..n).map(|i| (0..n).map(|j| a[i] * q[i][j] * a[j]).sum::<f64>()).sum();
        a.iter().sum::<f64>() - 0.5 * quad
    };
    // Q's largest eigenvalue is at most n, so 1/n is a safe step.
    let step = 1.0 / n as f64;
    let mut alpha = vec![0.0; n];
    for _ in 0..20_000 {
        let grad: Vec<f64> = (0..n).map(|i| 1.0 - (0..n).map(|j| q[i][j] * alpha[j]).sum::<f64>()).collect();
        let next: Vec<f64> = alpha.iter().zip(&grad).map(|(a, g)| a + step * g).collect();
        alpha = project(&next, y, c);
    }
    objective(&alpha)
}

/// Well-separated Gaussian blobs in `[0, 104]`, one per class, split into
/// train and test rows.
pub fn blobs(classes: usize, per_class_train: usize, per_class_test: usize, dims: usize, seed: u64) -> FingerprintDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..classes).map(|_| (0..dims).map(|_| rng.gen_range(20.0..84.0)).collect()).collect();
    let mut make = |per: usize| {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..per * classes {
            let c = i % classes;
            rows.push(centers[c].iter().map(|m| (m + rng.gen_range(-4.0..4.0)).clamp(0.0, 104.0)).collect::<Vec<f64>>());
            labels.push(c);
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    };
    let (a, b) = make(per_class_train);
    let (c, d) = make(per_class_test);
    let vocab = (0..classes).map(|c| format!("R{c}")).collect();
    FingerprintDataset::from_split(a, b, c, d, vocab).unwrap()
}
