use super::{AutodiffError, ParamId, ParamStore};
use crate::matrix::{gemm, Matrix, Op as GemmOp};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Relu(Var),
    ConcatCols(Var, Var),
    GatherRows(Var, Vec<usize>),
    SegmentMean { x: Var, ids: Vec<usize>, counts: Vec<usize> },
    SegmentSum { x: Var, ids: Vec<usize> },
    /// `argmax[s * d + c]` is the row that won segment `s` in column `c`.
    SegmentMax { x: Var, argmax: Vec<usize> },
    SoftmaxCrossEntropy { logits: Var, probs: Matrix, targets: Vec<usize>, rows: Vec<usize> },
    Sum(Var),
    MulConst(Var, Vec<f64>),
    GatherAddRelu { a: Var, ia: Vec<usize>, b: Var, ib: Vec<usize>, bias: Var },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    grad: Option<Matrix>,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of operations. Backward visits them in exact reverse order
/// and gradients of shared inputs add up.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bindings: Vec<(Var, ParamId)>,
    consumed: bool,
}

fn mismatch(op: &'static str, a: &Matrix, b: &Matrix) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, left: a.shape(), right: b.shape() }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an input. Gradients are kept for it only if `requires_grad`.
    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value, false)
    }

    /// Copies a parameter onto the tape as a gradient-tracking leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.leaf(store.value(id).clone(), true);
        self.bindings.push((v, id));
        v
    }

    pub(crate) fn bindings(&self) -> impl Iterator<Item = (Var, ParamId)> + '_ {
        self.bindings.iter().copied()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(mismatch("matmul", av, bv));
        }
        let out = av.matmul(bv);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `x + b` with the `1×d` bias `b` added to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, AutodiffError> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(mismatch("add_bias", xv, bv));
        }
        let mut out = xv.clone();
        out.add_row_vector(bv.as_slice());
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::AddBias(x, b), rg))
    }

    fn elementwise(&mut self, op: &'static str, a: Var, b: Var, sign: f64) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch(op, av, bv));
        }
        let mut out = av.clone();
        for (o, y) in out.as_mut_slice().iter_mut().zip(bv.as_slice()) {
            *o += sign * y;
        }
        let rg = self.rg(a) || self.rg(b);
        let node = if sign > 0.0 { Op::Add(a, b) } else { Op::Sub(a, b) };
        Ok(self.push(out, node, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise("add", a, b, 1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise("sub", a, b, -1.0)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    /// Elementwise product with a fixed buffer, e.g. a dropout mask.
    pub fn mul_const(&mut self, x: Var, factors: Vec<f64>) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        if factors.len() != xv.as_slice().len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "mul_const",
                left: xv.shape(),
                right: (factors.len(), 1),
            });
        }
        let mut out = xv.clone();
        out.as_mut_slice().iter_mut().zip(&factors).for_each(|(v, f)| *v *= f);
        let rg = self.rg(x);
        Ok(self.push(out, Op::MulConst(x, factors), rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(mismatch("concat_cols", av, bv));
        }
        let (n, d1, d2) = (av.rows(), av.cols(), bv.cols());
        let mut out = Matrix::zeros(n, d1 + d2);
        for r in 0..n {
            let row = out.row_mut(r);
            row[..d1].copy_from_slice(av.row(r));
            row[d1..].copy_from_slice(bv.row(r));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::ConcatCols(a, b), rg))
    }

    /// Rows of `x` in the order given by `idx`; repeats allowed.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.rows()) {
            return Err(AutodiffError::IndexOutOfRange { op: "gather_rows", index: bad, len: xv.rows() });
        }
        let out = xv.select_rows(idx);
        let rg = self.rg(x);
        Ok(self.push(out, Op::GatherRows(x, idx.to_vec()), rg))
    }

    /// `relu(a[ia] + b[ib] + bias)`: row `r` combines row `ia[r]` of `a` with
    /// row `ib[r]` of `b`. Only the output is stored, so a layer over many
    /// gathered rows costs one matrix instead of four.
    pub fn gather_add_relu(&mut self, a: Var, ia: &[usize], b: Var, ib: &[usize], bias: Var) -> Result<Var, AutodiffError> {
        let (av, bv, cv) = (self.value(a), self.value(b), self.value(bias));
        if av.cols() != bv.cols() {
            return Err(mismatch("gather_add_relu", av, bv));
        }
        if cv.rows() != 1 || cv.cols() != av.cols() {
            return Err(mismatch("gather_add_relu", av, cv));
        }
        if ia.len() != ib.len() {
            return Err(AutodiffError::ShapeMismatch { op: "gather_add_relu", left: (ia.len(), 1), right: (ib.len(), 1) });
        }
        for (idx, len) in [(ia, av.rows()), (ib, bv.rows())] {
            if let Some(&bad) = idx.iter().find(|&&i| i >= len) {
                return Err(AutodiffError::IndexOutOfRange { op: "gather_add_relu", index: bad, len });
            }
        }
        let d = av.cols();
        let mut out = Matrix::zeros(ia.len(), d);
        let c = cv.as_slice();
        for (r, (&i, &j)) in ia.iter().zip(ib).enumerate() {
            let (ra, rb) = (av.row(i), bv.row(j));
            for (col, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = (ra[col] + rb[col] + c[col]).max(0.0);
            }
        }
        let rg = self.rg(a) || self.rg(b) || self.rg(bias);
        Ok(self.push(out, Op::GatherAddRelu { a, ia: ia.to_vec(), b, ib: ib.to_vec(), bias }, rg))
    }

    fn check_segments(&self, op: &'static str, x: Var, ids: &[usize], n_segments: usize) -> Result<Vec<usize>, AutodiffError> {
        let xv = self.value(x);
        if ids.len() != xv.rows() {
            return Err(AutodiffError::ShapeMismatch { op, left: xv.shape(), right: (ids.len(), 1) });
        }
        let mut counts = vec![0usize; n_segments];
        for &s in ids {
            if s >= n_segments {
                return Err(AutodiffError::IndexOutOfRange { op, index: s, len: n_segments });
            }
            counts[s] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(AutodiffError::EmptySegment(empty));
        }
        Ok(counts)
    }

    fn segment_accumulate(&self, x: Var, ids: &[usize], n_segments: usize) -> Matrix {
        let xv = self.value(x);
        let mut out = Matrix::zeros(n_segments, xv.cols());
        for (r, &s) in ids.iter().enumerate() {
            for (o, v) in out.row_mut(s).iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        out
    }

    /// Row `s` of the output is the mean of the rows of `x` whose id is `s`.
    /// `ids` may be in any order; every segment must be non-empty.
    pub fn segment_mean(&mut self, x: Var, ids: &[usize], n_segments: usize) -> Result<Var, AutodiffError> {
        let counts = self.check_segments("segment_mean", x, ids, n_segments)?;
        let mut out = self.segment_accumulate(x, ids, n_segments);
        for (s, &c) in counts.iter().enumerate() {
            out.row_mut(s).iter_mut().for_each(|v| *v /= c as f64);
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::SegmentMean { x, ids: ids.to_vec(), counts }, rg))
    }

    pub fn segment_sum(&mut self, x: Var, ids: &[usize], n_segments: usize) -> Result<Var, AutodiffError> {
        self.check_segments("segment_sum", x, ids, n_segments)?;
        let out = self.segment_accumulate(x, ids, n_segments);
        let rg = self.rg(x);
        Ok(self.push(out, Op::SegmentSum { x, ids: ids.to_vec() }, rg))
    }

    /// Columnwise maximum per segment; ties go to the earliest row.
    pub fn segment_max(&mut self, x: Var, ids: &[usize], n_segments: usize) -> Result<Var, AutodiffError> {
        self.check_segments("segment_max", x, ids, n_segments)?;
        let xv = self.value(x);
        let d = xv.cols();
        let mut out = Matrix::from_vec(n_segments, d, vec![f64::NEG_INFINITY; n_segments * d]).expect("sized");
        let mut argmax = vec![usize::MAX; n_segments * d];
        for (r, &s) in ids.iter().enumerate() {
            for c in 0..d {
                let v = xv[(r, c)];
                if argmax[s * d + c] == usize::MAX || v > out[(s, c)] {
                    out[(s, c)] = v;
                    argmax[s * d + c] = r;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::SegmentMax { x, argmax }, rg))
    }

    /// Mean over rows with `mask[i]` of `-log softmax(logits_i)[targets[i]]`.
    /// Targets of unmasked rows are ignored.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var, AutodiffError> {
        let lv = self.value(logits);
        let (n, c) = lv.shape();
        if targets.len() != n || mask.len() != n {
            return Err(AutodiffError::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: lv.shape(),
                right: (targets.len(), mask.len()),
            });
        }
        let rows: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
        if rows.is_empty() {
            return Err(AutodiffError::EmptyMask);
        }
        if let Some(&r) = rows.iter().find(|&&r| targets[r] >= c) {
            return Err(AutodiffError::IndexOutOfRange { op: "softmax_cross_entropy", index: targets[r], len: c });
        }
        let probs = softmax_rows(lv);
        let mut total = 0.0;
        for &r in &rows {
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[targets[r]];
        }
        let loss = Matrix::from_vec(1, 1, vec![total / rows.len() as f64]).expect("1x1");
        let rg = self.rg(logits);
        Ok(self.push(loss, Op::SoftmaxCrossEntropy { logits, probs, targets: targets.to_vec(), rows }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).as_slice().iter().sum();
        let rg = self.rg(x);
        self.push(Matrix::from_vec(1, 1, vec![s]).expect("1x1"), Op::Sum(x), rg)
    }

    /// Reverse pass from the scalar `loss`. A tape supports one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::TapeConsumed);
        }
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(AutodiffError::NotScalar(shape));
        }
        self.consumed = true;
        if !self.rg(loss) {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Matrix::from_vec(1, 1, vec![1.0]).expect("1x1"));

        for i in (0..=loss.0).rev() {
            let Some(upstream) = self.nodes[i].grad.take() else { continue };
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            for (target, contrib) in local_grads(before, node, &upstream) {
                let t = &mut before[target.0];
                if !t.requires_grad {
                    continue;
                }
                match &mut t.grad {
                    Some(g) => g.as_mut_slice().iter_mut().zip(contrib.as_slice()).for_each(|(a, b)| *a += b),
                    None => t.grad = Some(contrib),
                }
            }
            // intermediate gradients are dropped as soon as they are propagated
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].grad = Some(upstream);
            }
        }
        Ok(())
    }
}

/// Gradient contributions of one node to its inputs.
fn local_grads(before: &[Node], node: &Node, up: &Matrix) -> Vec<(Var, Matrix)> {
    let val = |v: Var| &before[v.0].value;
    let wants = |v: Var| before[v.0].requires_grad;
    let mut out = Vec::with_capacity(2);
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul(a, b) => {
            let (av, bv) = (val(a), val(b));
            let (m, k, n) = (av.rows(), av.cols(), bv.cols());
            if wants(a) {
                let mut g = Matrix::zeros(m, k);
                gemm(GemmOp::N, GemmOp::T, m, n, k, up.as_slice(), bv.as_slice(), g.as_mut_slice(), 0.0);
                out.push((a, g));
            }
            if wants(b) {
                let mut g = Matrix::zeros(k, n);
                gemm(GemmOp::T, GemmOp::N, k, m, n, av.as_slice(), up.as_slice(), g.as_mut_slice(), 0.0);
                out.push((b, g));
            }
        }
        &Op::AddBias(x, b) => {
            if wants(b) {
                let mut g = Matrix::zeros(1, up.cols());
                for row in up.iter_rows() {
                    g.as_mut_slice().iter_mut().zip(row).for_each(|(a, v)| *a += v);
                }
                out.push((b, g));
            }
            if wants(x) {
                out.push((x, up.clone()));
            }
        }
        &Op::Add(a, b) => {
            for v in [a, b] {
                if wants(v) {
                    out.push((v, up.clone()));
                }
            }
        }
        &Op::Sub(a, b) => {
            if wants(a) {
                out.push((a, up.clone()));
            }
            if wants(b) {
                let mut g = up.clone();
                g.as_mut_slice().iter_mut().for_each(|v| *v = -*v);
                out.push((b, g));
            }
        }
        &Op::Relu(x) => {
            let mut g = up.clone();
            g.as_mut_slice().iter_mut().zip(val(x).as_slice()).for_each(|(g, &v)| {
                if v <= 0.0 {
                    *g = 0.0;
                }
            });
            out.push((x, g));
        }
        Op::MulConst(x, factors) => {
            let mut g = up.clone();
            g.as_mut_slice().iter_mut().zip(factors).for_each(|(g, f)| *g *= f);
            out.push((*x, g));
        }
        &Op::ConcatCols(a, b) => {
            let d1 = val(a).cols();
            let d2 = val(b).cols();
            let mut ga = Matrix::zeros(up.rows(), d1);
            let mut gb = Matrix::zeros(up.rows(), d2);
            for r in 0..up.rows() {
                ga.row_mut(r).copy_from_slice(&up.row(r)[..d1]);
                gb.row_mut(r).copy_from_slice(&up.row(r)[d1..]);
            }
            out.push((a, ga));
            out.push((b, gb));
        }
        Op::GatherRows(x, idx) => {
            if wants(*x) {
                let mut g = Matrix::zeros(val(*x).rows(), up.cols());
                for (r, &src) in idx.iter().enumerate() {
                    g.row_mut(src).iter_mut().zip(up.row(r)).for_each(|(a, v)| *a += v);
                }
                out.push((*x, g));
            }
        }
        Op::SegmentMean { x, ids, counts } => {
            let mut g = Matrix::zeros(ids.len(), up.cols());
            for (r, &s) in ids.iter().enumerate() {
                let share = 1.0 / counts[s] as f64;
                g.row_mut(r).iter_mut().zip(up.row(s)).for_each(|(a, v)| *a = v * share);
            }
            out.push((*x, g));
        }
        Op::SegmentSum { x, ids } => {
            let mut g = Matrix::zeros(ids.len(), up.cols());
            for (r, &s) in ids.iter().enumerate() {
                g.row_mut(r).copy_from_slice(up.row(s));
            }
            out.push((*x, g));
        }
        Op::SegmentMax { x, argmax } => {
            let xv = val(*x);
            let d = xv.cols();
            let mut g = Matrix::zeros(xv.rows(), d);
            for (slot, &r) in argmax.iter().enumerate() {
                let (s, c) = (slot / d, slot % d);
                g[(r, c)] += up[(s, c)];
            }
            out.push((*x, g));
        }
        Op::SoftmaxCrossEntropy { logits, probs, targets, rows } => {
            let scale = up[(0, 0)] / rows.len() as f64;
            let mut g = Matrix::zeros(probs.rows(), probs.cols());
            for &r in rows {
                let gr = g.row_mut(r);
                gr.copy_from_slice(probs.row(r));
                gr[targets[r]] -= 1.0;
                gr.iter_mut().for_each(|v| *v *= scale);
            }
            out.push((*logits, g));
        }
        Op::GatherAddRelu { a, ia, b, ib, bias } => {
            let d = up.cols();
            let mut ga = wants(*a).then(|| Matrix::zeros(val(*a).rows(), d));
            let mut gb = wants(*b).then(|| Matrix::zeros(val(*b).rows(), d));
            let mut gc = wants(*bias).then(|| Matrix::zeros(1, d));
            for r in 0..up.rows() {
                let (o, u) = (node.value.row(r), up.row(r));
                for col in 0..d {
                    if o[col] <= 0.0 {
                        continue;
                    }
                    if let Some(g) = ga.as_mut() {
                        g[(ia[r], col)] += u[col];
                    }
                    if let Some(g) = gb.as_mut() {
                        g[(ib[r], col)] += u[col];
                    }
                    if let Some(g) = gc.as_mut() {
                        g.as_mut_slice()[col] += u[col];
                    }
                }
            }
            out.extend(ga.map(|g| (*a, g)));
            out.extend(gb.map(|g| (*b, g)));
            out.extend(gc.map(|g| (*bias, g)));
        }
        &Op::Sum(x) => {
            let xv = val(x);
            let g = Matrix::from_vec(xv.rows(), xv.cols(), vec![up[(0, 0)]; xv.as_slice().len()]).expect("sized");
            out.push((x, g));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn random(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central-difference check of d f / d input for a closure building `f`
    /// on a fresh tape from a single leaf.
    fn check_grad(input: &Matrix, build: impl Fn(&mut Tape, Var) -> Var) {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone(), true);
        let f = build(&mut tape, x);
        tape.backward(f).unwrap();
        let analytic = tape.grad(x).cloned().unwrap_or_else(|| Matrix::zeros(input.rows(), input.cols()));
        let h = 1e-5;
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
            let a = analytic.as_slice()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-4, "entry {i}: analytic {a} vs numeric {numeric}");
        }
    }

    #[test]
    fn relu_forward_backward() {
        let mut t = Tape::new();
        let x = t.leaf(m(&[&[-1.0, 0.0, 2.0]]), true);
        let y = t.relu(x);
        assert_eq!(t.value(y).as_slice(), &[0.0, 0.0, 2.0]);
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn identity_matmul_gradient_is_ones() {
        let mut t = Tape::new();
        let i = t.constant(Matrix::identity(3));
        let a = t.leaf(m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]), true);
        let p = t.matmul(i, a).unwrap();
        assert_eq!(t.value(p), t.value(a));
        let s = t.sum(p);
        t.backward(s).unwrap();
        assert!(t.grad(a).unwrap().as_slice().iter().all(|&g| g == 1.0));
        assert!(t.grad(i).is_none());
    }

    #[test]
    fn gather_scatters_back() {
        let mut t = Tape::new();
        let x = t.leaf(m(&[&[1.0], &[2.0], &[3.0]]), true);
        let g = t.gather_rows(x, &[2, 0, 2]).unwrap();
        assert_eq!(t.value(g).as_slice(), &[3.0, 1.0, 3.0]);
        let w = t.constant(m(&[&[1.0], &[10.0], &[100.0]]));
        let prod = t.concat_cols(g, w).unwrap();
        let s = t.sum(prod);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().as_slice(), &[1.0, 0.0, 2.0]);
        assert!(matches!(t.backward(s), Err(AutodiffError::TapeConsumed)));
    }

    #[test]
    fn gather_rejects_bad_index() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::zeros(2, 1), true);
        assert!(matches!(t.gather_rows(x, &[2]), Err(AutodiffError::IndexOutOfRange { index: 2, len: 2, .. })));
    }

    #[test]
    fn square_has_gradient_six_at_three() {
        let mut t = Tape::new();
        let x = t.leaf(m(&[&[3.0]]), true);
        let y = t.matmul(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap()[(0, 0)], 6.0);
    }

    #[test]
    fn segment_mean_cases() {
        let mut t = Tape::new();
        let x = t.leaf(m(&[&[2.0], &[4.0]]), true);
        let y = t.segment_mean(x, &[0, 0], 1).unwrap();
        assert_eq!(t.value(y).as_slice(), &[3.0]);
        let singleton = t.segment_mean(x, &[1, 0], 2).unwrap();
        assert_eq!(t.value(singleton).as_slice(), &[4.0, 2.0]);
        assert!(matches!(t.segment_mean(x, &[0, 0], 2), Err(AutodiffError::EmptySegment(1))));
    }

    #[test]
    fn segment_mean_matches_direct_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(20, 3, &mut rng);
        let mut ids: Vec<usize> = (0..20).map(|_| rng.gen_range(0..6)).collect();
        ids[..6].copy_from_slice(&[0, 1, 2, 3, 4, 5]);
        let mut t = Tape::new();
        let xv = t.leaf(x.clone(), true);
        let y = t.segment_mean(xv, &ids, 6).unwrap();
        for s in 0..6 {
            let members: Vec<usize> = (0..20).filter(|&r| ids[r] == s).collect();
            for c in 0..3 {
                let avg = members.iter().map(|&r| x[(r, c)]).sum::<f64>() / members.len() as f64;
                assert!((t.value(y)[(s, c)] - avg).abs() < 1e-12);
            }
        }
        // members of one segment receive equal gradient shares
        let total = t.sum(y);
        t.backward(total).unwrap();
        let g = t.grad(xv).unwrap();
        for r in 0..20 {
            let size = ids.iter().filter(|&&s| s == ids[r]).count() as f64;
            assert!((g[(r, 0)] - 1.0 / size).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_values() {
        let mut t = Tape::new();
        let z = t.leaf(m(&[&[0.0, 0.0]]), true);
        let l = t.softmax_cross_entropy(z, &[0], &[true]).unwrap();
        assert!((t.value(l)[(0, 0)] - 2f64.ln()).abs() < 1e-15);
        let z = t.leaf(m(&[&[800.0, -800.0]]), true);
        let l = t.softmax_cross_entropy(z, &[0], &[true]).unwrap();
        assert!(t.value(l)[(0, 0)].abs() < 1e-300);
        assert!(matches!(t.softmax_cross_entropy(z, &[0], &[false]), Err(AutodiffError::EmptyMask)));
        assert!(t.softmax_cross_entropy(z, &[2], &[true]).is_err());
        // unmasked targets are not validated
        let z = t.leaf(m(&[&[1.0, 0.0], &[0.0, 1.0]]), true);
        assert!(t.softmax_cross_entropy(z, &[0, usize::MAX], &[true, false]).is_ok());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut z = random(50, 7, &mut rng);
        z.as_mut_slice().iter_mut().for_each(|v| *v *= 40.0);
        let p = softmax_rows(&z);
        for row in p.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::zeros(2, 3), true);
        let b = t.leaf(Matrix::zeros(2, 3), true);
        let err = t.matmul(a, b).unwrap_err();
        assert_eq!(err, AutodiffError::ShapeMismatch { op: "matmul", left: (2, 3), right: (2, 3) });
        assert!(err.to_string().contains("(2, 3) and (2, 3)"));
        let c = t.leaf(Matrix::zeros(3, 3), true);
        assert!(t.concat_cols(a, c).is_err());
        assert!(t.add(a, c).is_err());
        assert!(t.add_bias(a, b).is_err());
        assert!(matches!(t.backward(a), Err(AutodiffError::NotScalar((2, 3)))));
    }

    #[test]
    fn finite_difference_every_op() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(5, 3, &mut rng);
            let w = random(3, 4, &mut rng);
            let other = random(5, 3, &mut rng);
            let bias = random(1, 3, &mut rng);
            let targets: Vec<usize> = (0..5).map(|_| rng.gen_range(0..3)).collect();
            let mask = [true, false, true, true, false];
            let ids = [0, 1, 0, 2, 1];

            check_grad(&x, |t, v| {
                let w = t.constant(w.clone());
                let y = t.matmul(v, w).unwrap();
                t.sum(y)
            });
            check_grad(&w, |t, v| {
                let xv = t.constant(x.clone());
                let y = t.matmul(xv, v).unwrap();
                let y = t.relu(y);
                t.sum(y)
            });
            check_grad(&x, |t, v| {
                let b = t.constant(bias.clone());
                let o = t.constant(other.clone());
                let y = t.add_bias(v, b).unwrap();
                let y = t.sub(y, o).unwrap();
                let y = t.add(y, v).unwrap();
                t.softmax_cross_entropy(y, &targets, &mask).unwrap()
            });
            check_grad(&bias, |t, v| {
                let xv = t.constant(x.clone());
                let y = t.add_bias(xv, v).unwrap();
                t.softmax_cross_entropy(y, &targets, &mask).unwrap()
            });
            check_grad(&x, |t, v| {
                let g = t.gather_rows(v, &[4, 0, 0, 2, 3, 1]).unwrap();
                let o = t.constant(random(6, 2, &mut ChaCha8Rng::seed_from_u64(seed)));
                let c = t.concat_cols(g, o).unwrap();
                let s = t.segment_mean(c, &[0, 1, 2, 0, 1, 2], 3).unwrap();
                let w = t.constant(random(5, 1, &mut ChaCha8Rng::seed_from_u64(seed + 100)));
                let y = t.matmul(s, w).unwrap();
                let y = t.relu(y);
                t.sum(y)
            });
            check_grad(&x, |t, v| {
                let s = t.segment_sum(v, &ids, 3).unwrap();
                let mx = t.segment_max(v, &ids, 3).unwrap();
                let y = t.add(s, mx).unwrap();
                t.softmax_cross_entropy(y, &[0, 1, 2], &[true, true, true]).unwrap()
            });
            check_grad(&x, |t, v| {
                let y = t.mul_const(v, (0..15).map(|i| i as f64 * 0.1).collect()).unwrap();
                t.softmax_cross_entropy(y, &targets, &mask).unwrap()
            });
            let ia = [0, 0, 1, 4, 3, 2, 2];
            let ib = [1, 0, 2, 0, 4, 3, 2];
            let fused = |t: &mut Tape, a: Var, b: Var, c: Var| {
                let y = t.gather_add_relu(a, &ia, b, &ib, c).unwrap();
                let w = t.constant(random(3, 2, &mut ChaCha8Rng::seed_from_u64(seed + 7)));
                let y = t.matmul(y, w).unwrap();
                t.softmax_cross_entropy(y, &[0, 1, 1, 0, 1, 0, 0], &[true; 7]).unwrap()
            };
            check_grad(&x, |t, v| {
                let (o, b) = (t.constant(other.clone()), t.constant(bias.clone()));
                fused(t, v, o, b)
            });
            check_grad(&other, |t, v| {
                let (xv, b) = (t.constant(x.clone()), t.constant(bias.clone()));
                fused(t, xv, v, b)
            });
            check_grad(&bias, |t, v| {
                let (xv, o) = (t.constant(x.clone()), t.constant(other.clone()));
                fused(t, xv, o, v)
            });
        }
    }

    #[test]
    fn gather_add_relu_matches_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b, c) = (random(4, 3, &mut rng), random(5, 3, &mut rng), random(1, 3, &mut rng));
        let (ia, ib) = ([3, 0, 1, 1], [4, 4, 0, 2]);
        let mut t = Tape::new();
        let (av, bv, cv) = (t.constant(a), t.constant(b), t.constant(c));
        let fused = t.gather_add_relu(av, &ia, bv, &ib, cv).unwrap();
        let ga = t.gather_rows(av, &ia).unwrap();
        let gb = t.gather_rows(bv, &ib).unwrap();
        let s = t.add(ga, gb).unwrap();
        let s = t.add_bias(s, cv).unwrap();
        let composed = t.relu(s);
        for (x, y) in t.value(fused).as_slice().iter().zip(t.value(composed).as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(matches!(
            t.gather_add_relu(av, &[4], bv, &[0], cv),
            Err(AutodiffError::IndexOutOfRange { index: 4, len: 4, .. })
        ));
    }
}
