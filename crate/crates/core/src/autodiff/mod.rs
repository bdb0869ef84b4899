//! A small reverse-mode differentiation engine over dense 2-D `f64` tensors.
//!
//! Computation is recorded on a [`Tape`] as it runs. Every value is a matrix;
//! scalars are `1×1`. Trainable weights live in a [`ParamStore`] outside the
//! tape and are bound onto it at the start of each step with [`Tape::param`].
//! After [`Tape::backward`], [`ParamStore::accumulate_grads`] moves the leaf
//! gradients back into the store where the optimizers read them.
//!
//! ```
//! use indoorgnn::autodiff::{ParamStore, Tape};
//! use indoorgnn::matrix::Matrix;
//!
//! let mut store = ParamStore::new();
//! let x = store.add("x", Matrix::from_rows(&[[3.0]]).unwrap());
//! let mut tape = Tape::new();
//! let xv = tape.param(&store, x);
//! let sq = tape.matmul(xv, xv).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! store.accumulate_grads(&tape);
//! assert_eq!(store.grad(x)[(0, 0)], 6.0);
//! ```

mod checkpoint;
mod optim;
mod tape;

use rand::Rng;
use thiserror::Error;

use crate::matrix::Matrix;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use optim::{step_adam, step_sgd, Adam, OptimizerState};
pub use tape::{softmax_rows, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("segment {0} has no members")]
    EmptySegment(usize),
    #[error("mask selects no rows")]
    EmptyMask,
    #[error("backward needs a 1x1 scalar, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("tape has already been consumed by a backward pass")]
    TapeConsumed,
    #[error("checkpoint line {line}: {message}")]
    Checkpoint { line: usize, message: String },
    #[error("checkpoint I/O: {0}")]
    Io(String),
}

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

/// Ordered, named collection of trainable matrices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.params.push(Parameter { name: name.into(), value, grad });
        ParamId(self.params.len() - 1)
    }

    /// Adds a `fan_in × fan_out` weight drawn from `U(-√(6/fan_in), √(6/fan_in))`
    /// and a zero `1 × fan_out` bias.
    pub fn add_linear<R: Rng>(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> (ParamId, ParamId) {
        let w = self.add(format!("{name}.weight"), he_uniform(fan_in, fan_in, fan_out, rng));
        let b = self.add(format!("{name}.bias"), Matrix::zeros(1, fan_out));
        (w, b)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].grad
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.as_mut_slice().fill(0.0);
        }
    }

    /// Adds the gradients of every parameter bound on `tape` into the store.
    pub fn accumulate_grads(&mut self, tape: &Tape) {
        for (var, id) in tape.bindings() {
            if let Some(g) = tape.grad(var) {
                for (acc, v) in self.params[id.0].grad.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *acc += v;
                }
            }
        }
    }

    /// Puts every parameter on `tape`, gradient-tracking when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .ids()
            .map(|id| if trainable { tape.param(self, id) } else { tape.constant(self.value(id).clone()) })
            .collect();
        Bound(vars)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.as_slice().len()).sum()
    }
}

/// Tape handles for every parameter of a store, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

pub(crate) fn he_uniform<R: Rng>(fan_in: usize, rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let limit = (6.0 / fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized above")
}
