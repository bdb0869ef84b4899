use rand::Rng;

use super::ModelError;
use crate::autodiff::{Bound, ParamId, ParamStore, Tape, Var};
use crate::knn::NeighborGraph;
use crate::matrix::Matrix;

/// What the edge function sees for an edge `i ← j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum EdgeInput {
    /// `[x_i ∥ x_j − x_i]`
    #[default]
    Difference,
    /// `[x_i ∥ x_j]`
    Concat,
}

/// Symmetric reduction over a node's edge features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Aggregator {
    #[default]
    Mean,
    Max,
    Sum,
}

/// One edge-convolution layer.
///
/// The edge function is a two-layer perceptron
/// `h(e) = relu(relu(e·W₁ + b₁)·W₂ + b₂)` on the `2·d_in`-wide edge input.
/// `W₁` is stored as its two `d_in`-row halves, `w_self` acting on `x_i`
/// and `w_neigh` on the second half of the edge input, so the first layer is
/// evaluated per node and then gathered per edge instead of materializing the
/// `E × 2·d_in` edge-input matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeConvBlock {
    pub(crate) w_self: ParamId,
    pub(crate) w_neigh: ParamId,
    pub(crate) b1: ParamId,
    pub(crate) w2: ParamId,
    pub(crate) b2: ParamId,
    in_width: usize,
    hidden: usize,
    out_width: usize,
    k: usize,
    edge_input: EdgeInput,
    aggregator: Aggregator,
}

impl EdgeConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_width: usize,
        hidden: usize,
        out_width: usize,
        k: usize,
        edge_input: EdgeInput,
        aggregator: Aggregator,
        rng: &mut R,
    ) -> Self {
        let fan_in = 2 * in_width;
        let w_self = store.add(format!("{name}.edge1.w_self"), crate::autodiff::he_uniform(fan_in, in_width, hidden, rng));
        let w_neigh = store.add(format!("{name}.edge1.w_neigh"), crate::autodiff::he_uniform(fan_in, in_width, hidden, rng));
        let b1 = store.add(format!("{name}.edge1.bias"), Matrix::zeros(1, hidden));
        let (w2, b2) = store.add_linear(&format!("{name}.edge2"), hidden, out_width, rng);
        Self { w_self, w_neigh, b1, w2, b2, in_width, hidden, out_width, k, edge_input, aggregator }
    }

    /// Width of the edge function's input, `2 · d_in`.
    pub fn edge_input_width(&self) -> usize {
        2 * self.in_width
    }

    pub fn in_width(&self) -> usize {
        self.in_width
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn out_width(&self) -> usize {
        self.out_width
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn edge_input(&self) -> EdgeInput {
        self.edge_input
    }

    pub fn aggregator(&self) -> Aggregator {
        self.aggregator
    }

    /// Records the layer on `tape`: `x'_i = Aggregate_{j ∈ N(i)} h(x_i, x_j)`.
    pub fn forward(&self, tape: &mut Tape, params: &Bound, x: Var, graph: &NeighborGraph) -> Result<Var, ModelError> {
        let n = tape.value(x).rows();
        if graph.node_count() != n {
            return Err(ModelError::GraphSize { graph: graph.node_count(), embeddings: n });
        }
        if tape.value(x).cols() != self.in_width {
            return Err(ModelError::Width { expected: self.in_width, found: tape.value(x).cols() });
        }
        let (src, dst): (Vec<usize>, Vec<usize>) = graph.edges().unzip();

        let p = tape.matmul(x, params[self.w_self])?;
        let q = tape.matmul(x, params[self.w_neigh])?;
        // x_i·W_s + (x_j − x_i)·W_n = x_i·(W_s − W_n) + x_j·W_n
        let self_part = match self.edge_input {
            EdgeInput::Difference => tape.sub(p, q)?,
            EdgeInput::Concat => p,
        };
        let hidden = tape.gather_add_relu(self_part, &src, q, &dst, params[self.b1])?;
        let out = tape.matmul(hidden, params[self.w2])?;
        let out = tape.add_bias(out, params[self.b2])?;
        let edge_features = tape.relu(out);

        let agg = match self.aggregator {
            Aggregator::Mean => tape.segment_mean(edge_features, &src, n)?,
            Aggregator::Max => tape.segment_max(edge_features, &src, n)?,
            Aggregator::Sum => tape.segment_sum(edge_features, &src, n)?,
        };
        Ok(agg)
    }

    /// Inference-only evaluation on plain matrices.
    pub fn forward_values(&self, store: &ParamStore, x: &Matrix, graph: &NeighborGraph) -> Result<Matrix, ModelError> {
        let mut tape = Tape::new();
        let params = store.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, &params, xv, graph)?;
        Ok(tape.value(out).clone())
    }
}
