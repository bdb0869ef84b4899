//! The IndoorGNN classifier: two dynamic edge-convolution blocks and a
//! fully connected head producing one logit per region.
//!
//! Block 1 runs on a kNN graph over the input fingerprints. Block 2 runs on a
//! kNN graph rebuilt from block 1's output embeddings, so its neighborhoods
//! move as training changes the embedding space. Both graphs span every point
//! handed to the model; which rows contribute to the loss is decided by the
//! mask given to [`fit`].

mod edgeconv;
mod train;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Bound, ParamId, ParamStore, Tape, Var};
use crate::dataset::DatasetError;
use crate::knn::{build_graph_with, KnnError, Metric, NeighborGraph};
use crate::matrix::Matrix;

pub use edgeconv::{Aggregator, EdgeConvBlock, EdgeInput};
pub use train::{evaluate, fit, predict, EpochRecord, History, TrainConfig};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("graph has {graph} nodes but there are {embeddings} embeddings")]
    GraphSize { graph: usize, embeddings: usize },
    #[error("expected embeddings of width {expected}, got {found}")]
    Width { expected: usize, found: usize },
    #[error("refresh=false but no graphs are cached for these features")]
    NoCachedGraphs,
    #[error("training mask selects no rows")]
    EmptyMask,
    #[error("loss became non-finite ({value}) at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, value: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint does not match the model: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Knn(#[from] KnnError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Layer widths and graph settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    /// Neighbors per node, excluding the self-loop.
    pub k: usize,
    pub block1_hidden: usize,
    pub block1_out: usize,
    pub block2_hidden: usize,
    pub block2_out: usize,
    /// Hidden widths of the head between block 2 and the logits.
    pub head_hidden: Vec<usize>,
    pub edge_input: EdgeInput,
    pub aggregator: Aggregator,
    pub metric: Metric,
    /// Drop probability after each block during training.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::ujiindoorloc()
    }
}

impl ModelConfig {
    pub fn ujiindoorloc() -> Self {
        Self {
            k: 10,
            block1_hidden: 512,
            block1_out: 128,
            block2_hidden: 256,
            block2_out: 64,
            head_hidden: vec![],
            edge_input: EdgeInput::Difference,
            aggregator: Aggregator::Mean,
            metric: Metric::SquaredEuclidean,
            dropout: 0.0,
        }
    }

    pub fn mnav() -> Self {
        Self { block1_hidden: 256, block1_out: 64, block2_hidden: 128, block2_out: 64, ..Self::ujiindoorloc() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.k == 0 {
            return Err(ModelError::Config("k must be at least 1".into()));
        }
        let widths = [self.block1_hidden, self.block1_out, self.block2_hidden, self.block2_out];
        if widths.iter().chain(&self.head_hidden).any(|&w| w == 0) {
            return Err(ModelError::Config("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Intermediate results of one inference pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub block1: Matrix,
    pub block2: Matrix,
    pub logits: Matrix,
}

/// Loss and logits of one pass with gradients written to the parameter store.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub loss: f64,
    pub logits: Matrix,
    pub graph_refreshed: bool,
}

#[derive(Debug, Clone)]
struct GraphCache {
    key: u64,
    input: NeighborGraph,
    embedded: Option<NeighborGraph>,
}

#[derive(Debug, Clone)]
pub struct IndoorGnnModel {
    config: ModelConfig,
    ap_count: usize,
    class_count: usize,
    store: ParamStore,
    block1: EdgeConvBlock,
    block2: EdgeConvBlock,
    head: Vec<(ParamId, ParamId)>,
    graphs: Option<GraphCache>,
}

fn features_key(x: &Matrix) -> u64 {
    let mut h = DefaultHasher::new();
    x.shape().hash(&mut h);
    for v in x.as_slice() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Index of the largest entry per row; the lowest index wins ties.
pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    logits
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

impl IndoorGnnModel {
    pub fn new(ap_count: usize, class_count: usize, config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if ap_count == 0 || class_count == 0 {
            return Err(ModelError::Config("ap_count and class_count must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = config;
        let block1 = EdgeConvBlock::new(
            &mut store,
            "block1",
            ap_count,
            c.block1_hidden,
            c.block1_out,
            c.k,
            c.edge_input,
            c.aggregator,
            &mut rng,
        );
        let block2 = EdgeConvBlock::new(
            &mut store,
            "block2",
            c.block1_out,
            c.block2_hidden,
            c.block2_out,
            c.k,
            c.edge_input,
            c.aggregator,
            &mut rng,
        );
        let mut head = Vec::new();
        let mut width = c.block2_out;
        for (i, &w) in c.head_hidden.iter().chain(std::iter::once(&class_count)).enumerate() {
            head.push(store.add_linear(&format!("head.{i}"), width, w, &mut rng));
            width = w;
        }
        Ok(Self { config: c.clone(), ap_count, class_count, store, block1, block2, head, graphs: None })
    }

    /// Rebuilds a model from stored parameters. Every parameter of a freshly
    /// built model must be present under the same name and shape.
    pub fn from_store(ap_count: usize, class_count: usize, config: &ModelConfig, store: ParamStore) -> Result<Self, ModelError> {
        let mut model = Self::new(ap_count, class_count, config, 0)?;
        if store.len() != model.store.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters, found {}",
                model.store.len(),
                store.len()
            )));
        }
        for id in model.store.ids().collect::<Vec<_>>() {
            let name = model.store.get(id).name.clone();
            let src = store.find(&name).ok_or_else(|| ModelError::Checkpoint(format!("missing parameter {name}")))?;
            let value = store.value(src);
            if value.shape() != model.store.value(id).shape() {
                return Err(ModelError::Checkpoint(format!(
                    "{name} has shape {:?}, expected {:?}",
                    value.shape(),
                    model.store.value(id).shape()
                )));
            }
            *model.store.value_mut(id) = value.clone();
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn ap_count(&self) -> usize {
        self.ap_count
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn blocks(&self) -> [&EdgeConvBlock; 2] {
        [&self.block1, &self.block2]
    }

    /// The cached input-space and embedding-space graphs, if built.
    pub fn graphs(&self) -> Option<(&NeighborGraph, &NeighborGraph)> {
        let cache = self.graphs.as_ref()?;
        Some((&cache.input, cache.embedded.as_ref()?))
    }

    /// Drops cached graphs; the next pass must refresh.
    pub fn clear_graphs(&mut self) {
        self.graphs = None;
    }

    /// Records the full network on `tape`.
    ///
    /// With `refresh`, the embedding-space graph is rebuilt from this pass's
    /// block-1 output; the input-space graph is rebuilt only when the features
    /// differ from the cached ones. Returns `(block1, block2, logits)`.
    fn record<R: Rng>(
        &mut self,
        tape: &mut Tape,
        params: &Bound,
        features: &Matrix,
        refresh: bool,
        mut dropout_rng: Option<&mut R>,
    ) -> Result<(Var, Var, Var), ModelError> {
        if features.cols() != self.ap_count {
            return Err(ModelError::Width { expected: self.ap_count, found: features.cols() });
        }
        let key = features_key(features);
        let cached = self.graphs.as_ref().is_some_and(|g| g.key == key && g.embedded.is_some());
        if !refresh && !cached {
            return Err(ModelError::NoCachedGraphs);
        }
        if self.graphs.as_ref().map(|g| g.key) != Some(key) {
            let input = build_graph_with(features, self.config.k, self.config.metric)?;
            self.graphs = Some(GraphCache { key, input, embedded: None });
        }

        let x = tape.constant(features.clone());
        let cache = self.graphs.as_mut().expect("set above");
        let h1 = self.block1.forward(tape, params, x, &cache.input)?;
        if refresh {
            cache.embedded = Some(build_graph_with(tape.value(h1), self.config.k, self.config.metric)?);
        }
        let h1_used = match dropout_rng.as_deref_mut() {
            Some(rng) if self.config.dropout > 0.0 => dropout(tape, h1, self.config.dropout, rng)?,
            _ => h1,
        };
        let h2 = self.block2.forward(tape, params, h1_used, cache.embedded.as_ref().expect("set above"))?;
        let mut out = match dropout_rng {
            Some(rng) if self.config.dropout > 0.0 => dropout(tape, h2, self.config.dropout, rng)?,
            _ => h2,
        };
        let last = self.head.len() - 1;
        for (i, &(w, b)) in self.head.iter().enumerate() {
            out = tape.matmul(out, params[w])?;
            out = tape.add_bias(out, params[b])?;
            if i < last {
                out = tape.relu(out);
            }
        }
        Ok((h1, h2, out))
    }

    /// Inference pass returning every block's output.
    pub fn forward_detailed(&mut self, features: &Matrix, refresh: bool) -> Result<ForwardOutput, ModelError> {
        let mut tape = Tape::new();
        let params = self.store.bind(&mut tape, false);
        let (h1, h2, logits) = self.record::<ChaCha8Rng>(&mut tape, &params, features, refresh, None)?;
        Ok(ForwardOutput {
            block1: tape.value(h1).clone(),
            block2: tape.value(h2).clone(),
            logits: tape.value(logits).clone(),
        })
    }

    /// `n × |T|` logits for the rows of `features`.
    pub fn forward(&mut self, features: &Matrix, refresh: bool) -> Result<Matrix, ModelError> {
        Ok(self.forward_detailed(features, refresh)?.logits)
    }

    /// Masked mean cross-entropy without touching gradients.
    pub fn loss(&mut self, features: &Matrix, labels: &[usize], mask: &[bool], refresh: bool) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let params = self.store.bind(&mut tape, false);
        let (_, _, logits) = self.record::<ChaCha8Rng>(&mut tape, &params, features, refresh, None)?;
        let loss = tape.softmax_cross_entropy(logits, labels, mask).map_err(mask_error)?;
        Ok(tape.value(loss)[(0, 0)])
    }

    /// Masked mean cross-entropy; the store's gradients are replaced by its
    /// gradient.
    pub fn loss_and_gradients(
        &mut self,
        features: &Matrix,
        labels: &[usize],
        mask: &[bool],
        refresh: bool,
    ) -> Result<StepOutput, ModelError> {
        self.train_pass::<ChaCha8Rng>(features, labels, mask, refresh, None)
    }

    fn train_pass<R: Rng>(
        &mut self,
        features: &Matrix,
        labels: &[usize],
        mask: &[bool],
        refresh: bool,
        dropout_rng: Option<&mut R>,
    ) -> Result<StepOutput, ModelError> {
        let mut tape = Tape::new();
        let params = self.store.bind(&mut tape, true);
        let (_, _, logits) = self.record(&mut tape, &params, features, refresh, dropout_rng)?;
        let loss = tape.softmax_cross_entropy(logits, labels, mask).map_err(mask_error)?;
        let loss_value = tape.value(loss)[(0, 0)];
        let logits_value = tape.value(logits).clone();
        tape.backward(loss)?;
        self.store.zero_grad();
        self.store.accumulate_grads(&tape);
        Ok(StepOutput { loss: loss_value, logits: logits_value, graph_refreshed: refresh })
    }
}

fn mask_error(e: AutodiffError) -> ModelError {
    match e {
        AutodiffError::EmptyMask => ModelError::EmptyMask,
        other => other.into(),
    }
}

/// Inverted dropout: kept entries are scaled by `1 / (1 - p)`.
fn dropout<R: Rng>(tape: &mut Tape, x: Var, p: f64, rng: &mut R) -> Result<Var, ModelError> {
    let len = tape.value(x).as_slice().len();
    let keep = 1.0 / (1.0 - p);
    let factors = (0..len).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
    Ok(tape.mul_const(x, factors)?)
}
