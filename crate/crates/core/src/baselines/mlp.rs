use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{training_rows, BaselineError};
use crate::autodiff::{step_adam, Adam, Bound, OptimizerState, ParamId, ParamStore, Tape, Var};
use crate::dataset::FingerprintDataset;
use crate::matrix::Matrix;
use crate::model::argmax_rows;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: Adam,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { hidden: vec![256, 128], epochs: 100, batch_size: 128, adam: Adam::default(), seed: 0 }
    }
}

/// Fully connected ReLU network ending in one logit per class.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    store: ParamStore,
    layers: Vec<(ParamId, ParamId)>,
    input_width: usize,
    class_count: usize,
}

impl MlpModel {
    pub fn new(input_width: usize, hidden: &[usize], class_count: usize, seed: u64) -> Result<Self, BaselineError> {
        if input_width == 0 || class_count == 0 || hidden.contains(&0) {
            return Err(BaselineError::InvalidParameter("layer widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut layers = Vec::new();
        let mut width = input_width;
        for (i, &w) in hidden.iter().chain(std::iter::once(&class_count)).enumerate() {
            layers.push(store.add_linear(&format!("mlp.{i}"), width, w, &mut rng));
            width = w;
        }
        Ok(Self { store, layers, input_width, class_count })
    }

    /// Rebuilds a model of the given shape from stored parameters.
    pub fn from_store(input_width: usize, hidden: &[usize], class_count: usize, store: ParamStore) -> Result<Self, BaselineError> {
        let mut model = Self::new(input_width, hidden, class_count, 0)?;
        if store.len() != model.store.len() {
            return Err(BaselineError::Checkpoint(format!("expected {} parameters, found {}", model.store.len(), store.len())));
        }
        for id in model.store.ids().collect::<Vec<_>>() {
            let name = model.store.get(id).name.clone();
            let src = store.find(&name).ok_or_else(|| BaselineError::Checkpoint(format!("missing {name}")))?;
            if store.value(src).shape() != model.store.value(id).shape() {
                return Err(BaselineError::Checkpoint(format!("{name} has the wrong shape")));
            }
            *model.store.value_mut(id) = store.value(src).clone();
        }
        Ok(model)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    fn record(&self, tape: &mut Tape, params: &Bound, x: Var) -> Result<Var, BaselineError> {
        let mut out = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            out = tape.matmul(out, params[w])?;
            out = tape.add_bias(out, params[b])?;
            if i < last {
                out = tape.relu(out);
            }
        }
        Ok(out)
    }

    pub fn logits(&self, queries: &Matrix) -> Result<Matrix, BaselineError> {
        if queries.cols() != self.input_width {
            return Err(BaselineError::InvalidParameter(format!(
                "queries have {} columns, model expects {}",
                queries.cols(),
                self.input_width
            )));
        }
        let mut tape = Tape::new();
        let params = self.store.bind(&mut tape, false);
        let x = tape.constant(queries.clone());
        let out = self.record(&mut tape, &params, x)?;
        Ok(tape.value(out).clone())
    }

    pub fn predict(&self, queries: &Matrix) -> Result<Vec<usize>, BaselineError> {
        Ok(argmax_rows(&self.logits(queries)?))
    }
}

/// Mini-batch Adam on the masked training rows, reshuffled every epoch.
/// Returns the model and the mean training loss of each epoch.
pub fn train_mlp(dataset: &FingerprintDataset, config: &MlpConfig) -> Result<(MlpModel, Vec<f64>), BaselineError> {
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(BaselineError::InvalidParameter("epochs and batch size must be positive".into()));
    }
    let (x, y) = training_rows(dataset)?;
    let mut model = MlpModel::new(dataset.ap_count(), &config.hidden, dataset.class_count(), config.seed)?;
    let mut state = OptimizerState::new(&model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let bx = x.select_rows(batch);
            let by: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
            let mut tape = Tape::new();
            let params = model.store.bind(&mut tape, true);
            let xv = tape.constant(bx);
            let logits = model.record(&mut tape, &params, xv)?;
            let loss = tape.softmax_cross_entropy(logits, &by, &vec![true; batch.len()])?;
            let value = tape.value(loss)[(0, 0)];
            if !value.is_finite() {
                return Err(BaselineError::NonFiniteLoss { epoch, value });
            }
            total += value * batch.len() as f64;
            tape.backward(loss)?;
            model.store.zero_grad();
            model.store.accumulate_grads(&tape);
            step_adam(&mut model.store, &mut state, &config.adam);
        }
        losses.push(total / x.rows() as f64);
    }
    Ok((model, losses))
}
