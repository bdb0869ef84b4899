use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{argmax_rows, IndoorGnnModel, ModelConfig, ModelError};
use crate::autodiff::{step_adam, Adam, OptimizerState};
use crate::dataset::FingerprintDataset;
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub adam: Adam,
    /// Seeds parameter initialization and dropout.
    pub seed: u64,
    /// Epochs between rebuilds of the embedding-space graph.
    pub refresh_period: usize,
    /// Test accuracy is recorded every `eval_every` epochs and at the last.
    pub eval_every: usize,
    /// Train on a graph over the training rows only; test rows join the
    /// graph at inference.
    pub inductive: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            epochs: 200,
            adam: Adam::default(),
            seed: 0,
            refresh_period: 5,
            eval_every: 1,
            inductive: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.model.validate()?;
        if self.epochs == 0 {
            return Err(ModelError::Config("epochs must be at least 1".into()));
        }
        if self.refresh_period == 0 {
            return Err(ModelError::Config("refresh period must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(ModelError::Config("evaluation cadence must be at least 1".into()));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(ModelError::Config(format!("learning rate {} must be positive", self.adam.lr)));
        }
        Ok(())
    }
}

/// Accuracies are measured on the logits of that epoch's forward pass,
/// before the parameter update.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub graph_refreshed: bool,
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub train_points: usize,
    pub test_points: usize,
}

impl History {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|r| r.loss)
    }

    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.epochs.iter().rev().find_map(|r| r.test_accuracy)
    }

    /// `epoch,loss,train_accuracy,test_accuracy,graph_refreshed` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,train_accuracy,test_accuracy,graph_refreshed\n");
        for r in &self.epochs {
            let test = r.test_accuracy.map(|a| a.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.loss, r.train_accuracy, test, r.graph_refreshed));
        }
        s
    }
}

fn masked_accuracy(pred: &[usize], labels: &[usize], mask: &[bool]) -> Option<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for ((&p, &y), &m) in pred.iter().zip(labels).zip(mask) {
        if m {
            total += 1;
            hit += usize::from(p == y);
        }
    }
    (total > 0).then(|| hit as f64 / total as f64)
}

/// Rows the model sees in inductive training: the masked training rows.
fn inductive_view(dataset: &FingerprintDataset) -> (Matrix, Vec<usize>, Vec<bool>) {
    let idx = dataset.train_indices();
    let labels = idx.iter().map(|&i| dataset.labels()[i]).collect();
    (dataset.features().select_rows(&idx), labels, vec![true; idx.len()])
}

/// Trains `model` with masked cross-entropy and Adam.
///
/// The model must have been built for the dataset's AP and class counts.
pub fn fit(model: &mut IndoorGnnModel, dataset: &FingerprintDataset, config: &TrainConfig) -> Result<History, ModelError> {
    config.validate()?;
    if model.ap_count() != dataset.ap_count() || model.class_count() != dataset.class_count() {
        return Err(ModelError::Config(format!(
            "model is {}→{} but dataset is {}→{}",
            model.ap_count(),
            model.class_count(),
            dataset.ap_count(),
            dataset.class_count()
        )));
    }
    let train_points = dataset.train_mask().iter().filter(|&&m| m).count();
    if train_points == 0 {
        return Err(ModelError::EmptyMask);
    }
    let test_points = dataset.test_mask().iter().filter(|&&m| m).count();
    let (features, labels, mask) = if config.inductive {
        inductive_view(dataset)
    } else {
        (dataset.features().clone(), dataset.labels().to_vec(), dataset.train_mask().to_vec())
    };

    let mut state = OptimizerState::new(model.store());
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut history = History { epochs: Vec::with_capacity(config.epochs), train_points, test_points };
    model.clear_graphs();

    for epoch in 0..config.epochs {
        let refresh = epoch % config.refresh_period == 0;
        let step = model.train_pass(&features, &labels, &mask, refresh, Some(&mut dropout_rng))?;
        if !step.loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch, value: step.loss });
        }
        let pred = argmax_rows(&step.logits);
        let train_accuracy = masked_accuracy(&pred, &labels, &mask).expect("mask is non-empty");
        let eval_now = epoch % config.eval_every == 0 || epoch + 1 == config.epochs;
        let test_accuracy = if !eval_now || test_points == 0 {
            None
        } else if config.inductive {
            let full = predict(model, dataset)?;
            masked_accuracy(&full, dataset.labels(), dataset.test_mask())
        } else {
            masked_accuracy(&pred, dataset.labels(), dataset.test_mask())
        };
        step_adam(model.store_mut(), &mut state, &config.adam);
        log::debug!("epoch {epoch} loss {:.6} train {train_accuracy:.4} test {test_accuracy:?}", step.loss);
        history.epochs.push(EpochRecord { epoch, loss: step.loss, train_accuracy, test_accuracy, graph_refreshed: refresh });
    }
    if config.inductive {
        model.clear_graphs();
    }
    Ok(history)
}

/// Predicted class per row of the dataset, with freshly built graphs over
/// the rows that take part in inference.
///
/// Transductive models see every row. Rows outside both masks get a
/// prediction too, as they are part of the graph.
pub fn predict(model: &mut IndoorGnnModel, dataset: &FingerprintDataset) -> Result<Vec<usize>, ModelError> {
    let logits = model.forward(dataset.features(), true)?;
    Ok(argmax_rows(&logits))
}

/// Accuracy over the test-mask rows.
pub fn evaluate(model: &mut IndoorGnnModel, dataset: &FingerprintDataset) -> Result<f64, ModelError> {
    let pred = predict(model, dataset)?;
    masked_accuracy(&pred, dataset.labels(), dataset.test_mask())
        .ok_or_else(|| ModelError::Config("dataset has no test rows".into()))
}
