use super::ops::argmax;
use super::{init_weights, warm_start, Model, TensorError, WeightStore};
use crate::arch::Architecture;
use crate::data::Dataset;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Epochs used when a warm-started candidate is fine-tuned.
    pub fine_tune_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 32, learning_rate: 0.05, seed: 0, fine_tune_epochs: 3 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        if self.batch_size == 0 {
            return Err(TensorError::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TensorError::InvalidArgument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Accuracies after `epoch` epochs; epoch 0 is the state before training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    /// Mean training loss over the epoch's batches.
    pub loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: WeightStore,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn final_train_accuracy(&self) -> f64 {
        self.history.last().map_or(0.0, |r| r.train_accuracy)
    }

    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.history.last().and_then(|r| r.test_accuracy)
    }
}

pub(crate) fn accuracy(model: &Model, w: &WeightStore, ds: &Dataset) -> Result<f64, TensorError> {
    if ds.is_empty() {
        return Ok(0.0);
    }
    let logits = model.logits(w, &ds.images)?;
    let correct = (0..ds.len()).filter(|&i| argmax(logits.sample(i)) == ds.labels[i]).count();
    Ok(correct as f64 / ds.len() as f64)
}

/// Top-1 accuracy of `w` on `ds`.
pub fn evaluate(arch: &Architecture, w: &WeightStore, ds: &Dataset) -> Result<f64, TensorError> {
    accuracy(&Model::new(arch)?, w, ds)
}

pub fn train(
    arch: &Architecture,
    ds: &Dataset,
    cfg: &TrainConfig,
    warm: Option<&WeightStore>,
) -> Result<TrainOutcome, TensorError> {
    train_and_test(arch, ds, None, cfg, warm)
}

/// Plain minibatch SGD for `cfg.epochs` epochs. With `warm` set, parameters
/// whose name and shape match are carried over and the rest are freshly
/// initialized.
pub fn train_and_test(
    arch: &Architecture,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
    warm: Option<&WeightStore>,
) -> Result<TrainOutcome, TensorError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TensorError::InvalidArgument("empty training set".into()));
    }
    let model = Model::new(arch)?;
    let mut w = match warm {
        Some(prev) => warm_start(model.graph(), cfg.seed, prev),
        None => init_weights(model.graph(), cfg.seed),
    };
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);

    let record = |w: &WeightStore, epoch, loss| -> Result<EpochRecord, TensorError> {
        Ok(EpochRecord {
            epoch,
            train_accuracy: accuracy(&model, w, train_set)?,
            test_accuracy: test_set.map(|t| accuracy(&model, w, t)).transpose()?,
            loss,
        })
    };
    let mut history = vec![record(&w, 0, None)?];
    let lr = cfg.learning_rate as f32;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        let mut batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            let x = train_set.images.gather(batch);
            let labels: Vec<usize> = batch.iter().map(|&i| train_set.labels[i]).collect();
            let (loss, grads) = model.loss_and_grad(&w, &x, &labels)?;
            if !loss.is_finite() {
                return Err(TensorError::DivergedLoss { epoch });
            }
            w.axpy(-lr, &grads);
            loss_sum += loss as f64;
            batches += 1;
        }
        history.push(record(&w, epoch, Some(loss_sum / batches as f64))?);
    }
    Ok(TrainOutcome { weights: w, history })
}
