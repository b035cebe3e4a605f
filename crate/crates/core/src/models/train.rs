use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::mlp::{mlp_backward_into, mlp_forward, MlpGrads, MlpParams, DEFAULT_HIDDEN};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{LossSpec, PreparedLoss};
use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub seed: u64,
    pub loss: LossSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 1000,
            patience: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            hidden: DEFAULT_HIDDEN,
            seed: 0,
            loss: LossSpec::Mse,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::usage("epochs, patience, batch size and hidden width must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::usage("learning rate must be positive"));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    pub initial_valid_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub trace: TrainTrace,
}

fn series(v: &[f64]) -> TimeSeries {
    TimeSeries::from_raw(1, v.len(), v.to_vec())
}

fn check_finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Training(format!("non-finite {what}")))
    }
}

/// Mean loss of the network over a dataset.
pub fn dataset_loss(params: &MlpParams, data: &Dataset, loss: &PreparedLoss) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..data.len() {
        let (pred, _) = mlp_forward(params, data.input(i))?;
        total += loss.evaluate(&series(&pred), &series(data.target(i)))?.value;
    }
    check_finite(total / data.len() as f64, "validation loss")
}

/// Predictions for every sample of a dataset.
pub fn predict(params: &MlpParams, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    (0..data.len()).map(|i| mlp_forward(params, data.input(i)).map(|(p, _)| p)).collect()
}

/// Minibatch ADAM training with early stopping on the validation loss.
///
/// Returns the parameters of the best validation epoch. The run is a pure
/// function of `(train, valid, config)`.
pub fn train(train: &Dataset, valid: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Data("training and validation sets must be non-empty".into()));
    }
    if train.input_len != valid.input_len || train.horizon != valid.horizon {
        return Err(Error::Data("train and validation windows differ".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = MlpParams::init(train.input_len, config.hidden, train.horizon, &mut rng);
    train_from(params, train, valid, config, &mut rng)
}

fn train_from(
    mut params: MlpParams,
    train: &Dataset,
    valid: &Dataset,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    let loss = config.loss.prepare(train.horizon);
    let mut adam = AdamState::new(params.param_count(), config.learning_rate);
    let initial_valid_loss = dataset_loss(&params, valid, &loss)?;
    let mut best = (params.clone(), initial_valid_loss, 0usize);
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grads = MlpGrads::zeros_like(&params);

    for epoch in 1..=config.max_epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.fill_zero();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (pred, cache) = mlp_forward(&params, train.input(i))?;
                let res = loss.evaluate(&series(&pred), &series(train.target(i)))?;
                epoch_loss += check_finite(res.value, "training loss")?;
                let g: Vec<f64> = res.grad.values().iter().map(|g| g * scale).collect();
                mlp_backward_into(&params, &cache, &g, &mut grads)?;
            }
            adam_step(&mut adam, &mut params, &grads)?;
        }
        if !params.is_finite() {
            return Err(Error::Training(format!("parameters diverged at epoch {epoch}")));
        }
        let valid_loss = dataset_loss(&params, valid, &loss)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            valid_loss,
        });
        if valid_loss < best.1 {
            best = (params.clone(), valid_loss, epoch);
        } else if epoch - best.2 >= config.patience {
            break;
        }
    }
    let (params, best_valid_loss, best_epoch) = best;
    Ok(TrainOutcome {
        params,
        trace: TrainTrace {
            epochs,
            best_epoch,
            best_valid_loss,
            initial_valid_loss,
        },
    })
}
