use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::data::{validate_dataset, ToySample};
use crate::grad::model::{ModelShape, ToyLm};
use crate::rng::SplitRng;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub shape: ModelShape,
    pub seed: u64,
    pub epochs: u64,
    pub learning_rate: f64,
    /// `None` trains full-batch; `Some(b)` draws seeded mini-batches of `b`.
    pub batch_size: Option<usize>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == Some(0) {
            return Err(Error::config("batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean training loss before the first epoch.
    pub initial_loss: f64,
    /// Mean training loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

/// Gradient descent on the mean over samples of each sample's mean
/// generation-token cross-entropy.
pub fn train_toy<T: Scalar>(dataset: &[ToySample], config: &TrainConfig) -> Result<(ToyLm<T>, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::config("training dataset is empty"));
    }
    config.validate()?;
    validate_dataset(dataset)?;
    let mut model = ToyLm::<T>::init(config.shape, config.seed)?;
    for s in dataset {
        model.check_sample(s)?;
    }

    let initial_loss = mean_loss(&model, dataset);
    if !initial_loss.is_finite() {
        return Err(Error::Diverged { epoch: 0, loss: initial_loss });
    }
    let lr = T::of(config.learning_rate);
    let batch = config.batch_size.unwrap_or(dataset.len()).min(dataset.len());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs as usize);
    let mut grad = vec![T::zero(); model.parameter_count()];

    for epoch in 0..config.epochs {
        if config.batch_size.is_some() {
            order = (0..dataset.len()).collect();
            SplitRng::new(config.seed, 1 + epoch).shuffle(&mut order);
        }
        for chunk in order.chunks(batch) {
            grad.fill(T::zero());
            for &i in chunk {
                let g = model.sample_gradient(&dataset[i])?;
                for (acc, v) in grad.iter_mut().zip(g.values()) {
                    *acc = *acc + *v;
                }
            }
            let step = lr / T::of(chunk.len() as f64);
            for (p, g) in model.params_mut().iter_mut().zip(&grad) {
                *p = *p - step * *g;
            }
        }
        let loss = mean_loss(&model, dataset);
        if !loss.is_finite() || model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch: epoch as usize + 1, loss });
        }
        epoch_losses.push(loss);
    }

    model.set_training_record(config.epochs, config.learning_rate);
    Ok((model, TrainReport { initial_loss, epoch_losses }))
}

pub fn mean_loss<T: Scalar>(model: &ToyLm<T>, dataset: &[ToySample]) -> f64 {
    let total: f64 = dataset.iter().map(|s| model.sample_loss_unchecked(s).widen()).sum();
    total / dataset.len() as f64
}
