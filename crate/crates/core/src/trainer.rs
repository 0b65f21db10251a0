//! Mini-batch training with a geometric learning-rate decay, class
//! re-sampling of the training split and best-epoch selection on validation
//! accuracy.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::TrainError;
use crate::nn::{ClassDistribution, NnError, Optimizer, OptimizerKind};
use crate::preprocess::ObjectClass;
use crate::seed;

/// Something that maps one input to a class distribution.
pub trait Classifier {
    type Input;

    fn classify(&self, input: &Self::Input) -> Result<ClassDistribution, NnError>;
}

/// A classifier trained by mini-batch gradient steps in single precision.
pub trait Trainable: Classifier + Clone {
    /// One optimizer step on the mean loss of `batch`; returns the loss
    /// before the step. `rng` drives any training-time noise (dropout).
    fn train_batch(
        &mut self,
        batch: &[(&Self::Input, usize)],
        lr: f64,
        optimizer: &mut Optimizer<f32>,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, TrainError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Read `steps_per_epoch` as the total step budget, spread evenly over
    /// the epochs.
    pub steps_are_total: bool,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub resample_factors: BTreeMap<ObjectClass, usize>,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 32,
            steps_per_epoch: 64,
            steps_are_total: false,
            batch_size: 64,
            lr_start: 0.01,
            lr_end: 0.0001,
            resample_factors: [
                (ObjectClass::Car, 1),
                (ObjectClass::Pedestrian, 2),
                (ObjectClass::Cyclist, 2),
                (ObjectClass::NonObstacle, 4),
            ]
            .into_iter()
            .collect(),
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// The full-size schedule: 256 epochs of 1024 steps at batch size 512.
    pub fn full_scale() -> Self {
        Self {
            epochs: 256,
            steps_per_epoch: 1024,
            batch_size: 512,
            ..Self::default()
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::InvalidConfig(msg.to_owned()));
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 {
            return bad("epochs, steps_per_epoch and batch_size must be at least 1");
        }
        if !(self.lr_start > self.lr_end && self.lr_end > 0.0) {
            return bad("need lr_start > lr_end > 0");
        }
        if self.resample_factors.values().any(|&f| f == 0) {
            return bad("resample factors must be at least 1");
        }
        Ok(())
    }

    pub fn steps_in_epoch(&self) -> usize {
        if self.steps_are_total {
            (self.steps_per_epoch / self.epochs).max(1)
        } else {
            self.steps_per_epoch
        }
    }

    fn factor(&self, class: ObjectClass) -> usize {
        self.resample_factors.get(&class).copied().unwrap_or(1)
    }
}

/// `lr_start * (lr_end / lr_start)^(epoch / (epochs - 1))`, exact at both ends.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    let last = config.epochs.saturating_sub(1);
    if epoch == 0 || last == 0 {
        return config.lr_start;
    }
    if epoch >= last {
        return config.lr_end;
    }
    config.lr_start * (config.lr_end / config.lr_start).powf(epoch as f64 / last as f64)
}

/// Index multiset where sample `i` appears `factor(labels[i])` times.
pub fn resample(labels: &[ObjectClass], config: &TrainConfig) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| std::iter::repeat_n(i, config.factor(c)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub wall_time_s: f64,
}

impl TrainReport {
    /// The report with timing removed; equal across identical runs.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

/// Fraction of `data` whose prediction matches the label.
pub fn accuracy<M: Classifier>(model: &M, data: &[(M::Input, usize)]) -> Result<f64, NnError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (input, label) in data {
        if model.classify(input)?.predicted == *label {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Trains `model` and returns the parameters of the epoch with the best
/// validation accuracy (earliest on ties).
pub fn train<M: Trainable>(
    mut model: M,
    train_set: &[(M::Input, usize)],
    val_set: &[(M::Input, usize)],
    config: &TrainConfig,
) -> Result<(M, TrainReport), TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit("training"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let started = Instant::now();
    let labels: Vec<ObjectClass> = train_set
        .iter()
        .map(|(_, l)| ObjectClass::from_index(*l).unwrap_or(ObjectClass::Car))
        .collect();
    let pool = resample(&labels, config);
    let mut batch_rng = seed::rng(config.seed, &[seed::label("batches")]);
    let mut noise_rng = seed::rng(config.seed, &[seed::label("dropout")]);
    let mut optimizer = Optimizer::new(config.optimizer);

    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, M)> = None;
    for epoch in 0..config.epochs {
        let lr = lr_at(epoch, config);
        let mut loss_sum = 0.0;
        let steps = config.steps_in_epoch();
        for step in 0..steps {
            let batch: Vec<(&M::Input, usize)> = (0..config.batch_size)
                .map(|_| {
                    let (input, label) = &train_set[pool[batch_rng.gen_range(0..pool.len())]];
                    (input, *label)
                })
                .collect();
            let loss = match model.train_batch(&batch, lr, &mut optimizer, &mut noise_rng) {
                Err(TrainError::NonFiniteLoss { .. }) => return Err(TrainError::NonFiniteLoss { epoch, step }),
                other => other?,
            };
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step });
            }
            loss_sum += loss;
        }
        let val_accuracy = accuracy(&model, val_set)?;
        if best.as_ref().is_none_or(|(_, acc, _)| val_accuracy > *acc) {
            best = Some((epoch, val_accuracy, model.clone()));
        }
        records.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / steps as f64,
            val_accuracy,
        });
    }
    let (best_epoch, best_val_accuracy, best_model) = best.expect("at least one epoch");
    Ok((
        best_model,
        TrainReport {
            epochs: records,
            best_epoch,
            best_val_accuracy,
            wall_time_s: started.elapsed().as_secs_f64(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_endpoints() {
        let config = TrainConfig::full_scale();
        assert_eq!(lr_at(0, &config), 0.01);
        assert_eq!(lr_at(255, &config), 0.0001);
        let desk = TrainConfig::default();
        assert_eq!(lr_at(desk.epochs - 1, &desk), 0.0001);
    }

    #[test]
    fn lr_closed_form_midpoint() {
        let config = TrainConfig::full_scale();
        let expected = 10f64.powf(-2.0 - 2.0 * 51.0 / 255.0);
        assert!((lr_at(51, &config) - expected).abs() < 1e-15);
        assert!((lr_at(51, &config) - 3.981e-3).abs() < 1e-6);
    }

    #[test]
    fn lr_strictly_decreasing() {
        let config = TrainConfig::full_scale();
        for e in 1..config.epochs {
            assert!(lr_at(e, &config) < lr_at(e - 1, &config));
        }
    }

    #[test]
    fn single_epoch_uses_start_rate() {
        let config = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        assert_eq!(lr_at(0, &config), 0.01);
    }

    #[test]
    fn resample_duplicates_by_factor() {
        let labels = vec![ObjectClass::Pedestrian; 10];
        assert_eq!(resample(&labels, &TrainConfig::default()).len(), 20);
        let ones = TrainConfig {
            resample_factors: ObjectClass::ALL.into_iter().map(|c| (c, 1)).collect(),
            ..TrainConfig::default()
        };
        let mixed = vec![ObjectClass::Car, ObjectClass::NonObstacle, ObjectClass::Cyclist];
        assert_eq!(resample(&mixed, &ones), vec![0, 1, 2]);
        assert_eq!(resample(&mixed, &TrainConfig::default()), vec![0, 1, 1, 1, 1, 2, 2]);
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            lr_start: 0.001,
            lr_end: 0.01,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn total_steps_are_spread_over_epochs() {
        let config = TrainConfig {
            epochs: 4,
            steps_per_epoch: 100,
            steps_are_total: true,
            ..TrainConfig::default()
        };
        assert_eq!(config.steps_in_epoch(), 25);
    }
}
