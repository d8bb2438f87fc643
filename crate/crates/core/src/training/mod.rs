//! Mini-batch training with Adam, early stopping and best-weights restore.

mod adam;
mod scaler;

pub use adam::{Adam, AdamConfig};
pub use scaler::{Range, Scaler};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{window, Dataset, Windows};
use crate::error::{Error, Result};
use crate::layers::Param;
use crate::model::{loss, mse_gradient, Model};
use crate::tensor::Rng;

/// Global gradient norm used when clipping is switched on.
pub const CLIP_NORM: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without improvement before stopping; 0 never stops early.
    pub patience: usize,
    pub lookup: usize,
    pub learning_rate: f64,
    /// L2 strength λ.
    pub l2: f64,
    pub seed: u64,
    pub clip_gradients: bool,
    /// Trailing share of the development records held out for validation.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            max_epochs: 300,
            patience: 10,
            lookup: 20,
            learning_rate: 1e-3,
            l2: 1e-4,
            seed: 0,
            clip_gradients: false,
            validation_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.lookup == 0 {
            return Err(Error::Config("batch_size, max_epochs and lookup must be at least 1".into()));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} must be below max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config(format!("l2 must be >= 0, got {}", self.l2)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation_fraction must be in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// Patience bookkeeping. Only a strict decrease counts as improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> Verdict {
        if metric < self.best {
            self.best = metric;
            self.best_epoch = epoch;
            self.stale = 0;
            return Verdict::Improved;
        }
        self.stale += 1;
        if self.patience > 0 && self.stale >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Continue
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were restored.
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_early: bool,
    /// Whether `val_mse` is measured on held-out windows or, with no
    /// validation split, on the training windows in evaluation mode.
    pub monitored: String,
    /// Seconds per epoch. Kept apart from the reproducible fields.
    #[serde(skip)]
    pub epoch_seconds: Vec<f64>,
}

/// Scaled, windowed splits of one dataset.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scaler: Scaler,
    pub scaled: Dataset,
    pub train: Windows,
    pub validation: Windows,
    pub test: Windows,
    /// First record of the validation and test periods.
    pub validation_start: usize,
    pub test_start: usize,
}

/// Splits `data` chronologically: records before `test_start` form the
/// development period, whose trailing `validation_fraction` is held out.
/// The scaler is fitted on the training records only; samples are assigned
/// to a split by the record of their target.
pub fn prepare(data: &Dataset, lookup: usize, test_start: usize, validation_fraction: f64) -> Result<Prepared> {
    if test_start > data.len() {
        return Err(Error::Data(format!(
            "test start {test_start} beyond the {} records",
            data.len()
        )));
    }
    if !(0.0..1.0).contains(&validation_fraction) {
        return Err(Error::Config(format!(
            "validation_fraction must be in [0, 1), got {validation_fraction}"
        )));
    }
    let held_out = (validation_fraction * test_start as f64).round() as usize;
    let validation_start = test_start - held_out;
    if validation_start <= lookup {
        return Err(Error::Data(format!(
            "training period of {validation_start} records leaves no windows at lookup {lookup}"
        )));
    }
    let scaler = Scaler::fit(&data.slice(0..validation_start)?)?;
    let scaled = scaler.apply(data)?;
    let all = window(&scaled, lookup)?;
    Ok(Prepared {
        train: all.with_targets_in(0..validation_start),
        validation: all.with_targets_in(validation_start..test_start),
        test: all.with_targets_in(test_start..data.len()),
        scaler,
        scaled,
        validation_start,
        test_start,
    })
}

/// Evaluation-mode predictions for every sample, in order.
pub fn predict(model: &mut Model, samples: &Windows, batch_size: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(samples.len());
    let positions: Vec<usize> = (0..samples.len()).collect();
    for chunk in positions.chunks(batch_size.max(1)) {
        let (x, _) = samples.batch(chunk)?;
        out.extend_from_slice(model.forward(&x, false)?.data());
    }
    Ok(out)
}

/// Evaluation-mode mean squared error.
pub fn evaluate_mse(model: &mut Model, samples: &Windows, batch_size: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("no samples to evaluate".into()));
    }
    let pred = predict(model, samples, batch_size)?;
    let sq: f64 = pred.iter().zip(&samples.targets).map(|(p, y)| (p - y) * (p - y)).sum();
    Ok(sq / samples.len() as f64)
}

/// Scales gradients so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(params: &mut [&mut Param], max_norm: f64) -> f64 {
    let norm = params.iter().map(|p| p.grad.sq_norm()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for p in params.iter_mut() {
            p.grad = p.grad.scale(s);
        }
    }
    norm
}

/// Trains `model` in place and leaves it holding the best-epoch weights.
/// Without validation samples the training windows are monitored instead.
pub fn train(model: &mut Model, train_set: &Windows, validation: &Windows, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if train_set.lookup != model.lookup() || train_set.names != model.modalities() {
        return Err(Error::Data(format!(
            "samples ({:?}, lookup {}) do not fit model ({:?}, lookup {})",
            train_set.names,
            train_set.lookup,
            model.modalities(),
            model.lookup()
        )));
    }
    let monitor = if validation.is_empty() { train_set } else { validation };
    let monitored = if validation.is_empty() { "train" } else { "validation" };

    let mut rng = Rng::new(config.seed);
    model.reseed_dropout(rng.next_u64());
    let adam_config = AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam = Adam::new(adam_config, &model.params());
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_weights = model.snapshot();
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_mse: f64::INFINITY,
        stopped_early: false,
        monitored: monitored.into(),
        epoch_seconds: Vec::new(),
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        rng.shuffle(&mut order);
        let mut sq_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let (x, y) = train_set.batch(chunk)?;
            model.zero_grad();
            let pred = model.forward(&x, true)?;
            let value = loss(&pred, &y, &model.params(), config.l2)?;
            if !value.total.is_finite() {
                return Err(Error::Numerical(format!(
                    "loss diverged to {} at epoch {epoch}, batch {}",
                    value.total,
                    b + 1
                )));
            }
            sq_sum += value.data * chunk.len() as f64;
            model.backward(&mse_gradient(&pred, &y)?)?;
            let mut params = model.params_mut();
            add_decay_gradient(&mut params, config.l2);
            if config.clip_gradients {
                clip_global_norm(&mut params, CLIP_NORM);
            }
            adam.step(&mut params)?;
        }
        let train_mse = sq_sum / train_set.len() as f64;
        let val_mse = evaluate_mse(model, monitor, config.batch_size)?;
        if !val_mse.is_finite() {
            return Err(Error::Numerical(format!("{monitored} MSE is {val_mse} after epoch {epoch}")));
        }
        report.epochs.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
        });
        report.epoch_seconds.push(started.elapsed().as_secs_f64());
        log::debug!("epoch {epoch}: train {train_mse:.6e}, {monitored} {val_mse:.6e}");
        match stopper.observe(epoch, val_mse) {
            Verdict::Improved => best_weights = model.snapshot(),
            Verdict::Continue => {}
            Verdict::Stop => {
                report.stopped_early = true;
                break;
            }
        }
    }
    model.restore(&best_weights)?;
    report.best_epoch = stopper.best_epoch();
    report.best_val_mse = stopper.best();
    Ok(report)
}

fn add_decay_gradient(params: &mut [&mut Param], lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    for p in params.iter_mut().filter(|p| p.decay) {
        let Param { value, grad, .. } = &mut **p;
        for (g, w) in grad.data_mut().iter_mut().zip(value.data()) {
            *g += lambda * w;
        }
    }
}
