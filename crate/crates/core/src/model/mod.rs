//! Runtime models over featurized joint graphs: the graph model and the
//! flat-vector baseline. Both regress ln(runtime in seconds).

mod flat;
mod gnn;
mod nn;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use flat::{flat_featurize, flat_forward, flat_slot, flat_slot_names, flat_train, init_flat_model, FlatModel, FLAT_VERSION};
pub use gnn::{
    dataset_loss, forward, gradient_check, gradient_check_with, init_model, train, Model, ModelConfig, Tensor,
    GRADIENT_CHECK_SAMPLES, MODEL_VERSION,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("graph does not match the model's encoder: {0}")]
    EncoderMismatch(String),
    #[error("empty training set")]
    EmptyDataset,
    #[error("label {0} is not a positive runtime")]
    NonPositiveLabel(f64),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub log_runtime: f64,
    pub runtime_seconds: f64,
}

impl Prediction {
    /// Clamped so `runtime_seconds` stays positive and finite.
    pub fn from_log(log_runtime: f64) -> Prediction {
        let log_runtime = log_runtime.clamp(-700.0, 700.0);
        Prediction { log_runtime, runtime_seconds: log_runtime.exp() }
    }
}

/// Standardization of ln(runtime) targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetNorm {
    pub mean: f64,
    pub std: f64,
}

impl Default for TargetNorm {
    fn default() -> Self {
        TargetNorm { mean: 0.0, std: 1.0 }
    }
}

impl TargetNorm {
    /// Degenerate spreads (below 1e-6) get unit scale.
    pub fn fit(values: impl Iterator<Item = f64>) -> TargetNorm {
        let (mut n, mut s, mut ss) = (0.0, 0.0, 0.0);
        for v in values {
            n += 1.0;
            s += v;
            ss += v * v;
        }
        if n == 0.0 {
            return TargetNorm::default();
        }
        let mean = s / n;
        let std = (ss / n - mean * mean).max(0.0).sqrt();
        TargetNorm { mean, std: if std > 1e-6 { std } else { 1.0 } }
    }

    pub fn normalize(&self, ln_y: f64) -> f64 {
        (ln_y - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub patience: usize,
    /// Share of the dataset held out for early stopping.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 1e-3, epochs: 200, batch_size: 32, seed: 0, patience: 20, val_fraction: 0.1 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(ModelError::Config("learning rate, epochs, batch size and patience must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(ModelError::Config("validation fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Losses are mean squared errors in ln(seconds)².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn check_dataset<T>(data: &[(T, f64)]) -> Result<(), ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if let Some((_, y)) = data.iter().find(|(_, y)| !(*y > 0.0 && y.is_finite())) {
        return Err(ModelError::NonPositiveLabel(*y));
    }
    Ok(())
}

/// Seeded split into (train, validation) index sets, each ascending. The
/// training side always keeps at least one sample.
fn split_validation(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed)));
    let n_val = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

#[cfg(test)]
mod tests;
