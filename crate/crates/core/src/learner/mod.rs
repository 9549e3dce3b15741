//! The numerical core: a small multiclass classifier, cross-entropy,
//! Adam with L2 weight decay and the epoch-based local training loop.

mod adam;
mod codec;
mod model;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{adam_step, AdamState};
pub use codec::{decode_parameters, encode_parameters};
pub use model::{
    cross_entropy, forward, loss_and_gradient, predict, regularized_loss_and_gradient, ModelParameters, ModelSpec,
    PROBABILITY_FLOOR,
};
pub use train::{evaluate, train_local, train_local_from, EpochRecord, SampleSource, TrainOutcome, TrainingData};

/// Class index in `[0, C)`.
pub type ClassLabel = usize;

/// A preprocessed sample: flattened features plus its class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: ClassLabel,
}

impl LabeledSample {
    pub fn new(features: Vec<f64>, label: ClassLabel) -> Self {
        Self { features, label }
    }
}

/// Hyperparameters of a local training session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            learning_rate: 1e-4,
            weight_decay: 5e-4,
            batch_size: 16,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |field: &'static str, reason: &str| Err(LearnerError::Config(format!("{field}: {reason}")));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate", "must be a positive finite number");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            return bad("beta1", "must lie in (0, 1)");
        }
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta2", "must lie in (0, 1)");
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad("epsilon", "must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty training split")]
    EmptyTrainingSet,
    #[error("non-finite gradient entry at index {index}: {value}")]
    NonFiniteGradient { index: usize, value: f64 },
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: u32, loss: f64, partial_trace: Vec<f64> },
    #[error("invalid parameter encoding: {0}")]
    Codec(String),
}
