use std::borrow::Cow;

use rand::seq::SliceRandom;

use super::model::{argmax, batch_loss_and_gradient};
use super::{adam_step, forward, AdamState, LabeledSample, LearnerError, ModelParameters, TrainingConfig};
use crate::metrics::{ConfusionMatrix, Evaluation};
use crate::rng::stream_rng;

/// Where a training session gets its samples from. The training split may
/// differ per epoch (augmentation is re-drawn every epoch); the validation
/// split is fixed.
pub trait SampleSource {
    fn training(&self, epoch: u32) -> Cow<'_, [LabeledSample]>;
    fn validation(&self) -> &[LabeledSample];
    fn training_len(&self) -> usize;
}

/// Plain in-memory train / validation splits.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingData {
    pub train: Vec<LabeledSample>,
    pub validation: Vec<LabeledSample>,
}

impl SampleSource for TrainingData {
    fn training(&self, _epoch: u32) -> Cow<'_, [LabeledSample]> {
        Cow::Borrowed(&self.train)
    }

    fn validation(&self) -> &[LabeledSample] {
        &self.validation
    }

    fn training_len(&self) -> usize {
        self.train.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number within the session.
    pub epoch: u32,
    /// Sample-weighted mean of the minibatch losses seen during the epoch.
    pub train_loss: f64,
    pub validation: Option<Evaluation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParameters,
    pub optimizer: AdamState,
    pub epochs: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn loss_trace(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

/// Loss, confusion matrix and derived metrics of `params` on `samples`.
pub fn evaluate(params: &ModelParameters, samples: &[LabeledSample]) -> Result<Evaluation, LearnerError> {
    let spec = params.spec()?;
    let probs = forward(params, samples)?;
    let mut cm = ConfusionMatrix::new(spec.classes);
    let mut loss = 0.0;
    for (p, s) in probs.iter().zip(samples) {
        if s.label >= spec.classes {
            return Err(LearnerError::LabelOutOfRange { label: s.label, classes: spec.classes });
        }
        loss -= p[s.label].max(super::PROBABILITY_FLOOR).ln();
        cm.accumulate(s.label, argmax(p)).expect("labels checked");
    }
    Ok(Evaluation::from_confusion(loss / samples.len() as f64, cm))
}

/// Train from fresh optimizer state.
pub fn train_local(
    params: &ModelParameters,
    source: &dyn SampleSource,
    config: &TrainingConfig,
) -> Result<TrainOutcome, LearnerError> {
    train_local_from(params, source, config, AdamState::new(params.len()))
}

/// Epoch loop: per-epoch Fisher-Yates shuffle from stream `epoch` of
/// `config.seed`, minibatches of `batch_size` (the last partial batch is
/// kept), one Adam step per batch, then validation metrics if the source
/// has a validation split.
pub fn train_local_from(
    params: &ModelParameters,
    source: &dyn SampleSource,
    config: &TrainingConfig,
    optimizer: AdamState,
) -> Result<TrainOutcome, LearnerError> {
    config.validate()?;
    if source.training_len() == 0 {
        return Err(LearnerError::EmptyTrainingSet);
    }
    let mut current = params.clone();
    current.version = params.version + 1;
    let mut state = optimizer;
    let mut epochs = Vec::with_capacity(config.epochs as usize);

    for epoch in 0..config.epochs {
        let samples = source.training(epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut stream_rng(config.seed, u64::from(epoch)));

        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&LabeledSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (loss, grad) = batch_loss_and_gradient(&current, &batch)?;
            let diverged = |loss: f64| LearnerError::Diverged {
                epoch: epoch + 1,
                loss,
                partial_trace: epochs.iter().map(|e: &EpochRecord| e.train_loss).collect(),
            };
            if !loss.is_finite() {
                return Err(diverged(loss));
            }
            match adam_step(&mut current, &grad, &mut state, config) {
                Ok(()) => {}
                Err(LearnerError::NonFiniteGradient { .. }) => return Err(diverged(loss)),
                Err(e) => return Err(e),
            }
            total += loss * batch.len() as f64;
        }

        let validation = if source.validation().is_empty() { None } else { Some(evaluate(&current, source.validation())?) };
        epochs.push(EpochRecord { epoch: epoch + 1, train_loss: total / samples.len() as f64, validation });
    }

    Ok(TrainOutcome { params: current, optimizer: state, epochs })
}
