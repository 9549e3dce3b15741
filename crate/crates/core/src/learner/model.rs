use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ClassLabel, LabeledSample, LearnerError};
use crate::rng::stream_rng;

/// Probabilities are floored here before taking the log, so the loss stays finite.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

const LINEAR_WEIGHT: &str = "linear.weight";
const LINEAR_BIAS: &str = "linear.bias";
const HIDDEN_WEIGHT: &str = "hidden.weight";
const HIDDEN_BIAS: &str = "hidden.bias";
const OUTPUT_WEIGHT: &str = "output.weight";
const OUTPUT_BIAS: &str = "output.bias";

/// Architecture of the classifier: softmax regression when `hidden` is
/// `None`, otherwise one tanh hidden layer of the given width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden: Option<usize>,
    pub classes: usize,
}

impl ModelSpec {
    pub fn softmax(input_dim: usize, classes: usize) -> Self {
        Self { input_dim, hidden: None, classes }
    }

    pub fn mlp(input_dim: usize, hidden: usize, classes: usize) -> Self {
        Self { input_dim, hidden: Some(hidden), classes }
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        if self.input_dim == 0 {
            return Err(LearnerError::Config("input_dim must be positive".into()));
        }
        if self.classes < 2 {
            return Err(LearnerError::Config("at least two classes are required".into()));
        }
        if self.hidden == Some(0) {
            return Err(LearnerError::Config("hidden width must be positive".into()));
        }
        Ok(())
    }

    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        match self.hidden {
            None => vec![
                (LINEAR_WEIGHT.into(), vec![self.classes, self.input_dim]),
                (LINEAR_BIAS.into(), vec![self.classes]),
            ],
            Some(h) => vec![
                (HIDDEN_WEIGHT.into(), vec![h, self.input_dim]),
                (HIDDEN_BIAS.into(), vec![h]),
                (OUTPUT_WEIGHT.into(), vec![self.classes, h]),
                (OUTPUT_BIAS.into(), vec![self.classes]),
            ],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.shapes().iter().map(|(_, dims)| dims.iter().product::<usize>()).sum()
    }

    /// Recover the architecture from layer shapes.
    pub fn from_shapes(shapes: &[(String, Vec<usize>)]) -> Result<Self, LearnerError> {
        let names: Vec<&str> = shapes.iter().map(|(n, _)| n.as_str()).collect();
        let dims = |i: usize, rank: usize| -> Result<&[usize], LearnerError> {
            let d = &shapes[i].1;
            if d.len() != rank {
                return Err(LearnerError::Config(format!("layer {} must have rank {rank}", shapes[i].0)));
            }
            Ok(d)
        };
        let spec = match names.as_slice() {
            [LINEAR_WEIGHT, LINEAR_BIAS] => {
                let w = dims(0, 2)?;
                let b = dims(1, 1)?;
                if w[0] != b[0] {
                    return Err(LearnerError::Config("linear bias does not match weight rows".into()));
                }
                ModelSpec::softmax(w[1], w[0])
            }
            [HIDDEN_WEIGHT, HIDDEN_BIAS, OUTPUT_WEIGHT, OUTPUT_BIAS] => {
                let hw = dims(0, 2)?;
                let hb = dims(1, 1)?;
                let ow = dims(2, 2)?;
                let ob = dims(3, 1)?;
                if hw[0] != hb[0] || ow[1] != hw[0] || ow[0] != ob[0] {
                    return Err(LearnerError::Config("inconsistent hidden layer shapes".into()));
                }
                ModelSpec::mlp(hw[1], hw[0], ow[0])
            }
            _ => return Err(LearnerError::Config(format!("unrecognized layer layout {names:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Flat parameter vector with layer shape metadata and a commit version.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub values: Vec<f64>,
    pub shapes: Vec<(String, Vec<usize>)>,
    pub version: u64,
}

impl ModelParameters {
    pub fn new(values: Vec<f64>, shapes: Vec<(String, Vec<usize>)>, version: u64) -> Result<Self, LearnerError> {
        let expected: usize = shapes.iter().map(|(_, d)| d.iter().product::<usize>()).sum();
        if expected != values.len() {
            return Err(LearnerError::DimensionMismatch { expected, actual: values.len() });
        }
        Ok(Self { values, shapes, version })
    }

    pub fn zeros(spec: &ModelSpec) -> Self {
        Self { values: vec![0.0; spec.parameter_count()], shapes: spec.shapes(), version: 1 }
    }

    /// Initial parameters: zeros for softmax regression; for the MLP the
    /// hidden weights are uniform in `±1/sqrt(input_dim)` drawn from `seed`
    /// and everything else starts at zero.
    pub fn initialize(spec: &ModelSpec, seed: u64) -> Self {
        let mut params = Self::zeros(spec);
        if let Some(h) = spec.hidden {
            let bound = 1.0 / (spec.input_dim as f64).sqrt();
            let mut rng = stream_rng(seed, 0x1417);
            for w in &mut params.values[..h * spec.input_dim] {
                *w = rng.random_range(-bound..bound);
            }
        }
        params
    }

    pub fn spec(&self) -> Result<ModelSpec, LearnerError> {
        ModelSpec::from_shapes(&self.shapes)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Borrowed view of the parameter vector split into layers.
struct Network<'a> {
    spec: ModelSpec,
    hidden: Option<(&'a [f64], &'a [f64])>,
    out_w: &'a [f64],
    out_b: &'a [f64],
}

impl<'a> Network<'a> {
    fn new(params: &'a ModelParameters) -> Result<Self, LearnerError> {
        let spec = params.spec()?;
        if params.values.len() != spec.parameter_count() {
            return Err(LearnerError::DimensionMismatch { expected: spec.parameter_count(), actual: params.values.len() });
        }
        let v = params.values.as_slice();
        Ok(match spec.hidden {
            None => {
                let (w, b) = v.split_at(spec.classes * spec.input_dim);
                Self { spec, hidden: None, out_w: w, out_b: b }
            }
            Some(h) => {
                let (hw, rest) = v.split_at(h * spec.input_dim);
                let (hb, rest) = rest.split_at(h);
                let (ow, ob) = rest.split_at(spec.classes * h);
                Self { spec, hidden: Some((hw, hb)), out_w: ow, out_b: ob }
            }
        })
    }

    fn check_sample(&self, sample: &LabeledSample) -> Result<(), LearnerError> {
        if sample.features.len() != self.spec.input_dim {
            return Err(LearnerError::DimensionMismatch { expected: self.spec.input_dim, actual: sample.features.len() });
        }
        if sample.label >= self.spec.classes {
            return Err(LearnerError::LabelOutOfRange { label: sample.label, classes: self.spec.classes });
        }
        Ok(())
    }

    /// Hidden activations (if any) and class probabilities.
    fn forward_one(&self, x: &[f64]) -> (Option<Vec<f64>>, Vec<f64>) {
        let hidden = self.hidden.map(|(w, b)| {
            let d = self.spec.input_dim;
            b.iter().enumerate().map(|(j, bj)| (bj + dot(&w[j * d..(j + 1) * d], x)).tanh()).collect::<Vec<_>>()
        });
        let input = hidden.as_deref().unwrap_or(x);
        let width = input.len();
        let logits: Vec<f64> =
            self.out_b.iter().enumerate().map(|(c, bc)| bc + dot(&self.out_w[c * width..(c + 1) * width], input)).collect();
        (hidden, softmax(&logits))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Class-probability vectors for every sample of `batch`.
pub fn forward(params: &ModelParameters, batch: &[LabeledSample]) -> Result<Vec<Vec<f64>>, LearnerError> {
    if batch.is_empty() {
        return Err(LearnerError::EmptyBatch);
    }
    let net = Network::new(params)?;
    batch
        .iter()
        .map(|s| {
            if s.features.len() != net.spec.input_dim {
                return Err(LearnerError::DimensionMismatch { expected: net.spec.input_dim, actual: s.features.len() });
            }
            Ok(net.forward_one(&s.features).1)
        })
        .collect()
}

/// Most probable class for each sample.
pub fn predict(params: &ModelParameters, batch: &[LabeledSample]) -> Result<Vec<ClassLabel>, LearnerError> {
    Ok(forward(params, batch)?.iter().map(|p| argmax(p)).collect())
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Mean negative log-probability of the true classes.
pub fn cross_entropy(probabilities: &[Vec<f64>], labels: &[ClassLabel]) -> Result<f64, LearnerError> {
    if probabilities.is_empty() {
        return Err(LearnerError::EmptyBatch);
    }
    if probabilities.len() != labels.len() {
        return Err(LearnerError::DimensionMismatch { expected: probabilities.len(), actual: labels.len() });
    }
    let mut total = 0.0;
    for (p, &y) in probabilities.iter().zip(labels) {
        let py = *p.get(y).ok_or(LearnerError::LabelOutOfRange { label: y, classes: p.len() })?;
        total -= py.max(PROBABILITY_FLOOR).ln();
    }
    Ok(total / probabilities.len() as f64)
}

/// Mean cross-entropy over `batch` and its gradient with respect to every parameter.
pub fn loss_and_gradient(params: &ModelParameters, batch: &[LabeledSample]) -> Result<(f64, Vec<f64>), LearnerError> {
    let refs: Vec<&LabeledSample> = batch.iter().collect();
    batch_loss_and_gradient(params, &refs)
}

pub(crate) fn batch_loss_and_gradient(
    params: &ModelParameters,
    batch: &[&LabeledSample],
) -> Result<(f64, Vec<f64>), LearnerError> {
    if batch.is_empty() {
        return Err(LearnerError::EmptyBatch);
    }
    let net = Network::new(params)?;
    let spec = net.spec;
    let n = batch.len() as f64;
    let mut grad = vec![0.0; params.values.len()];
    let mut loss = 0.0;

    // Offsets of the output layer inside the flat vector.
    let (out_w_at, out_b_at) = match spec.hidden {
        None => (0, spec.classes * spec.input_dim),
        Some(h) => {
            let base = h * spec.input_dim + h;
            (base, base + spec.classes * h)
        }
    };

    for sample in batch {
        net.check_sample(sample)?;
        let (hidden, probs) = net.forward_one(&sample.features);
        loss -= probs[sample.label].max(PROBABILITY_FLOOR).ln();

        let dlogits: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(c, p)| (p - if c == sample.label { 1.0 } else { 0.0 }) / n)
            .collect();

        let input = hidden.as_deref().unwrap_or(&sample.features);
        let width = input.len();
        for (c, dz) in dlogits.iter().enumerate() {
            let row = &mut grad[out_w_at + c * width..out_w_at + (c + 1) * width];
            for (g, x) in row.iter_mut().zip(input) {
                *g += dz * x;
            }
            grad[out_b_at + c] += dz;
        }

        if let (Some(h), Some(act)) = (spec.hidden, hidden.as_ref()) {
            let d = spec.input_dim;
            for j in 0..h {
                let back: f64 = (0..spec.classes).map(|c| dlogits[c] * net.out_w[c * h + j]).sum();
                let dz = back * (1.0 - act[j] * act[j]);
                let row = &mut grad[j * d..(j + 1) * d];
                for (g, x) in row.iter_mut().zip(&sample.features) {
                    *g += dz * x;
                }
                grad[h * d + j] += dz;
            }
        }
    }
    Ok((loss / n, grad))
}

/// Cross-entropy plus `weight_decay / 2 * |θ|²`, the objective whose
/// gradient Adam follows once the L2 term is folded into the gradient.
pub fn regularized_loss_and_gradient(
    params: &ModelParameters,
    batch: &[LabeledSample],
    weight_decay: f64,
) -> Result<(f64, Vec<f64>), LearnerError> {
    let (loss, mut grad) = loss_and_gradient(params, batch)?;
    let mut penalty = 0.0;
    for (g, w) in grad.iter_mut().zip(&params.values) {
        *g += weight_decay * w;
        penalty += w * w;
    }
    Ok((loss + 0.5 * weight_decay * penalty, grad))
}
