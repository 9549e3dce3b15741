use super::{LearnerError, ModelParameters, TrainingConfig};

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

/// One Adam update with bias correction. Weight decay enters as an L2 term
/// added to the gradient before the moment updates (not decoupled).
///
/// A gradient containing NaN or infinity is rejected and leaves both the
/// parameters and the optimizer state untouched.
pub fn adam_step(
    params: &mut ModelParameters,
    gradient: &[f64],
    state: &mut AdamState,
    config: &TrainingConfig,
) -> Result<(), LearnerError> {
    let n = params.values.len();
    if gradient.len() != n {
        return Err(LearnerError::DimensionMismatch { expected: n, actual: gradient.len() });
    }
    if state.m.len() != n || state.v.len() != n {
        return Err(LearnerError::DimensionMismatch { expected: n, actual: state.m.len() });
    }
    if let Some((index, &value)) = gradient.iter().enumerate().find(|(_, g)| !g.is_finite()) {
        return Err(LearnerError::NonFiniteGradient { index, value });
    }

    state.step += 1;
    let t = state.step as i32;
    let correction1 = 1.0 - config.beta1.powi(t);
    let correction2 = 1.0 - config.beta2.powi(t);

    #[allow(clippy::needless_range_loop)]
    for i in 0..n {
        let w = params.values[i];
        let g = gradient[i] + config.weight_decay * w;
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = state.m[i] / correction1;
        let v_hat = state.v[i] / correction2;
        params.values[i] = w - config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    Ok(())
}
