use super::OrchestratorError;
use crate::learner::ModelParameters;

/// Element-wise weighted mean of replica parameters. Weights are
/// normalized internally; computed as `x_0 + Σ w_i (x_i - x_0)` so that
/// identical replicas come back bit for bit.
pub fn aggregate(replicas: &[ModelParameters], weights: &[f64]) -> Result<ModelParameters, OrchestratorError> {
    let first = replicas.first().ok_or_else(|| OrchestratorError::Aggregation("no replicas".into()))?;
    if replicas.len() != weights.len() {
        return Err(OrchestratorError::Aggregation(format!("{} replicas but {} weights", replicas.len(), weights.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(OrchestratorError::Aggregation("weights must be non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(OrchestratorError::Aggregation("weights must not all be zero".into()));
    }
    for r in replicas {
        if r.values.len() != first.values.len() || r.shapes != first.shapes {
            return Err(OrchestratorError::Aggregation(format!(
                "replica length {} does not match {}",
                r.values.len(),
                first.values.len()
            )));
        }
    }
    let mut values = first.values.clone();
    for (replica, w) in replicas.iter().zip(weights).skip(1) {
        let share = w / total;
        for (acc, (x, x0)) in values.iter_mut().zip(replica.values.iter().zip(&first.values)) {
            *acc += share * (x - x0);
        }
    }
    Ok(ModelParameters { values, shapes: first.shapes.clone(), version: first.version })
}
