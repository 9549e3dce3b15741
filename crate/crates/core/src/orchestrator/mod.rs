//! Runs the two execution policies over a set of stations: sequential
//! (optionally cyclic) institutional incremental learning and parallel
//! federated averaging, plus the centralized baseline.

mod aggregate;
mod messages;
mod run;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use aggregate::aggregate;
pub use messages::{decode_envelope, encode_envelope, serve, Envelope, InProcessLink, Message, StationLink, WireLog};
pub use run::{run_centralized, Orchestrator, RunOutput};

use crate::bundle::{BundleError, TaskConfig};
use crate::learner::{EpochRecord, LearnerError};
use crate::metrics::Evaluation;
use crate::partition::StationId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Iil,
    CyclicIil,
    Fl,
    Centralized,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Iil => "iil",
            Policy::CyclicIil => "cyclic_iil",
            Policy::Fl => "fl",
            Policy::Centralized => "centralized",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Policy::Iil => "Distributed (IIL)",
            Policy::CyclicIil => "Distributed (cyclic IIL)",
            Policy::Fl => "Distributed (FL)",
            Policy::Centralized => "Centralized",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Uniform,
    BySampleCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub policy: Policy,
    pub stations: Vec<StationId>,
    /// Passes over the route (IIL is always 1).
    pub cycles: u32,
    /// Federated rounds.
    pub rounds: u32,
    pub local_epochs: u32,
    pub weighting: Weighting,
    /// Parameter initialization seed.
    pub seed: u64,
    pub task: TaskConfig,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: &str| Err(OrchestratorError::InvalidPlan(m.to_owned()));
        match self.policy {
            Policy::Iil | Policy::CyclicIil => {
                if self.stations.is_empty() {
                    return bad("IIL requires a non-empty route");
                }
                if self.cycles == 0 {
                    return bad("cycles must be at least 1");
                }
                if self.policy == Policy::Iil && self.cycles != 1 {
                    return bad("single-pass IIL runs exactly one cycle; use cyclic_iil");
                }
            }
            Policy::Fl => {
                if self.stations.is_empty() {
                    return bad("FL requires at least one station");
                }
                if self.rounds == 0 {
                    return bad("FL requires rounds >= 1");
                }
            }
            Policy::Centralized => {}
        }
        self.task.model.validate()?;
        self.task.training.validate()?;
        Ok(())
    }

    /// The task with the plan's local epoch count applied.
    pub fn effective_task(&self) -> TaskConfig {
        let mut task = self.task.clone();
        task.training.epochs = self.local_epochs;
        task
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub train_loss: f64,
    pub mean_accuracy: Option<f64>,
    pub mean_recall: Option<f64>,
}

impl From<&EpochRecord> for EpochSummary {
    fn from(e: &EpochRecord) -> Self {
        Self {
            train_loss: e.train_loss,
            mean_accuracy: e.validation.as_ref().map(|v| v.mean_accuracy),
            mean_recall: e.validation.as_ref().map(|v| v.mean_recall),
        }
    }
}

/// A contiguous stretch of epochs: one IIL visit, one FL round, or the
/// whole centralized run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub label: String,
    pub station: Option<StationId>,
    pub index: u32,
    pub epochs: Vec<EpochSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaTrace {
    pub round: u32,
    pub station: StationId,
    pub sample_count: usize,
    pub epochs: Vec<EpochSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    TrainCreated { train_id: String },
    VisitCompleted { station: StationId, visit: u32 },
    Hop { from: StationId, to: StationId },
    RoundComplete { round: u32 },
    Failure { station: Option<StationId>, reason: String },
    Finished,
}

/// Timestamps are logical: the number of epochs completed so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub global_epoch: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub policy: Policy,
    pub segments: Vec<Segment>,
    pub replicas: Vec<ReplicaTrace>,
    pub final_test: Option<Evaluation>,
    pub events: Vec<Event>,
}

impl RunRecord {
    pub fn new(run_id: impl Into<String>, policy: Policy) -> Self {
        Self { run_id: run_id.into(), policy, segments: Vec::new(), replicas: Vec::new(), final_test: None, events: Vec::new() }
    }

    pub fn global_epochs(&self) -> u64 {
        self.segments.iter().map(|s| s.epochs.len() as u64).sum()
    }

    pub fn loss_trace(&self) -> Vec<f64> {
        self.segments.iter().flat_map(|s| s.epochs.iter().map(|e| e.train_loss)).collect()
    }

    /// Global epochs at which the train moved to another station.
    pub fn hop_epochs(&self) -> Vec<u64> {
        self.events.iter().filter(|e| matches!(e.kind, EventKind::Hop { .. })).map(|e| e.global_epoch).collect()
    }

    pub(crate) fn log(&mut self, kind: EventKind) {
        let seq = self.events.len() as u64;
        let global_epoch = self.global_epochs();
        self.events.push(Event { seq, global_epoch, kind });
    }
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("no link to {0}")]
    UnknownStation(StationId),
    #[error("aggregation: {0}")]
    Aggregation(String),
    #[error("wire protocol: {0}")]
    Wire(String),
    #[error("{station:?} failed: {reason}")]
    StationFailed { station: Option<StationId>, reason: String, partial: Box<RunRecord> },
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

impl OrchestratorError {
    /// The partial record of an aborted run, if any.
    pub fn partial_record(&self) -> Option<&RunRecord> {
        match self {
            OrchestratorError::StationFailed { partial, .. } => Some(partial),
            _ => None,
        }
    }
}
