//! The Train: manifest plus parameter snapshot, committed as immutable
//! versions and exchanged through a registry.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! "PHTTRAIN" | u8 container_version = 1
//! entry*:  u16 name_len | name (UTF-8) | u64 data_len | data
//!   manifest.json   manifest as JSON
//!   params.bin      parameters in the binary parameter layout
//!   optimizer.bin   optional Adam state (only when it travels with the train)
//!   digest          32-byte SHA-256 of every byte before this entry's header
//! ```

mod container;
mod registry;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use container::{decode_optimizer, encode_optimizer};
pub use registry::{HistoryEntry, TrainRegistry};

use crate::learner::{AdamState, LearnerError, ModelParameters, ModelSpec, TrainingConfig};
use crate::partition::StationId;
use crate::preprocess::AugmentConfig;

pub const DIGEST_ALGORITHM: &str = "sha256";

/// Everything a station needs to run the analytic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub training: TrainingConfig,
    pub augment: AugmentConfig,
    pub model: ModelSpec,
    /// Ship the Adam moments with the train instead of resetting them at every hop.
    #[serde(default)]
    pub carry_optimizer_state: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub station: StationId,
    /// Position on the unrolled route (route index + cycle * route length).
    pub visit: u32,
    pub epochs: u32,
    pub train_samples: usize,
    pub final_loss: Option<f64>,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub station: StationId,
    pub visit: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainManifest {
    pub train_id: String,
    pub task: TaskConfig,
    pub route: Vec<StationId>,
    pub cycles: u32,
    /// Index of the next visit on the unrolled route.
    pub cursor: u32,
    /// Bumped on every new snapshot, commit or failure record alike.
    pub revision: u64,
    pub init_seed: u64,
    pub digest_algorithm: String,
    /// Completed visits, append-only.
    pub provenance: Vec<VisitRecord>,
    /// Visits that failed; the parameters were left untouched.
    pub failures: Vec<FailureRecord>,
}

impl TrainManifest {
    pub fn total_visits(&self) -> u32 {
        self.route.len() as u32 * self.cycles
    }

    pub fn pending_visits(&self) -> u32 {
        self.total_visits().saturating_sub(self.cursor)
    }

    pub fn next_station(&self) -> Option<StationId> {
        (self.cursor < self.total_visits()).then(|| self.route[self.cursor as usize % self.route.len()])
    }

    pub fn is_complete(&self) -> bool {
        self.cursor >= self.total_visits()
    }
}

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("route must not be empty")]
    EmptyRoute,
    #[error("cycles must be at least 1")]
    NoCycles,
    #[error("digest mismatch: bundle has been tampered with")]
    Tampered,
    #[error("malformed bundle: {0}")]
    Malformed(String),
    #[error("train {0} is already complete")]
    Complete(String),
    #[error("train {0} not found")]
    NotFound(String),
    #[error("out-of-order push for {train_id}: revision {got} after {latest}")]
    OutOfOrder { train_id: String, latest: u64, got: u64 },
    #[error("push for {0} rewrites provenance")]
    ProvenanceRewritten(String),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("manifest json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Manifest + parameters (+ optional optimizer state) sealed by a digest.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBundle {
    pub manifest: TrainManifest,
    pub parameters: ModelParameters,
    pub optimizer: Option<AdamState>,
    digest: [u8; 32],
}

impl TrainBundle {
    fn sealed(manifest: TrainManifest, parameters: ModelParameters, optimizer: Option<AdamState>) -> Result<Self, BundleError> {
        let mut bundle = Self { manifest, parameters, optimizer, digest: [0; 32] };
        bundle.digest = container::body_digest(&container::encode_body(&bundle)?);
        Ok(bundle)
    }

    pub fn digest(&self) -> [u8; 32] {
        self.digest
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest)
    }

    /// Recompute the digest over the current contents.
    pub fn verify(&self) -> Result<(), BundleError> {
        if container::body_digest(&container::encode_body(self)?) != self.digest {
            return Err(BundleError::Tampered);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, BundleError> {
        container::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BundleError> {
        container::decode(bytes)
    }

    pub fn train_id(&self) -> &str {
        &self.manifest.train_id
    }

    pub fn next_station(&self) -> Option<StationId> {
        self.manifest.next_station()
    }

    pub fn is_complete(&self) -> bool {
        self.manifest.is_complete()
    }
}

/// New train with freshly initialized parameters (version 1), cursor 0 and
/// empty provenance.
pub fn create_train(
    train_id: impl Into<String>,
    task: TaskConfig,
    route: Vec<StationId>,
    cycles: u32,
    init_seed: u64,
) -> Result<TrainBundle, BundleError> {
    if route.is_empty() {
        return Err(BundleError::EmptyRoute);
    }
    if cycles == 0 {
        return Err(BundleError::NoCycles);
    }
    task.model.validate()?;
    task.training.validate()?;
    let parameters = ModelParameters::initialize(&task.model, init_seed);
    let optimizer = task.carry_optimizer_state.then(|| AdamState::new(parameters.len()));
    let manifest = TrainManifest {
        train_id: train_id.into(),
        task,
        route,
        cycles,
        cursor: 0,
        revision: 0,
        init_seed,
        digest_algorithm: DIGEST_ALGORITHM.into(),
        provenance: Vec::new(),
        failures: Vec::new(),
    };
    TrainBundle::sealed(manifest, parameters, optimizer)
}

/// Snapshot a completed visit. The input bundle is left as it was.
pub fn commit(
    bundle: &TrainBundle,
    parameters: ModelParameters,
    visit: VisitRecord,
    optimizer: Option<AdamState>,
) -> Result<TrainBundle, BundleError> {
    commit_round(bundle, parameters, vec![visit], optimizer)
}

/// Snapshot several visits at once (one federated round). The cursor and
/// the parameter version both advance by the number of visits.
pub fn commit_round(
    bundle: &TrainBundle,
    mut parameters: ModelParameters,
    visits: Vec<VisitRecord>,
    optimizer: Option<AdamState>,
) -> Result<TrainBundle, BundleError> {
    bundle.verify()?;
    if bundle.manifest.pending_visits() < visits.len() as u32 {
        return Err(BundleError::Complete(bundle.manifest.train_id.clone()));
    }
    let mut manifest = bundle.manifest.clone();
    manifest.cursor += visits.len() as u32;
    manifest.revision += 1;
    manifest.provenance.extend(visits);
    parameters.version = manifest.provenance.len() as u64 + 1;
    let optimizer = if manifest.task.carry_optimizer_state { optimizer } else { None };
    TrainBundle::sealed(manifest, parameters, optimizer)
}

/// Snapshot a failed visit: parameters and cursor unchanged, failure logged.
pub fn record_failure(bundle: &TrainBundle, failure: FailureRecord) -> Result<TrainBundle, BundleError> {
    bundle.verify()?;
    let mut manifest = bundle.manifest.clone();
    manifest.revision += 1;
    manifest.failures.push(failure);
    TrainBundle::sealed(manifest, bundle.parameters.clone(), bundle.optimizer.clone())
}
