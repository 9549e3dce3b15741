//! The data provider side: a FHIR-lite resource store with links into a
//! blob object store, and the execution environment that runs a train
//! against the station's own data.

mod objects;
mod resources;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use objects::ObjectStore;
pub use resources::{
    ApiResponse, DiagnosticClass, ImageStudyResource, MediaResource, PatientResource, Resource, ResourceStore, Sex, Subset,
};

use crate::bundle::{self, BundleError, FailureRecord, TaskConfig, TrainBundle, VisitRecord};
use crate::learner::{train_local_from, AdamState, EpochRecord, LearnerError, ModelParameters};
use crate::partition::{DatasetShard, StationId};
use crate::preprocess::{prepare, ImageSource, PreprocessError, RawImage};

#[derive(Debug, Error)]
pub enum StationError {
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: String },
    #[error("dangling {kind} reference {id}")]
    Dangling { kind: &'static str, id: String },
    #[error("unknown image study {0}")]
    UnknownStudy(String),
    #[error("invalid resource: {0}")]
    InvalidResource(String),
    #[error("shard for {0} is empty")]
    EmptyShard(StationId),
    #[error("no image supplied for sample {0}")]
    MissingSample(String),
    #[error("blob for Media {media_id} missing at {url}")]
    MissingBlob { media_id: String, url: String },
    #[error("blob for Media {media_id} could not be decoded: {reason}")]
    UndecodableBlob { media_id: String, reason: String },
    #[error("{station} is not next on the route (next: {next:?})")]
    NotNextOnRoute { station: StationId, next: Option<StationId> },
    #[error("invalid station config: {0}")]
    Config(String),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

/// Connection information handed to a train by the station admin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationConfig {
    pub station_id: StationId,
    pub resource_endpoint: String,
    pub object_endpoint: String,
    pub token: String,
    pub study_id: String,
}

impl StationConfig {
    /// In-process endpoints for station `id`.
    pub fn local(id: StationId) -> Self {
        Self {
            station_id: id,
            resource_endpoint: format!("mem://{id}/fhir"),
            object_endpoint: format!("mem://{id}/objects"),
            token: format!("token-{id}"),
            study_id: format!("imagestudy-{}", id.0),
        }
    }

    pub fn validate(&self) -> Result<(), StationError> {
        for (name, endpoint) in [("resource_endpoint", &self.resource_endpoint), ("object_endpoint", &self.object_endpoint)] {
            let parsed = url::Url::parse(endpoint).map_err(|e| StationError::Config(format!("{name}: {e}")))?;
            if !matches!(parsed.scheme(), "mem" | "http" | "https") {
                return Err(StationError::Config(format!("{name}: unsupported scheme {}", parsed.scheme())));
            }
        }
        if self.study_id.is_empty() {
            return Err(StationError::Config("study_id must not be empty".into()));
        }
        Ok(())
    }
}

/// A sample as handed over for ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestRecord {
    pub image: RawImage,
    pub label: DiagnosticClass,
    pub age: Option<u32>,
    pub sex: Option<Sex>,
    pub anatomical_site: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSample {
    pub patient_id: String,
    pub image: RawImage,
    pub label: DiagnosticClass,
    pub subset: Subset,
}

/// Outcome of running a train at a station.
#[derive(Debug, Clone)]
pub struct Execution {
    /// The new snapshot: committed on success, unchanged parameters plus a
    /// failure record otherwise.
    pub bundle: TrainBundle,
    pub outcome: Result<LocalRun, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalRun {
    pub epochs: Vec<EpochRecord>,
    pub train_samples: usize,
}

/// One federated replica's result.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaOutput {
    pub params: ModelParameters,
    pub sample_count: usize,
    pub epochs: Vec<EpochRecord>,
}

#[cfg(not(target_arch = "wasm32"))]
fn stopwatch() -> impl Fn() -> u64 {
    let start = std::time::Instant::now();
    move || start.elapsed().as_millis() as u64
}

#[cfg(target_arch = "wasm32")]
fn stopwatch() -> impl Fn() -> u64 {
    || 0
}

#[derive(Debug, Clone)]
pub struct Station {
    config: StationConfig,
    resources: ResourceStore,
    objects: ObjectStore,
}

impl Station {
    pub fn new(config: StationConfig) -> Result<Self, StationError> {
        config.validate()?;
        Ok(Self { config, resources: ResourceStore::new(), objects: ObjectStore::new() })
    }

    pub fn id(&self) -> StationId {
        self.config.station_id
    }

    pub fn config(&self) -> &StationConfig {
        &self.config
    }

    pub fn resources(&self) -> &ResourceStore {
        &self.resources
    }

    pub fn objects(&self) -> &ObjectStore {
        &self.objects
    }

    pub fn objects_mut(&mut self) -> &mut ObjectStore {
        &mut self.objects
    }

    pub fn content_url(&self, sample_id: &str) -> String {
        format!("{}/{sample_id}.png", self.config.station_id)
    }

    /// Create one Patient and one Media per sample, one ImageStudy over all
    /// of them, and store every image as PNG at its Media's content_url.
    pub fn ingest(
        &mut self,
        shard: &DatasetShard,
        records: &HashMap<String, IngestRecord>,
        study_name: &str,
    ) -> Result<(), StationError> {
        if shard.is_empty() {
            return Err(StationError::EmptyShard(shard.id));
        }
        let mut resources = self.resources.clone();
        let mut objects = self.objects.clone();
        let mut patient_refs = Vec::with_capacity(shard.len());
        let members = shard.train.iter().map(|id| (id, Subset::Train)).chain(shard.validation.iter().map(|id| (id, Subset::Validation)));
        for (id, subset) in members {
            let record = records.get(id).ok_or_else(|| StationError::MissingSample(id.clone()))?;
            let media_id = format!("media-{id}");
            let content_url = self.content_url(id);
            resources.insert(Resource::Media(MediaResource {
                id: media_id.clone(),
                content_url: content_url.clone(),
                label: record.label,
                subset,
            }))?;
            resources.insert(Resource::Patient(PatientResource {
                id: id.clone(),
                age: record.age,
                sex: record.sex,
                anatomical_site: record.anatomical_site.clone(),
                media_refs: vec![media_id],
            }))?;
            objects.put(content_url, record.image.to_png());
            patient_refs.push(id.clone());
        }
        resources.insert(Resource::ImageStudy(ImageStudyResource {
            id: self.config.study_id.clone(),
            name: study_name.to_owned(),
            patient_refs,
        }))?;
        resources.check_integrity()?;
        self.resources = resources;
        self.objects = objects;
        Ok(())
    }

    /// Follow study → patients (ascending id) → media → blob, decoding every image.
    pub fn resolve_dataset(&self, study_id: &str) -> Result<Vec<ResolvedSample>, StationError> {
        let patients = self.resources.patients_in_study(study_id)?;
        let mut out = Vec::with_capacity(patients.len());
        for patient in patients {
            for media_id in &patient.media_refs {
                let media = self.resources.media(media_id)?;
                let blob = self.objects.get(&media.content_url).ok_or_else(|| StationError::MissingBlob {
                    media_id: media.id.clone(),
                    url: media.content_url.clone(),
                })?;
                let image = RawImage::from_png(blob)
                    .map_err(|e| StationError::UndecodableBlob { media_id: media.id.clone(), reason: e.to_string() })?;
                out.push(ResolvedSample { patient_id: patient.id.clone(), image, label: media.label, subset: media.subset });
            }
        }
        Ok(out)
    }

    /// Resolved data cropped and resized for `task`, ready for training.
    pub fn local_source(&self, task: &TaskConfig) -> Result<ImageSource, StationError> {
        let mut train = Vec::new();
        let mut validation = Vec::new();
        for sample in self.resolve_dataset(&self.config.study_id)? {
            let image = prepare(&sample.image, task.augment.target_size)?;
            let entry = (image, sample.label.index());
            match sample.subset {
                Subset::Train => train.push(entry),
                Subset::Validation => validation.push(entry),
            }
        }
        Ok(ImageSource::new(train, &validation, task.augment.clone(), task.training.seed))
    }

    fn run_local(
        &self,
        params: &ModelParameters,
        task: &TaskConfig,
        optimizer: Option<AdamState>,
    ) -> Result<(crate::learner::TrainOutcome, usize), StationError> {
        let source = self.local_source(task)?;
        let state = match optimizer {
            Some(s) if task.carry_optimizer_state && s.m.len() == params.len() => s,
            _ => AdamState::new(params.len()),
        };
        let outcome = train_local_from(params, &source, &task.training, state)?;
        Ok((outcome, crate::learner::SampleSource::training_len(&source)))
    }

    /// Run the train's task on local data and commit the result as a new
    /// bundle version. Data errors do not fail the call: they come back as
    /// a failure record on an otherwise unchanged bundle.
    pub fn execute_train(&self, bundle: &TrainBundle) -> Result<Execution, StationError> {
        bundle.verify()?;
        let next = bundle.next_station();
        if next != Some(self.id()) {
            return Err(StationError::NotNextOnRoute { station: self.id(), next });
        }
        let visit = bundle.manifest.cursor;
        let elapsed = stopwatch();
        match self.run_local(&bundle.parameters, &bundle.manifest.task, bundle.optimizer.clone()) {
            Ok((outcome, train_samples)) => {
                let record = VisitRecord {
                    station: self.id(),
                    visit,
                    epochs: outcome.epochs.len() as u32,
                    train_samples,
                    final_loss: outcome.final_loss(),
                    wall_time_ms: elapsed(),
                };
                let committed = bundle::commit(bundle, outcome.params, record, Some(outcome.optimizer))?;
                Ok(Execution { bundle: committed, outcome: Ok(LocalRun { epochs: outcome.epochs, train_samples }) })
            }
            Err(e) => {
                let reason = e.to_string();
                let failed = bundle::record_failure(bundle, FailureRecord { station: self.id(), visit, reason: reason.clone() })?;
                Ok(Execution { bundle: failed, outcome: Err(reason) })
            }
        }
    }

    /// Train a broadcast replica locally (federated round).
    pub fn train_replica(&self, params: &ModelParameters, task: &TaskConfig) -> Result<ReplicaOutput, StationError> {
        let (outcome, sample_count) = self.run_local(params, task, None)?;
        Ok(ReplicaOutput { params: outcome.params, sample_count, epochs: outcome.epochs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{create_train, TaskConfig};
    use crate::learner::{ModelSpec, TrainingConfig};
    use crate::preprocess::AugmentConfig;

    fn image(seed: u8) -> RawImage {
        RawImage::new(4, 4, (0..48u8).map(|i| i.wrapping_mul(seed).wrapping_add(seed)).collect()).unwrap()
    }

    fn records(n: usize) -> HashMap<String, IngestRecord> {
        (0..n)
            .map(|i| {
                let rec = IngestRecord {
                    image: image(i as u8 + 1),
                    label: DiagnosticClass::from_index(i % 2).unwrap(),
                    age: Some(30),
                    sex: None,
                    anatomical_site: None,
                };
                (format!("s{i:03}"), rec)
            })
            .collect()
    }

    fn shard(n: usize, validation: usize) -> DatasetShard {
        let ids: Vec<String> = (0..n).map(|i| format!("s{i:03}")).collect();
        DatasetShard { id: StationId(1), train: ids[validation..].to_vec(), validation: ids[..validation].to_vec() }
    }

    fn station(n: usize) -> Station {
        let mut s = Station::new(StationConfig::local(StationId(1))).unwrap();
        s.ingest(&shard(n, n / 4), &records(n), "desk").unwrap();
        s
    }

    fn task() -> TaskConfig {
        TaskConfig {
            training: TrainingConfig { epochs: 2, learning_rate: 0.01, ..Default::default() },
            augment: AugmentConfig::identity(4),
            model: ModelSpec::softmax(48, 8),
            carry_optimizer_state: false,
        }
    }

    #[test]
    fn ingest_counts() {
        let s = station(2);
        assert_eq!(s.resources().counts(), (2, 2, 1));
        assert_eq!(s.objects().len(), 2);
        assert!(s.objects().get("station-1/s000.png").is_some());
        s.resources().check_integrity().unwrap();
    }

    #[test]
    fn ingest_rejects_empty_shard_and_duplicates() {
        let mut s = Station::new(StationConfig::local(StationId(1))).unwrap();
        let empty = DatasetShard { id: StationId(1), train: vec![], validation: vec![] };
        assert!(matches!(s.ingest(&empty, &records(1), "x"), Err(StationError::EmptyShard(_))));
        let mut dup = shard(3, 0);
        dup.validation.push(dup.train[0].clone());
        assert!(matches!(s.ingest(&dup, &records(3), "x"), Err(StationError::DuplicateId { .. })));
        // failed ingest leaves the store untouched
        assert_eq!(s.resources().counts(), (0, 0, 0));
    }

    #[test]
    fn resolve_returns_images_in_patient_order() {
        let s = station(4);
        let before = s.resources().state_digest();
        let resolved = s.resolve_dataset("imagestudy-1").unwrap();
        assert_eq!(resolved.iter().map(|r| r.patient_id.as_str()).collect::<Vec<_>>(), vec!["s000", "s001", "s002", "s003"]);
        assert_eq!(resolved[1].image, image(2));
        assert_eq!(resolved[0].subset, Subset::Validation);
        assert_eq!(resolved[1].subset, Subset::Train);
        assert_eq!(s.resources().state_digest(), before);
    }

    #[test]
    fn empty_study_resolves_to_nothing() {
        let mut s = Station::new(StationConfig::local(StationId(1))).unwrap();
        let mut store = ResourceStore::new();
        store.insert_json(r#"{"resourceType":"ImageStudy","id":"imagestudy-1","name":"e","patient_refs":[]}"#).unwrap();
        s.resources = store;
        assert!(s.resolve_dataset("imagestudy-1").unwrap().is_empty());
        assert!(matches!(s.resolve_dataset("other"), Err(StationError::UnknownStudy(_))));
    }

    #[test]
    fn deleted_blob_is_reported_by_media_id() {
        let mut s = station(3);
        s.objects_mut().delete("station-1/s001.png");
        match s.resolve_dataset("imagestudy-1") {
            Err(StationError::MissingBlob { media_id, .. }) => assert_eq!(media_id, "media-s001"),
            other => panic!("unexpected {other:?}"),
        }
        s.objects_mut().put("station-1/s001.png", b"garbage".to_vec());
        assert!(matches!(s.resolve_dataset("imagestudy-1"), Err(StationError::UndecodableBlob { .. })));
    }

    #[test]
    fn execute_commits_one_visit() {
        let s = station(8);
        let b = create_train("t", task(), vec![StationId(1)], 1, 0).unwrap();
        let exec = s.execute_train(&b).unwrap();
        let run = exec.outcome.unwrap();
        assert_eq!(run.epochs.len(), 2);
        assert_eq!(run.train_samples, 6);
        assert_eq!(exec.bundle.manifest.provenance.len(), 1);
        assert_eq!(exec.bundle.manifest.provenance[0].station, StationId(1));
        assert!(exec.bundle.is_complete());
    }

    #[test]
    fn zero_epochs_keeps_parameters() {
        let s = station(4);
        let mut t = task();
        t.training.epochs = 0;
        let b = create_train("t", t, vec![StationId(1)], 1, 0).unwrap();
        let exec = s.execute_train(&b).unwrap();
        assert_eq!(exec.bundle.parameters.values, b.parameters.values);
        assert_eq!(exec.bundle.manifest.provenance.len(), 1);
    }

    #[test]
    fn wrong_station_is_rejected() {
        let s = station(4);
        let b = create_train("t", task(), vec![StationId(2), StationId(1)], 1, 0).unwrap();
        assert!(matches!(s.execute_train(&b), Err(StationError::NotNextOnRoute { .. })));
    }

    #[test]
    fn data_failure_returns_unmodified_bundle_with_failure() {
        let mut s = station(4);
        s.objects_mut().delete("station-1/s002.png");
        let b = create_train("t", task(), vec![StationId(1)], 1, 0).unwrap();
        let exec = s.execute_train(&b).unwrap();
        assert!(exec.outcome.unwrap_err().contains("media-s002"));
        assert_eq!(exec.bundle.parameters, b.parameters);
        assert_eq!(exec.bundle.manifest.cursor, 0);
        assert_eq!(exec.bundle.manifest.failures.len(), 1);
    }

    #[test]
    fn committed_bundle_carries_no_pixels() {
        let s = station(6);
        let b = create_train("t", task(), vec![StationId(1)], 1, 0).unwrap();
        let bytes = s.execute_train(&b).unwrap().bundle.to_bytes().unwrap();
        for (_, blob) in s.objects().iter() {
            assert!(!bytes.windows(blob.len()).any(|w| w == blob));
        }
        let raw = image(3);
        assert!(!bytes.windows(16).any(|w| w == &raw.data()[..16]));
    }

    #[test]
    fn config_validation() {
        let mut c = StationConfig::local(StationId(1));
        c.validate().unwrap();
        c.object_endpoint = "not a url".into();
        assert!(Station::new(c.clone()).is_err());
        c.object_endpoint = "ftp://x/y".into();
        assert!(c.validate().is_err());
    }
}
