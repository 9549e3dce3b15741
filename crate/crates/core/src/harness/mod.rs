//! Experiment configuration and the end-to-end runner behind the CLI:
//! generate or load images, partition, ingest into stations, run each
//! policy and write plot-ready reports.

mod compare;
mod config;
mod dataset;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use compare::{compare, load_summary};
pub use config::{
    DatasetConfig, DirectoryDataset, ExperimentConfig, ModelConfig, OutputConfig, PartitionConfig, PlanConfig,
    SyntheticDataset, TrainingSection,
};
pub use dataset::{load_dataset, read_labels_csv, DatasetSample};

use crate::bundle::{TaskConfig, TrainRegistry};
use crate::learner::LabeledSample;
use crate::metrics::{loss_trace_report, trace_csv, Evaluation};
use crate::orchestrator::{run_centralized, ExperimentPlan, InProcessLink, Orchestrator, OrchestratorError, Policy, RunOutput, RunRecord, StationLink, WireLog};
use crate::partition::{distribution_report, split, Partition, StationId};
use crate::preprocess::{prepare, to_features, ImageSource, RawImage};
use crate::station::{IngestRecord, Station, StationConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad or missing configuration or input files.
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Runtime(_) => 1,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Runtime(e.to_string())
}

/// Everything set up for a run: data partitioned and ingested into the
/// stations, test set held out.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub digest: String,
    pub samples: Vec<DatasetSample>,
    pub partition: Partition,
    pub stations: Vec<Station>,
    pub held_out: Vec<LabeledSample>,
}

/// The outcome of one policy plus every byte it put on a link or into the
/// registry.
pub struct PolicyRun {
    pub policy: Policy,
    pub result: Result<RunOutput, OrchestratorError>,
    pub wire: WireLog,
    pub bundles: Vec<Vec<u8>>,
}

impl PolicyRun {
    pub fn record(&self) -> Option<&RunRecord> {
        match &self.result {
            Ok(out) => Some(&out.record),
            Err(e) => e.partial_record(),
        }
    }
}

impl Experiment {
    pub fn prepare(config: ExperimentConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let digest = config.digest();
        let samples = load_dataset(&config)?;
        let labels: Vec<(String, usize)> = samples.iter().map(|s| (s.id.clone(), s.label.index())).collect();
        let partition = split(&labels, &config.partition_spec()).map_err(|e| HarnessError::Config(format!("partition: {e}")))?;
        if partition.test.is_empty() {
            return Err(HarnessError::Config("the test split is empty; raise dataset size or partition.test_fraction".into()));
        }

        let by_id: HashMap<&str, &DatasetSample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
        let records: HashMap<String, IngestRecord> = samples
            .iter()
            .map(|s| {
                let record = IngestRecord {
                    image: s.image.clone(),
                    label: s.label,
                    age: s.age,
                    sex: s.sex,
                    anatomical_site: s.anatomical_site.clone(),
                };
                (s.id.clone(), record)
            })
            .collect();
        let mut stations = Vec::with_capacity(partition.stations.len());
        for shard in &partition.stations {
            let mut station = Station::new(StationConfig::local(shard.id)).map_err(runtime)?;
            station.ingest(shard, &records, "skin lesion images").map_err(runtime)?;
            stations.push(station);
        }

        let target = config.augment.target_size;
        let held_out = partition
            .test
            .iter()
            .map(|id| {
                let s = by_id[id.as_str()];
                Ok(LabeledSample::new(to_features(&prepare(&s.image, target).map_err(runtime)?), s.label.index()))
            })
            .collect::<Result<_, HarnessError>>()?;
        Ok(Self { config, digest, samples, partition, stations, held_out })
    }

    pub fn run_id(&self) -> String {
        format!("run-{}", &self.digest[..12])
    }

    pub fn task(&self) -> TaskConfig {
        TaskConfig {
            training: self.config.training_config(),
            augment: self.config.augment.clone(),
            model: self.config.model_spec(),
            carry_optimizer_state: self.config.plan.carry_optimizer_state,
        }
    }

    pub fn plan(&self, policy: Policy) -> ExperimentPlan {
        let plan = &self.config.plan;
        ExperimentPlan {
            policy,
            stations: self.stations.iter().map(Station::id).collect(),
            cycles: if policy == Policy::CyclicIil { plan.cycles } else { 1 },
            rounds: plan.rounds,
            local_epochs: self.config.training.epochs,
            weighting: plan.weighting,
            seed: self.config.init_seed(),
            task: self.task(),
        }
    }

    /// Training and validation images of every station, pooled in station
    /// order, for the centralized baseline.
    pub fn pooled_source(&self) -> Result<ImageSource, HarnessError> {
        let by_id: HashMap<&str, &DatasetSample> = self.samples.iter().map(|s| (s.id.as_str(), s)).collect();
        let target = self.config.augment.target_size;
        let images = |ids: &mut dyn Iterator<Item = &String>| -> Result<Vec<(RawImage, usize)>, HarnessError> {
            ids.map(|id| {
                let s = by_id[id.as_str()];
                Ok((prepare(&s.image, target).map_err(runtime)?, s.label.index()))
            })
            .collect()
        };
        let train = images(&mut self.partition.stations.iter().flat_map(|s| &s.train))?;
        let validation = images(&mut self.partition.stations.iter().flat_map(|s| &s.validation))?;
        Ok(ImageSource::new(train, &validation, self.config.augment.clone(), self.config.training_config().seed))
    }

    pub fn run_policy(&self, policy: Policy) -> PolicyRun {
        let plan = self.plan(policy);
        let run_id = format!("{}-{}", self.run_id(), policy.name());
        if policy == Policy::Centralized {
            let result = self
                .pooled_source()
                .map_err(|e| OrchestratorError::InvalidPlan(e.to_string()))
                .and_then(|source| run_centralized(&run_id, &plan, &source, &self.held_out));
            return PolicyRun { policy, result, wire: WireLog::default(), bundles: Vec::new() };
        }
        let registry = TrainRegistry::new();
        let links: Vec<InProcessLink> = self.stations.iter().map(|s| InProcessLink::new(s, &registry)).collect();
        let dyn_links: Vec<&dyn StationLink> = links.iter().map(|l| l as &dyn StationLink).collect();
        let mut orchestrator = Orchestrator::new(run_id.clone(), &registry, dyn_links);
        let result = match policy {
            Policy::Fl => orchestrator.run_fl(&plan, &self.held_out),
            _ => orchestrator.run_iil(&plan, &self.held_out),
        };
        let bundles = registry.versions(&format!("{run_id}-{}", policy.name())).unwrap_or_default();
        PolicyRun { policy, result, wire: orchestrator.into_wire(), bundles }
    }

    pub fn station(&self, id: StationId) -> Option<&Station> {
        self.stations.iter().find(|s| s.id() == id)
    }
}

/// The per-policy JSON summary, also the input of `compare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: Policy,
    pub seed: u64,
    pub config_digest: String,
    pub class_count: usize,
    pub epochs: u64,
    pub final_test: FinalTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalTest {
    /// Per-class one-vs-rest accuracy averaged over classes.
    pub mean_accuracy: f64,
    pub mean_recall: f64,
    pub overall_accuracy: f64,
    /// The printed formula, `Σ TP_i / (C · total)`.
    pub mean_accuracy_literal: f64,
    pub loss: f64,
    pub samples: u64,
}

impl FinalTest {
    pub fn from_evaluation(e: &Evaluation) -> Self {
        Self {
            mean_accuracy: e.mean_accuracy,
            mean_recall: e.mean_recall,
            overall_accuracy: e.overall_accuracy,
            mean_accuracy_literal: e.confusion.mean_accuracy_literal().unwrap_or(f64::NAN),
            loss: e.loss,
            samples: e.confusion.total(),
        }
    }
}

/// What a successful `run` produced.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub summaries: Vec<RunSummary>,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct PartitionArtifact<'a> {
    config_digest: &'a str,
    #[serde(flatten)]
    partition: &'a Partition,
}

#[derive(Serialize)]
struct RecordArtifact<'a> {
    config_digest: &'a str,
    #[serde(flatten)]
    record: &'a RunRecord,
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn write(&mut self, name: &str, contents: &str) -> Result<(), HarnessError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(path);
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), HarnessError> {
        let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
        text.push('\n');
        self.write(name, &text)
    }
}

/// Run every configured policy and write the artifacts into `output`:
/// `partition.json`, `distribution.csv`, per policy `{policy}.csv`,
/// `{policy}_record.json` and `{policy}_summary.json`, and `events.log`.
/// On a runtime failure the artifacts produced so far, including the
/// partial record of the failed run, are still written.
pub fn run_experiment(config: ExperimentConfig, output: &Path) -> Result<ExperimentReport, HarnessError> {
    let experiment = Experiment::prepare(config)?;
    let digest = experiment.digest.clone();
    fs::create_dir_all(output).map_err(|e| runtime(format!("cannot create {}: {e}", output.display())))?;
    let mut out = Writer { dir: output.to_owned(), files: Vec::new() };

    out.write_json("partition.json", &PartitionArtifact { config_digest: &digest, partition: &experiment.partition })?;
    let labels: Vec<(String, usize)> = experiment.samples.iter().map(|s| (s.id.clone(), s.label.index())).collect();
    let classes = experiment.config.model_spec().classes;
    let rows = distribution_report(&experiment.partition, &labels, classes).map_err(runtime)?;
    let mut csv = format!("# config_digest: {digest}\nsplit,count");
    for c in crate::station::DiagnosticClass::ALL {
        csv.push(',');
        csv.push_str(c.code());
    }
    csv.push('\n');
    for row in rows {
        csv.push_str(&format!("{},{}", row.split, row.count));
        for p in row.proportions {
            csv.push_str(&format!(",{p:.6}"));
        }
        csv.push('\n');
    }
    out.write("distribution.csv", &csv)?;

    let mut events = format!("# config_digest: {digest}\n");
    let mut summaries = Vec::new();
    let mut failure = None;
    for &policy in &experiment.config.plan.policies {
        log::info!("running {}", policy.name());
        let run = experiment.run_policy(policy);
        if let Some(record) = run.record() {
            out.write(&format!("{}.csv", policy.name()), &trace_csv(&loss_trace_report(record), Some(&digest)))?;
            out.write_json(&format!("{}_record.json", policy.name()), &RecordArtifact { config_digest: &digest, record })?;
            for event in &record.events {
                events.push_str(&format!("{}\t{}\n", policy.name(), serde_json::to_string(event).map_err(runtime)?));
            }
        }
        match run.result {
            Ok(result) => {
                let test = result.record.final_test.as_ref().ok_or_else(|| runtime("run finished without a test evaluation"))?;
                let summary = RunSummary {
                    policy,
                    seed: experiment.config.seed,
                    config_digest: digest.clone(),
                    class_count: test.confusion.classes(),
                    epochs: result.record.global_epochs(),
                    final_test: FinalTest::from_evaluation(test),
                };
                out.write_json(&format!("{}_summary.json", policy.name()), &summary)?;
                summaries.push(summary);
            }
            Err(e) => {
                failure = Some(format!("{}: {e}", policy.name()));
                break;
            }
        }
    }
    out.write("events.log", &events)?;
    match failure {
        Some(reason) => Err(HarnessError::Runtime(reason)),
        None => Ok(ExperimentReport { summaries, files: out.files }),
    }
}

/// Partition a `filename,label` CSV into a manifest.
pub fn partition_labels(labels_csv: &Path, spec: &crate::partition::PartitionSpec) -> Result<Partition, HarnessError> {
    spec.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    let labels = read_labels_csv(labels_csv)?;
    split(&labels, spec).map_err(|e| HarnessError::Runtime(e.to_string()))
}
