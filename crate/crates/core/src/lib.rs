//! Distributed analytics in the Personal Health Train style.
//!
//! Analytic tasks ("trains") travel to data providers ("stations"), train a
//! model locally against a FHIR-lite resource store plus a blob object store,
//! and carry only parameters and provenance back out. Two execution policies
//! are provided: sequential institutional incremental learning (optionally
//! cyclic) and parallel federated averaging, plus a centralized baseline.
//!
//! Module map:
//!
//! - [`learner`]: softmax / one-hidden-layer classifier, cross-entropy, Adam, local training loop
//! - [`preprocess`]: center crop, bilinear resize, flips and color jitter, synthetic lesion images
//! - [`partition`]: stratified test / station / validation splitting
//! - [`station`]: FHIR-lite resources, object store, station-side train execution
//! - [`bundle`]: train bundles, container format, registry
//! - [`orchestrator`]: IIL, cyclic IIL, FL and centralized runs over a message contract
//! - [`metrics`]: confusion matrix, mean recall, mean accuracy, trace reports
//! - [`harness`]: experiment configuration and the end-to-end runner used by the CLI

pub mod bundle;
pub mod harness;
pub mod learner;
pub mod metrics;
pub mod orchestrator;
pub mod partition;
pub mod preprocess;
pub mod rng;
pub mod station;

pub use bundle::{TrainBundle, TrainManifest, TrainRegistry};
pub use learner::{LabeledSample, ModelParameters, ModelSpec, TrainingConfig};
pub use metrics::ConfusionMatrix;
pub use partition::{DatasetShard, Partition, PartitionSpec, StationId};
pub use preprocess::{AugmentConfig, RawImage};
pub use station::Station;
