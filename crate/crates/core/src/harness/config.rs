use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::learner::{ModelSpec, TrainingConfig};
use crate::orchestrator::{Policy, Weighting};
use crate::partition::PartitionSpec;
use crate::preprocess::{AugmentConfig, ISIC_PROPORTIONS};
use crate::rng::derive_seed;
use crate::station::DiagnosticClass;

/// Streams derived from the top-level seed, one per concern.
const DATA_STREAM: u64 = 1;
const PARTITION_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;
const TRAINING_STREAM: u64 = 4;

/// One experiment, as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; data, partition, initialization and training seeds
    /// are all derived from it.
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic(SyntheticDataset),
    Directory(DirectoryDataset),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDataset {
    pub n: usize,
    pub image_size: u32,
    /// Class proportions in the order MEL, NV, BCC, AK, BKL, DF, VASC, SCC.
    #[serde(default = "isic_proportions")]
    pub proportions: Vec<f64>,
}

fn isic_proportions() -> Vec<f64> {
    ISIC_PROPORTIONS.to_vec()
}

/// PNG images plus a `filename,label` CSV. Relative paths resolve against
/// the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectoryDataset {
    pub images: PathBuf,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub test_fraction: f64,
    pub validation_fraction: f64,
    pub stations: u32,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        let spec = PartitionSpec::default();
        Self { test_fraction: spec.test_fraction, validation_fraction: spec.validation_fraction, stations: spec.station_count }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub policies: Vec<Policy>,
    /// Passes over the route for `cyclic_iil`.
    pub cycles: u32,
    /// Federated rounds for `fl`.
    pub rounds: u32,
    pub weighting: Weighting,
    pub carry_optimizer_state: bool,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            policies: vec![Policy::Iil, Policy::Centralized, Policy::Fl],
            cycles: 1,
            rounds: 3,
            weighting: Weighting::BySampleCount,
            carry_optimizer_state: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of the tanh hidden layer; omit for softmax regression.
    pub hidden: Option<usize>,
}

/// Training hyperparameters. `epochs` is the number of local epochs per
/// visit (IIL) or per round (FL). The training seed is derived from the
/// top-level seed, so there is no seed field here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: u32,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let d = TrainingConfig::default();
        Self {
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            weight_decay: d.weight_decay,
            batch_size: d.batch_size,
            beta1: d.beta1,
            beta2: d.beta2,
            epsilon: d.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: PathBuf::from("pht-output") }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Parse, resolve relative dataset paths against the file's directory,
    /// and validate.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: Self = toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let DatasetConfig::Directory(dir) = &mut config.dataset {
            for p in [&mut dir.images, &mut dir.labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: String| Err(HarnessError::Config(m));
        match &self.dataset {
            DatasetConfig::Synthetic(s) => {
                if s.n == 0 {
                    return fail("dataset.synthetic.n must be positive".into());
                }
                if s.image_size == 0 {
                    return fail("dataset.synthetic.image_size must be positive".into());
                }
                if s.proportions.len() != DiagnosticClass::ALL.len() {
                    return fail(format!(
                        "dataset.synthetic.proportions needs {} entries, got {}",
                        DiagnosticClass::ALL.len(),
                        s.proportions.len()
                    ));
                }
                let sum: f64 = s.proportions.iter().sum();
                if s.proportions.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
                    return fail(format!("dataset.synthetic.proportions must be non-negative and sum to 1 (sum {sum})"));
                }
            }
            DatasetConfig::Directory(d) => {
                if !d.images.is_dir() {
                    return fail(format!("dataset.directory.images: {} is not a directory", d.images.display()));
                }
                if !d.labels.is_file() {
                    return fail(format!("dataset.directory.labels: {} does not exist", d.labels.display()));
                }
            }
        }
        self.partition_spec().validate().map_err(|e| HarnessError::Config(format!("partition: {e}")))?;
        if self.plan.policies.is_empty() {
            return fail("plan.policies must name at least one policy".into());
        }
        let unique: BTreeSet<&str> = self.plan.policies.iter().map(|p| p.name()).collect();
        if unique.len() != self.plan.policies.len() {
            return fail("plan.policies lists a policy twice".into());
        }
        if self.plan.cycles == 0 {
            return fail("plan.cycles must be at least 1".into());
        }
        if self.plan.rounds == 0 {
            return fail("plan.rounds must be at least 1".into());
        }
        if self.model.hidden == Some(0) {
            return fail("model.hidden must be positive when given".into());
        }
        self.training_config().validate().map_err(|e| HarnessError::Config(format!("training: {e}")))?;
        self.augment.validate().map_err(|e| HarnessError::Config(format!("augment: {e}")))?;
        Ok(())
    }

    pub fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec {
            test_fraction: self.partition.test_fraction,
            station_count: self.partition.stations,
            validation_fraction: self.partition.validation_fraction,
            seed: derive_seed(self.seed, &[PARTITION_STREAM]),
        }
    }

    pub fn training_config(&self) -> TrainingConfig {
        let t = &self.training;
        TrainingConfig {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            seed: derive_seed(self.seed, &[TRAINING_STREAM]),
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        let side = self.augment.target_size as usize;
        let input_dim = side * side * 3;
        let classes = DiagnosticClass::ALL.len();
        match self.model.hidden {
            Some(h) => ModelSpec::mlp(input_dim, h, classes),
            None => ModelSpec::softmax(input_dim, classes),
        }
    }

    pub fn data_seed(&self) -> u64 {
        derive_seed(self.seed, &[DATA_STREAM])
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, &[INIT_STREAM])
    }

    /// SHA-256 (hex) of the canonical JSON form of everything that affects
    /// results. The output directory is excluded.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = OutputConfig { directory: PathBuf::new() };
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        seed = 3
        [dataset.synthetic]
        n = 100
        image_size = 8
        [augment]
        target_size = 8
    "#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.partition.stations, 3);
        assert_eq!(c.training.epochs, 40);
        assert_eq!(c.plan.policies, vec![Policy::Iil, Policy::Centralized, Policy::Fl]);
        assert_eq!(c.model_spec(), ModelSpec::softmax(8 * 8 * 3, 8));
        let DatasetConfig::Synthetic(s) = &c.dataset else { panic!() };
        assert_eq!(s.proportions, ISIC_PROPORTIONS.to_vec());
    }

    #[test]
    fn test_fraction_one_is_rejected() {
        let text = format!("{MINIMAL}\n[partition]\ntest_fraction = 1.0\n");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("test_fraction"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_field_reports_its_line() {
        let text = "seed = 1\nbogus = 2\n[dataset.synthetic]\nn = 5\nimage_size = 4\n";
        let err = ExperimentConfig::from_toml(text).unwrap_err().to_string();
        assert!(err.contains("bogus") && err.contains("line 2"), "{err}");
    }

    #[test]
    fn two_dataset_sources_are_rejected() {
        let text = format!("{MINIMAL}\n[dataset.directory]\nimages = \"x\"\nlabels = \"y\"\n");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn bad_proportions_and_plans() {
        for extra in [
            "[plan]\npolicies = []",
            "[plan]\npolicies = [\"iil\", \"iil\"]",
            "[plan]\nrounds = 0",
            "[plan]\ncycles = 0",
            "[training]\nbatch_size = 0",
            "[model]\nhidden = 0",
        ] {
            assert!(ExperimentConfig::from_toml(&format!("{MINIMAL}\n{extra}\n")).is_err(), "{extra}");
        }
        let text = MINIMAL.replace("image_size = 8", "image_size = 8\nproportions = [0.5, 0.5]");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn digest_ignores_output_but_not_seed() {
        let a = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output.directory = PathBuf::from("elsewhere");
        assert_eq!(a.digest(), b.digest());
        b.seed += 1;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn toml_round_trip() {
        let a = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&a.to_toml()).unwrap(), a);
    }

    #[test]
    fn derived_seeds_differ() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let seeds = [c.data_seed(), c.partition_spec().seed, c.init_seed(), c.training_config().seed];
        let unique: BTreeSet<u64> = seeds.iter().copied().collect();
        assert_eq!(unique.len(), 4);
    }
}
