//! Browser bindings for the demo page in `www/`.
//!
//! Each export is a thin wrapper over a plain Rust function so the logic is
//! testable off the browser.

use pht_core::harness::{Experiment, ExperimentConfig};
use pht_core::orchestrator::Policy;
use pht_core::partition::{distribution_report, split, PartitionSpec};
use pht_core::preprocess::{augment, prepare, synth_dataset, AugmentConfig, RawImage, ISIC_PROPORTIONS};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Which stage of the input pipeline to render.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Original,
    Prepared,
    Augmented,
}

impl Stage {
    fn parse(name: &str) -> Result<Self, String> {
        match name {
            "original" => Ok(Self::Original),
            "prepared" => Ok(Self::Prepared),
            "augmented" => Ok(Self::Augmented),
            other => Err(format!("unknown stage {other:?}")),
        }
    }
}

/// Size of the synthetic pool previews are drawn from, so an index names
/// the same lesion regardless of which one is asked for.
const PREVIEW_POOL: usize = 200;

fn rgba(image: &RawImage) -> Vec<u8> {
    image.data().chunks_exact(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect()
}

/// RGBA pixels of synthetic lesion `index` at `stage`. The prepared and
/// augmented stages are `target` pixels square.
pub fn preview(seed: u64, index: usize, image_size: u32, target: u32, stage: Stage, augment_seed: u64) -> Result<Vec<u8>, String> {
    let samples = synth_dataset(PREVIEW_POOL.max(index + 1), &ISIC_PROPORTIONS, image_size, seed).map_err(|e| e.to_string())?;
    let original = &samples[index].image;
    let image = match stage {
        Stage::Original => original.clone(),
        Stage::Prepared => prepare(original, target).map_err(|e| e.to_string())?,
        Stage::Augmented => {
            let config = AugmentConfig { target_size: target, ..AugmentConfig::default() };
            config.validate().map_err(|e| e.to_string())?;
            augment(&prepare(original, target).map_err(|e| e.to_string())?, &config, augment_seed)
        }
    };
    Ok(rgba(&image))
}

/// Class proportions of every split for `n` synthetic labels.
pub fn partition_json(n: usize, stations: u32, test_fraction: f64, validation_fraction: f64, seed: u64) -> Result<String, String> {
    let counts = pht_core::preprocess::largest_remainder(n, &ISIC_PROPORTIONS);
    let labels: Vec<(String, usize)> = counts
        .iter()
        .enumerate()
        .flat_map(|(class, &c)| (0..c).map(move |_| class))
        .enumerate()
        .map(|(i, class)| (format!("s{i:05}"), class))
        .collect();
    let spec = PartitionSpec { test_fraction, station_count: stations, validation_fraction, seed };
    spec.validate().map_err(|e| e.to_string())?;
    let partition = split(&labels, &spec).map_err(|e| e.to_string())?;
    let rows = distribution_report(&partition, &labels, ISIC_PROPORTIONS.len()).map_err(|e| e.to_string())?;
    serde_json::to_string(&rows).map_err(|e| e.to_string())
}

/// Train the same model with IIL over `stations` stations and on the pooled
/// data, returning both loss traces, the hop epochs and test metrics.
pub fn simulate_json(seed: u64, n: usize, stations: u32, epochs: usize) -> Result<String, String> {
    let config = ExperimentConfig::from_toml(&format!(
        "seed = {seed}\n\
         [dataset.synthetic]\nn = {n}\nimage_size = 8\n\
         [partition]\nstations = {stations}\n\
         [plan]\npolicies = [\"iil\", \"centralized\"]\n\
         [model]\nhidden = 16\n\
         [training]\nepochs = {epochs}\nlearning_rate = 0.003\n\
         [augment]\ntarget_size = 8\n"
    ))
    .map_err(|e| e.to_string())?;
    let experiment = Experiment::prepare(config).map_err(|e| e.to_string())?;
    let mut out = serde_json::Map::new();
    for policy in [Policy::Iil, Policy::Centralized] {
        let run = experiment.run_policy(policy);
        let output = run.result.map_err(|e| e.to_string())?;
        let record = &output.record;
        let test = record.final_test.as_ref().ok_or("no test evaluation")?;
        out.insert(
            policy.name().to_owned(),
            json!({
                "label": policy.display_name(),
                "loss": record.loss_trace(),
                "hops": record.hop_epochs(),
                "mean_accuracy": test.mean_accuracy,
                "mean_recall": test.mean_recall,
            }),
        );
    }
    Ok(serde_json::Value::Object(out).to_string())
}

#[wasm_bindgen(js_name = lesionPreview)]
pub fn lesion_preview(seed: u64, index: usize, image_size: u32, target: u32, stage: &str, augment_seed: u64) -> Result<Vec<u8>, JsError> {
    let stage = Stage::parse(stage).map_err(|e| JsError::new(&e))?;
    preview(seed, index, image_size, target, stage, augment_seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = partitionReport)]
pub fn partition_report(n: usize, stations: u32, test_fraction: f64, validation_fraction: f64, seed: u64) -> Result<String, JsError> {
    partition_json(n, stations, test_fraction, validation_fraction, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = simulateTraining)]
pub fn simulate_training(seed: u64, n: usize, stations: u32, epochs: usize) -> Result<String, JsError> {
    simulate_json(seed, n, stations, epochs).map_err(|e| JsError::new(&e))
}
