//! Stratified splitting into a global test set and per-station
//! train / validation shards.
//!
//! Order of operations: the test set is drawn first, the remainder is
//! dealt to stations, then each station is split into train and
//! validation. Within every step counts are apportioned per class by
//! largest remainder, so each class lands within one sample of its exact
//! share. Class leftovers that do not divide evenly across stations are
//! dealt round-robin by ascending station id with a pointer that carries
//! over from one class to the next, which keeps shard sizes within one of
//! each other.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream_rng;

/// 1-based station identifier, displayed as `station-{n}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationId(pub u32);

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "station-{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSpec {
    pub test_fraction: f64,
    pub station_count: u32,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        Self { test_fraction: 0.2, station_count: 3, validation_fraction: 0.2, seed: 0 }
    }
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<(), PartitionError> {
        for (name, f) in [("test_fraction", self.test_fraction), ("validation_fraction", self.validation_fraction)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(PartitionError::InvalidSpec(format!("{name} must lie strictly between 0 and 1, got {f}")));
            }
        }
        if self.station_count == 0 {
            return Err(PartitionError::InvalidSpec("station_count must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetShard {
    pub id: StationId,
    pub train: Vec<String>,
    pub validation: Vec<String>,
}

impl DatasetShard {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Serializes as the partition manifest:
/// `{test, stations: [{id, train, validation}], seed, spec}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub test: Vec<String>,
    pub stations: Vec<DatasetShard>,
    pub seed: u64,
    pub spec: PartitionSpec,
}

impl Partition {
    /// The manifest as pretty-printed JSON.
    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        serde_json::to_string_pretty(self)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("invalid partition spec: {0}")]
    InvalidSpec(String),
    #[error("class {class} has {count} samples, fewer than the {stations} stations")]
    TooFewSamples { class: usize, count: usize, stations: u32 },
    #[error("duplicate sample id {0}")]
    DuplicateId(String),
    #[error("empty dataset")]
    Empty,
    #[error("split {0} is empty")]
    EmptySplit(String),
    #[error("sample {0} has no label")]
    UnknownSample(String),
}

/// Split `exact` shares into integers summing to `total`: floors first,
/// then one extra to the largest fractional parts (ties to the lower index).
pub fn apportion(exact: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Partition `(sample id, class)` pairs according to `spec`.
pub fn split(labels: &[(String, usize)], spec: &PartitionSpec) -> Result<Partition, PartitionError> {
    spec.validate()?;
    if labels.is_empty() {
        return Err(PartitionError::Empty);
    }
    let stations = spec.station_count as usize;

    let mut by_class: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for (id, class) in labels {
        if !seen.insert(id.as_str()) {
            return Err(PartitionError::DuplicateId(id.clone()));
        }
        by_class.entry(*class).or_default().push(id.clone());
    }
    for (&class, ids) in &mut by_class {
        if ids.len() < stations {
            return Err(PartitionError::TooFewSamples { class, count: ids.len(), stations: spec.station_count });
        }
        ids.sort();
        ids.shuffle(&mut stream_rng(spec.seed, class as u64));
    }

    let classes: Vec<usize> = by_class.keys().copied().collect();
    let n = labels.len();
    let test_exact: Vec<f64> = by_class.values().map(|ids| ids.len() as f64 * spec.test_fraction).collect();
    let test_total = (n as f64 * spec.test_fraction).round() as usize;
    let test_counts = apportion(&test_exact, test_total);

    let mut test = Vec::with_capacity(test_total);
    // station -> class -> ids
    let mut station_class: Vec<BTreeMap<usize, Vec<String>>> = vec![BTreeMap::new(); stations];
    let mut pointer = 0usize;
    for (k, class) in classes.iter().enumerate() {
        let ids = &by_class[class];
        let (test_ids, rest) = ids.split_at(test_counts[k]);
        test.extend_from_slice(test_ids);

        let base = rest.len() / stations;
        let mut sizes = vec![base; stations];
        for _ in 0..rest.len() % stations {
            sizes[pointer] += 1;
            pointer = (pointer + 1) % stations;
        }
        let mut offset = 0;
        for (s, size) in sizes.into_iter().enumerate() {
            station_class[s].insert(*class, rest[offset..offset + size].to_vec());
            offset += size;
        }
    }

    let shards = station_class
        .into_iter()
        .enumerate()
        .map(|(s, per_class)| {
            let size: usize = per_class.values().map(Vec::len).sum();
            let exact: Vec<f64> = per_class.values().map(|ids| ids.len() as f64 * spec.validation_fraction).collect();
            let val_counts = apportion(&exact, (size as f64 * spec.validation_fraction).floor() as usize);
            let mut train = Vec::new();
            let mut validation = Vec::new();
            for (ids, v) in per_class.values().zip(val_counts) {
                validation.extend_from_slice(&ids[..v]);
                train.extend_from_slice(&ids[v..]);
            }
            train.sort();
            validation.sort();
            DatasetShard { id: StationId(s as u32 + 1), train, validation }
        })
        .collect();
    test.sort();

    Ok(Partition { test, stations: shards, seed: spec.seed, spec: spec.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionRow {
    pub split: String,
    pub count: usize,
    pub proportions: Vec<f64>,
}

/// Per-split class proportions: the test set, then for every station its
/// whole shard, its train split and its validation split.
pub fn distribution_report(
    partition: &Partition,
    labels: &[(String, usize)],
    classes: usize,
) -> Result<Vec<DistributionRow>, PartitionError> {
    let lookup: BTreeMap<&str, usize> = labels.iter().map(|(id, c)| (id.as_str(), *c)).collect();
    let row = |name: String, ids: &mut dyn Iterator<Item = &String>| -> Result<DistributionRow, PartitionError> {
        let mut counts = vec![0usize; classes];
        let mut total = 0;
        for id in ids {
            let class = *lookup.get(id.as_str()).ok_or_else(|| PartitionError::UnknownSample(id.clone()))?;
            counts[class] += 1;
            total += 1;
        }
        if total == 0 {
            return Err(PartitionError::EmptySplit(name));
        }
        let proportions = counts.iter().map(|c| *c as f64 / total as f64).collect();
        Ok(DistributionRow { split: name, count: total, proportions })
    };
    let mut rows = vec![row("test".into(), &mut partition.test.iter())?];
    for shard in &partition.stations {
        rows.push(row(shard.id.to_string(), &mut shard.train.iter().chain(&shard.validation))?);
        rows.push(row(format!("{}/train", shard.id), &mut shard.train.iter())?);
        rows.push(row(format!("{}/validation", shard.id), &mut shard.validation.iter())?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(class_counts: &[usize]) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (c, &n) in class_counts.iter().enumerate() {
            for i in 0..n {
                out.push((format!("c{c}-{i:05}"), c));
            }
        }
        out
    }

    fn class_count(ids: &[String], labels: &[(String, usize)], class: usize) -> usize {
        let lookup: BTreeMap<&str, usize> = labels.iter().map(|(id, c)| (id.as_str(), *c)).collect();
        ids.iter().filter(|id| lookup[id.as_str()] == class).count()
    }

    #[test]
    fn single_class_thirty() {
        let labels = dataset(&[30]);
        let p = split(&labels, &PartitionSpec::default()).unwrap();
        assert_eq!(p.test.len(), 6);
        assert_eq!(p.stations.iter().map(DatasetShard::len).collect::<Vec<_>>(), vec![8, 8, 8]);
    }

    #[test]
    fn seven_three_remainder_policy() {
        // Brute force: test takes 1 of each class (1.4 -> 1, 0.6 -> 1 by remainder),
        // leaving (6, 2). Class 0 deals 2/2/2; class 1's two leftovers go to
        // stations 1 and 2.
        let labels = dataset(&[7, 3]);
        let p = split(&labels, &PartitionSpec::default()).unwrap();
        assert_eq!(class_count(&p.test, &labels, 0), 1);
        assert_eq!(class_count(&p.test, &labels, 1), 1);
        let per_station: Vec<(usize, usize)> = p
            .stations
            .iter()
            .map(|s| {
                let all: Vec<String> = s.train.iter().chain(&s.validation).cloned().collect();
                (class_count(&all, &labels, 0), class_count(&all, &labels, 1))
            })
            .collect();
        assert_eq!(per_station, vec![(2, 1), (2, 1), (2, 0)]);
    }

    #[test]
    fn too_few_samples_names_the_class() {
        let labels = dataset(&[10, 2]);
        assert_eq!(
            split(&labels, &PartitionSpec::default()),
            Err(PartitionError::TooFewSamples { class: 1, count: 2, stations: 3 })
        );
    }

    #[test]
    fn rejects_invalid_specs_and_duplicates() {
        let labels = dataset(&[10]);
        for spec in [
            PartitionSpec { test_fraction: 1.0, ..Default::default() },
            PartitionSpec { validation_fraction: 0.0, ..Default::default() },
            PartitionSpec { station_count: 0, ..Default::default() },
        ] {
            assert!(matches!(split(&labels, &spec), Err(PartitionError::InvalidSpec(_))));
        }
        let mut dup = labels.clone();
        dup.push(dup[0].clone());
        assert!(matches!(split(&dup, &PartitionSpec::default()), Err(PartitionError::DuplicateId(_))));
    }

    #[test]
    fn full_scale_arithmetic() {
        let counts = crate::preprocess::largest_remainder(25_331, &crate::preprocess::ISIC_PROPORTIONS);
        let labels = dataset(&counts);
        let p = split(&labels, &PartitionSpec::default()).unwrap();
        assert_eq!(p.test.len(), 5066);
        for s in &p.stations {
            assert_eq!((s.len(), s.train.len(), s.validation.len()), (6755, 5404, 1351));
        }
        let rows = distribution_report(&p, &labels, 8).unwrap();
        let station_rows: Vec<&DistributionRow> = rows.iter().filter(|r| !r.split.contains('/') && r.split != "test").collect();
        for a in &station_rows {
            for b in &station_rows {
                for c in 0..8 {
                    assert!((a.proportions[c] - b.proportions[c]).abs() <= 2.0 / 6755.0);
                }
            }
        }
    }

    #[test]
    fn divisible_counts_give_identical_rows() {
        let labels = dataset(&[50, 25, 25]);
        let spec = PartitionSpec { station_count: 2, ..Default::default() };
        let p = split(&labels, &spec).unwrap();
        let rows = distribution_report(&p, &labels, 3).unwrap();
        assert_eq!(rows[0].proportions, rows[1].proportions);
        assert_eq!(rows[1].proportions, rows[4].proportions);
        for r in &rows {
            assert!((r.proportions.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn manifest_json_shape() {
        let p = split(&dataset(&[30]), &PartitionSpec::default()).unwrap();
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        assert_eq!(v["stations"][0]["id"], 1);
        assert!(v["stations"][2]["validation"].is_array());
        assert_eq!(v["spec"]["station_count"], 3);
        let back: Partition = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }

    proptest! {
        #[test]
        fn partition_invariants(
            raw_counts in prop::collection::vec(4usize..60, 1..6),
            stations in 1u32..5,
            test_fraction in 0.05f64..0.6,
            validation_fraction in 0.05f64..0.6,
            seed in any::<u64>(),
        ) {
            let counts: Vec<usize> = raw_counts.iter().map(|c| c.max(&(stations as usize)).to_owned()).collect();
            let labels = dataset(&counts);
            let spec = PartitionSpec { test_fraction, station_count: stations, validation_fraction, seed };
            let p = split(&labels, &spec).unwrap();

            // exact cover
            let mut all: Vec<&String> = p.test.iter().collect();
            for s in &p.stations {
                all.extend(s.train.iter().chain(&s.validation));
            }
            all.sort();
            let mut expected: Vec<&String> = labels.iter().map(|(id, _)| id).collect();
            expected.sort();
            prop_assert_eq!(all, expected);

            // shard sizes within one
            let sizes: Vec<usize> = p.stations.iter().map(DatasetShard::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);

            // per-class stratification within one of exact
            let share = (1.0 - test_fraction) / f64::from(stations);
            for (c, &n) in counts.iter().enumerate() {
                for s in &p.stations {
                    let ids: Vec<String> = s.train.iter().chain(&s.validation).cloned().collect();
                    let got = class_count(&ids, &labels, c) as f64;
                    prop_assert!((got - n as f64 * share).abs() < 1.0);
                }
            }

            // input order does not matter
            let mut reversed = labels.clone();
            reversed.reverse();
            prop_assert_eq!(split(&reversed, &spec).unwrap(), p);
        }
    }
}
