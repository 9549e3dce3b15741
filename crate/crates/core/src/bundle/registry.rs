use std::collections::HashMap;
use std::sync::RwLock;

use serde::Serialize;

use super::{BundleError, TrainBundle};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HistoryEntry {
    pub revision: u64,
    pub cursor: u32,
    pub parameter_version: u64,
    pub digest: String,
    pub size: usize,
}

/// Every stored version of one train, oldest first.
type Versions = Vec<(HistoryEntry, Vec<u8>)>;

/// The train repository: every pushed version is kept as serialized bytes.
/// Pushes for one train are serialized by the write lock; pulls share the
/// read lock.
#[derive(Debug, Default)]
pub struct TrainRegistry {
    trains: RwLock<HashMap<String, Versions>>,
}

impl TrainRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store a new version. The revision must increase and the provenance
    /// must extend the latest stored version's.
    pub fn push(&self, bundle: &TrainBundle) -> Result<HistoryEntry, BundleError> {
        bundle.verify()?;
        let bytes = bundle.to_bytes()?;
        let entry = HistoryEntry {
            revision: bundle.manifest.revision,
            cursor: bundle.manifest.cursor,
            parameter_version: bundle.parameters.version,
            digest: bundle.digest_hex(),
            size: bytes.len(),
        };
        let mut trains = self.trains.write().expect("registry lock poisoned");
        let versions = trains.entry(bundle.train_id().to_owned()).or_default();
        if let Some((_, latest_bytes)) = versions.last() {
            let latest = TrainBundle::from_bytes(latest_bytes)?;
            if bundle.manifest.revision <= latest.manifest.revision {
                return Err(BundleError::OutOfOrder {
                    train_id: bundle.train_id().to_owned(),
                    latest: latest.manifest.revision,
                    got: bundle.manifest.revision,
                });
            }
            let old = &latest.manifest.provenance;
            if !bundle.manifest.provenance.starts_with(old) {
                return Err(BundleError::ProvenanceRewritten(bundle.train_id().to_owned()));
            }
        }
        versions.push((entry.clone(), bytes));
        Ok(entry)
    }

    /// Latest version as stored bytes.
    pub fn pull_bytes(&self, train_id: &str) -> Result<Vec<u8>, BundleError> {
        let trains = self.trains.read().expect("registry lock poisoned");
        trains
            .get(train_id)
            .and_then(|v| v.last())
            .map(|(_, bytes)| bytes.clone())
            .ok_or_else(|| BundleError::NotFound(train_id.to_owned()))
    }

    pub fn pull(&self, train_id: &str) -> Result<TrainBundle, BundleError> {
        TrainBundle::from_bytes(&self.pull_bytes(train_id)?)
    }

    /// Every stored version of a train, oldest first, as stored bytes.
    pub fn versions(&self, train_id: &str) -> Result<Vec<Vec<u8>>, BundleError> {
        let trains = self.trains.read().expect("registry lock poisoned");
        trains
            .get(train_id)
            .map(|v| v.iter().map(|(_, b)| b.clone()).collect())
            .ok_or_else(|| BundleError::NotFound(train_id.to_owned()))
    }

    pub fn history(&self, train_id: &str) -> Result<Vec<HistoryEntry>, BundleError> {
        let trains = self.trains.read().expect("registry lock poisoned");
        trains
            .get(train_id)
            .map(|v| v.iter().map(|(e, _)| e.clone()).collect())
            .ok_or_else(|| BundleError::NotFound(train_id.to_owned()))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{commit, create_train, record_failure, tests::task, FailureRecord, VisitRecord};
    use super::*;
    use crate::partition::StationId;

    fn fresh() -> TrainBundle {
        create_train("t1", task(), vec![StationId(1), StationId(2)], 1, 0).unwrap()
    }

    fn visit() -> VisitRecord {
        VisitRecord { station: StationId(1), visit: 0, epochs: 1, train_samples: 1, final_loss: None, wall_time_ms: 0 }
    }

    #[test]
    fn push_then_pull_is_byte_identical() {
        let reg = TrainRegistry::new();
        let b = fresh();
        reg.push(&b).unwrap();
        assert_eq!(reg.pull_bytes("t1").unwrap(), b.to_bytes().unwrap());
        assert_eq!(reg.pull("t1").unwrap(), b);
    }

    #[test]
    fn unknown_train_is_not_found() {
        let reg = TrainRegistry::new();
        assert!(matches!(reg.pull("nope"), Err(BundleError::NotFound(_))));
        assert!(matches!(reg.history("nope"), Err(BundleError::NotFound(_))));
    }

    #[test]
    fn latest_version_wins_and_history_is_kept() {
        let reg = TrainRegistry::new();
        let v1 = fresh();
        let v2 = commit(&v1, v1.parameters.clone(), visit(), None).unwrap();
        reg.push(&v1).unwrap();
        reg.push(&v2).unwrap();
        assert_eq!(reg.pull("t1").unwrap(), v2);
        let history = reg.history("t1").unwrap();
        assert_eq!(history.len(), 2);
        assert_eq!(history[1].cursor, 1);
        assert_eq!(history[1].parameter_version, 2);
    }

    #[test]
    fn out_of_order_and_rewritten_pushes_are_rejected() {
        let reg = TrainRegistry::new();
        let v1 = fresh();
        let v2 = commit(&v1, v1.parameters.clone(), visit(), None).unwrap();
        reg.push(&v2).unwrap();
        assert!(matches!(reg.push(&v1), Err(BundleError::OutOfOrder { .. })));

        // same revision count but a different history
        let other = record_failure(&v1, FailureRecord { station: StationId(1), visit: 0, reason: "x".into() }).unwrap();
        let other = record_failure(&other, FailureRecord { station: StationId(1), visit: 0, reason: "y".into() }).unwrap();
        assert!(matches!(reg.push(&other), Err(BundleError::ProvenanceRewritten(_))));
    }

    #[test]
    fn tampered_bundles_are_not_accepted() {
        let reg = TrainRegistry::new();
        let mut b = fresh();
        b.manifest.cursor = 1;
        assert!(matches!(reg.push(&b), Err(BundleError::Tampered)));
    }
}
