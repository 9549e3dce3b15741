//! Confusion-matrix accumulation and the evaluation metrics.
//!
//! Two readings of "mean accuracy" are provided. [`ConfusionMatrix::mean_accuracy_literal`]
//! averages `TP_i / (TP_i + FN_i + FP_i + TN_i)`, which always equals
//! `overall_accuracy / C` and so tops out at `1 / C`.
//! [`ConfusionMatrix::mean_accuracy_per_class`] averages the per-class
//! one-vs-rest accuracy `(TP_i + TN_i) / total`; reports use this one.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::{EventKind, RunRecord};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("confusion matrix is empty")]
    Empty,
    #[error("class count mismatch: {0} vs {1}")]
    ClassMismatch(usize, usize),
    #[error("expected {expected} cells, got {actual}")]
    BadShape { expected: usize, actual: usize },
}

/// `counts[true][predicted]`, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self, MetricsError> {
        if counts.len() != classes * classes {
            return Err(MetricsError::BadShape { expected: classes * classes, actual: counts.len() });
        }
        Ok(Self { classes, counts })
    }

    pub fn from_labels(classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self, MetricsError> {
        let mut cm = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.accumulate(t, p)?;
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn accumulate(&mut self, truth: usize, predicted: usize) -> Result<(), MetricsError> {
        for label in [truth, predicted] {
            if label >= self.classes {
                return Err(MetricsError::LabelOutOfRange { label, classes: self.classes });
            }
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    /// Element-wise sum, for combining matrices evaluated in parallel.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if other.classes != self.classes {
            return Err(MetricsError::ClassMismatch(self.classes, other.classes));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn true_positives(&self, class: usize) -> u64 {
        self.count(class, class)
    }

    pub fn false_negatives(&self, class: usize) -> u64 {
        (0..self.classes).filter(|&p| p != class).map(|p| self.count(class, p)).sum()
    }

    pub fn false_positives(&self, class: usize) -> u64 {
        (0..self.classes).filter(|&t| t != class).map(|t| self.count(t, class)).sum()
    }

    pub fn true_negatives(&self, class: usize) -> u64 {
        self.total() - self.true_positives(class) - self.false_negatives(class) - self.false_positives(class)
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.classes).all(|t| (0..self.classes).all(|p| t == p || self.count(t, p) == 0))
    }

    /// Unweighted mean of per-class recall. Classes without support are
    /// left out of the average (with a warning).
    pub fn mean_recall(&self) -> Result<f64, MetricsError> {
        let mut sum = 0.0;
        let mut supported = 0usize;
        for i in 0..self.classes {
            let support = self.true_positives(i) + self.false_negatives(i);
            if support == 0 {
                log::warn!("class {i} has no support; excluded from mean recall");
                continue;
            }
            sum += self.true_positives(i) as f64 / support as f64;
            supported += 1;
        }
        if supported == 0 {
            return Err(MetricsError::Empty);
        }
        Ok(sum / supported as f64)
    }

    /// `(1/C) Σ TP_i / (TP_i + FN_i + FP_i + TN_i)`, exactly as written.
    pub fn mean_accuracy_literal(&self) -> Result<f64, MetricsError> {
        let total = self.nonempty_total()?;
        let sum: f64 = (0..self.classes)
            .map(|i| {
                let denom = self.true_positives(i) + self.false_negatives(i) + self.false_positives(i) + self.true_negatives(i);
                self.true_positives(i) as f64 / denom as f64
            })
            .sum();
        debug_assert!(total > 0);
        Ok(sum / self.classes as f64)
    }

    /// `(1/C) Σ (TP_i + TN_i) / total`.
    pub fn mean_accuracy_per_class(&self) -> Result<f64, MetricsError> {
        let total = self.nonempty_total()? as f64;
        let sum: f64 =
            (0..self.classes).map(|i| (self.true_positives(i) + self.true_negatives(i)) as f64 / total).sum();
        Ok(sum / self.classes as f64)
    }

    pub fn overall_accuracy(&self) -> Result<f64, MetricsError> {
        let total = self.nonempty_total()?;
        let correct: u64 = (0..self.classes).map(|i| self.true_positives(i)).sum();
        Ok(correct as f64 / total as f64)
    }

    fn nonempty_total(&self) -> Result<u64, MetricsError> {
        match self.total() {
            0 => Err(MetricsError::Empty),
            t => Ok(t),
        }
    }
}

/// Loss and metrics of a model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    /// Per-class one-vs-rest accuracy, averaged over classes.
    pub mean_accuracy: f64,
    pub mean_recall: f64,
    pub overall_accuracy: f64,
    pub confusion: ConfusionMatrix,
}

impl Evaluation {
    /// `confusion` must be non-empty.
    pub fn from_confusion(loss: f64, confusion: ConfusionMatrix) -> Self {
        Self {
            loss,
            mean_accuracy: confusion.mean_accuracy_per_class().expect("non-empty confusion matrix"),
            mean_recall: confusion.mean_recall().expect("non-empty confusion matrix"),
            overall_accuracy: confusion.overall_accuracy().expect("non-empty confusion matrix"),
            confusion,
        }
    }
}

/// One row of a per-epoch trace report.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub epoch: u64,
    pub loss: f64,
    pub mean_accuracy: Option<f64>,
    pub mean_recall: Option<f64>,
    pub marker: Option<String>,
}

/// Flatten a run into one row per global epoch. Validation metrics come
/// from the station that trained in that epoch (IIL, centralized) or the
/// sample-weighted mean over replicas (FL). Rows ending a hop or an FL
/// round carry a marker.
pub fn loss_trace_report(record: &RunRecord) -> Vec<TraceRow> {
    let mut rows: Vec<TraceRow> = Vec::new();
    for segment in &record.segments {
        for e in &segment.epochs {
            rows.push(TraceRow {
                epoch: rows.len() as u64 + 1,
                loss: e.train_loss,
                mean_accuracy: e.mean_accuracy,
                mean_recall: e.mean_recall,
                marker: None,
            });
        }
    }
    for event in &record.events {
        let marker = match &event.kind {
            EventKind::Hop { from, to } => format!("hop {from}->{to}"),
            EventKind::RoundComplete { round } => format!("round {round}"),
            _ => continue,
        };
        if let Some(row) = event.global_epoch.checked_sub(1).and_then(|i| rows.get_mut(i as usize)) {
            row.marker = Some(marker);
        }
    }
    rows
}

/// CSV rendering: `epoch,loss,mean_accuracy,mean_recall,marker`, preceded
/// by a `# config_digest: ...` comment line when a digest is given.
pub fn trace_csv(rows: &[TraceRow], config_digest: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(d) = config_digest {
        out.push_str(&format!("# config_digest: {d}\n"));
    }
    out.push_str("epoch,loss,mean_accuracy,mean_recall,marker\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{},{},{}\n",
            r.epoch,
            r.loss,
            opt(r.mean_accuracy),
            opt(r.mean_recall),
            r.marker.as_deref().unwrap_or("")
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn binary(tp0: u64, fn0: u64, tp1: u64, fn1: u64) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(2, vec![tp0, fn0, fn1, tp1]).unwrap()
    }

    #[test]
    fn accumulate_increments_one_cell() {
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(0, 0).unwrap();
        assert_eq!(cm.count(0, 0), 1);
        assert_eq!(cm.total(), 1);
        assert_eq!(cm.accumulate(3, 0), Err(MetricsError::LabelOutOfRange { label: 3, classes: 3 }));
        assert_eq!(cm.accumulate(0, 3), Err(MetricsError::LabelOutOfRange { label: 3, classes: 3 }));
    }

    #[test]
    fn mean_recall_hand_values() {
        assert_eq!(binary(3, 1, 2, 2).mean_recall().unwrap(), 0.625);
        let diag = ConfusionMatrix::from_counts(3, vec![4, 0, 0, 0, 2, 0, 0, 0, 9]).unwrap();
        assert_eq!(diag.mean_recall().unwrap(), 1.0);
    }

    #[test]
    fn zero_support_classes_are_excluded_from_recall() {
        // class 2 never occurs as a true label
        let cm = ConfusionMatrix::from_counts(3, vec![1, 0, 1, 0, 2, 0, 0, 0, 0]).unwrap();
        assert_eq!(cm.mean_recall().unwrap(), 0.75);
        assert_eq!(ConfusionMatrix::new(3).mean_recall(), Err(MetricsError::Empty));
    }

    #[test]
    fn literal_accuracy_hand_values() {
        // total 10, TP0 = 3, TP1 = 4
        let cm = binary(3, 2, 4, 1);
        assert_eq!(cm.total(), 10);
        assert!((cm.mean_accuracy_literal().unwrap() - 0.35).abs() < 1e-15);
        let diag = ConfusionMatrix::from_counts(4, vec![2, 0, 0, 0, 0, 3, 0, 0, 0, 0, 1, 0, 0, 0, 0, 4]).unwrap();
        assert_eq!(diag.mean_accuracy_literal().unwrap(), 0.25);
        assert_eq!(diag.mean_accuracy_per_class().unwrap(), 1.0);
    }

    #[test]
    fn binary_per_class_accuracy_is_overall_accuracy() {
        let cm = binary(3, 2, 4, 1);
        assert_eq!(cm.mean_accuracy_per_class().unwrap(), cm.overall_accuracy().unwrap());
    }

    #[test]
    fn empty_matrix_accuracy_is_an_error() {
        let cm = ConfusionMatrix::new(2);
        assert_eq!(cm.mean_accuracy_literal(), Err(MetricsError::Empty));
        assert_eq!(cm.mean_accuracy_per_class(), Err(MetricsError::Empty));
    }

    #[test]
    fn merge_adds_counts() {
        let mut a = binary(1, 0, 0, 1);
        a.merge(&binary(0, 1, 1, 0)).unwrap();
        assert_eq!(a.total(), 4);
        assert!(a.merge(&ConfusionMatrix::new(3)).is_err());
    }

    proptest! {
        #[test]
        fn count_identities_hold(classes in 2usize..6, pairs in prop::collection::vec((0usize..6, 0usize..6), 1..80)) {
            let mut cm = ConfusionMatrix::new(classes);
            for (t, p) in &pairs {
                cm.accumulate(t % classes, p % classes).unwrap();
            }
            prop_assert_eq!(cm.total(), pairs.len() as u64);
            for i in 0..classes {
                let row: u64 = (0..classes).map(|p| cm.count(i, p)).sum();
                let col: u64 = (0..classes).map(|t| cm.count(t, i)).sum();
                prop_assert_eq!(cm.true_positives(i) + cm.false_negatives(i), row);
                prop_assert_eq!(cm.true_positives(i) + cm.false_positives(i), col);
                prop_assert_eq!(
                    cm.true_positives(i) + cm.false_negatives(i) + cm.false_positives(i) + cm.true_negatives(i),
                    cm.total()
                );
            }
            let literal = cm.mean_accuracy_literal().unwrap();
            prop_assert!((literal - cm.overall_accuracy().unwrap() / classes as f64).abs() < 1e-12);
            for m in [cm.mean_recall().unwrap(), literal, cm.mean_accuracy_per_class().unwrap()] {
                prop_assert!((0.0..=1.0).contains(&m));
            }
        }
    }
}
