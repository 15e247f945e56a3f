//! Multi-label confusion accounting and derived scores.
//!
//! Zero denominators yield 0 for every ratio. The aggregate Jaccard score is
//! micro-averaged: true positives, false positives and false negatives are
//! pooled over all classes before dividing.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LabelVector;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("sample count mismatch: {truth} true vs {predicted} predicted")]
    SampleMismatch { truth: usize, predicted: usize },
    #[error("label arity mismatch at sample {sample}: expected {expected}, found {found}")]
    ArityMismatch { sample: usize, expected: usize, found: usize },
    #[error("weighted F1 undefined: no class has positive support")]
    NoSupport,
    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ClassCounts {
    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn record(&mut self, truth: bool, predicted: bool) {
        match (truth, predicted) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub classes: Vec<ClassCounts>,
    pub n_samples: u64,
}

impl ConfusionCounts {
    pub fn new(n_classes: usize) -> Self {
        Self { classes: vec![ClassCounts::default(); n_classes], n_samples: 0 }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Accumulates one sample.
    pub fn add(&mut self, truth: &[bool], predicted: &[bool]) -> Result<(), MetricsError> {
        let k = self.classes.len();
        if truth.len() != k || predicted.len() != k {
            let found = if truth.len() != k { truth.len() } else { predicted.len() };
            return Err(MetricsError::ArityMismatch {
                sample: self.n_samples as usize,
                expected: k,
                found,
            });
        }
        for ((counts, &t), &p) in self.classes.iter_mut().zip(truth).zip(predicted) {
            counts.record(t, p);
        }
        self.n_samples += 1;
        Ok(())
    }

    fn class(&self, class: usize) -> Result<&ClassCounts, MetricsError> {
        self.classes
            .get(class)
            .ok_or(MetricsError::ClassOutOfRange { class, classes: self.classes.len() })
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn confusion(y_true: &[LabelVector], y_pred: &[LabelVector]) -> Result<ConfusionCounts, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::SampleMismatch { truth: y_true.len(), predicted: y_pred.len() });
    }
    let k = y_true.first().map_or(0, |v| v.len());
    let mut counts = ConfusionCounts::new(k);
    for (t, p) in y_true.iter().zip(y_pred) {
        counts.add(t.bits(), p.bits())?;
    }
    Ok(counts)
}

pub fn precision_recall(counts: &ConfusionCounts, class: usize) -> Result<(f64, f64), MetricsError> {
    let c = counts.class(class)?;
    Ok((ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.fn_)))
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    let sum = precision + recall;
    if sum == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / sum
    }
}

fn class_f1(c: &ClassCounts) -> f64 {
    f1(ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.fn_))
}

/// Support-weighted mean of per-class F1, support = tp + fn.
pub fn weighted_f1(counts: &ConfusionCounts) -> Result<f64, MetricsError> {
    let total: u64 = counts.classes.iter().map(ClassCounts::support).sum();
    if total == 0 {
        return Err(MetricsError::NoSupport);
    }
    let weighted: f64 = counts
        .classes
        .iter()
        .map(|c| c.support() as f64 * class_f1(c))
        .sum();
    Ok(weighted / total as f64)
}

pub fn jaccard(counts: &ConfusionCounts, class: usize) -> Result<f64, MetricsError> {
    let c = counts.class(class)?;
    Ok(ratio(c.tp, c.tp + c.fp + c.fn_))
}

/// Pooled intersection-over-union across all classes.
pub fn jaccard_micro(counts: &ConfusionCounts) -> f64 {
    let (tp, fp, fn_) = counts
        .classes
        .iter()
        .fold((0, 0, 0), |(tp, fp, fn_), c| (tp + c.tp, fp + c.fp, fn_ + c.fn_));
    ratio(tp, tp + fp + fn_)
}

pub fn hamming_loss(y_true: &[LabelVector], y_pred: &[LabelVector]) -> Result<f64, MetricsError> {
    Ok(hamming_from_counts(&confusion(y_true, y_pred)?))
}

pub fn hamming_from_counts(counts: &ConfusionCounts) -> f64 {
    let wrong: u64 = counts.classes.iter().map(|c| c.fp + c.fn_).sum();
    ratio(wrong, counts.n_samples * counts.classes.len() as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
    pub fnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub weighted_f1: f64,
    pub jaccard: f64,
    pub hamming_loss: f64,
    pub mean_bce: Option<f64>,
    pub counts: ConfusionCounts,
}

impl MetricsReport {
    pub fn from_counts(
        counts: ConfusionCounts,
        class_names: &[String],
        mean_bce: Option<f64>,
    ) -> Result<Self, MetricsError> {
        if class_names.len() != counts.n_classes() {
            return Err(MetricsError::ArityMismatch {
                sample: 0,
                expected: counts.n_classes(),
                found: class_names.len(),
            });
        }
        let per_class = counts
            .classes
            .iter()
            .zip(class_names)
            .map(|(c, name)| {
                let precision = ratio(c.tp, c.tp + c.fp);
                let recall = ratio(c.tp, c.tp + c.fn_);
                ClassMetrics {
                    class: name.clone(),
                    precision,
                    recall,
                    f1: f1(precision, recall),
                    fpr: ratio(c.fp, c.fp + c.tn),
                    fnr: ratio(c.fn_, c.fn_ + c.tp),
                }
            })
            .collect();
        Ok(Self {
            per_class,
            weighted_f1: weighted_f1(&counts)?,
            jaccard: jaccard_micro(&counts),
            hamming_loss: hamming_from_counts(&counts),
            mean_bce,
            counts,
        })
    }

    /// Per-class rows `class,precision,recall,f1,fpr,fnr`, then the aggregate
    /// row `__all__,weighted_f1,jaccard,hamming,mean_bce`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        w.write_record(["class", "precision", "recall", "f1", "fpr", "fnr"])?;
        for m in &self.per_class {
            w.write_record([
                m.class.clone(),
                m.precision.to_string(),
                m.recall.to_string(),
                m.f1.to_string(),
                m.fpr.to_string(),
                m.fnr.to_string(),
            ])?;
        }
        w.write_record([
            "__all__".to_string(),
            self.weighted_f1.to_string(),
            self.jaccard.to_string(),
            self.hamming_loss.to_string(),
            self.mean_bce.map_or_else(String::new, |v| v.to_string()),
        ])?;
        w.flush()?;
        Ok(())
    }
}
