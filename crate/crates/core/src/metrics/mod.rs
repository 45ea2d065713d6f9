//! Confusion matrices and the accuracy / agreement scores derived from them.

mod report;

pub use report::EvalReport;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("class {class} outside 1..={n_classes}")]
    ClassOutOfRange { class: usize, n_classes: usize },
    #[error("metric undefined: the confusion matrix is empty")]
    Empty,
    #[error("confusion matrices of {left} and {right} classes cannot be merged")]
    SizeMismatch { left: usize, right: usize },
}

/// Square count table; rows are true classes, columns predictions, both
/// 1-based at the API and 0-based in storage.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    /// Builds a matrix from row-major nested counts.
    pub fn from_rows(rows: &[Vec<u64>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "confusion rows must be square");
        Self {
            n_classes: n,
            counts: rows.concat(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn accumulate(&mut self, truth: usize, pred: usize) -> Result<(), MetricsError> {
        let n = self.n_classes;
        for class in [truth, pred] {
            if class == 0 || class > n {
                return Err(MetricsError::ClassOutOfRange { class, n_classes: n });
            }
        }
        self.counts[(truth - 1) * n + pred - 1] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if other.n_classes != self.n_classes {
            return Err(MetricsError::SizeMismatch {
                left: self.n_classes,
                right: other.n_classes,
            });
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Count of samples of true class `truth` predicted as `pred` (1-based).
    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[(truth - 1) * self.n_classes + pred - 1]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.n_classes.max(1)).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|i| self.counts[i * self.n_classes + i]).sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        let n = self.n_classes;
        self.counts[(class - 1) * n..class * n].iter().sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        let n = self.n_classes;
        (0..n).map(|r| self.counts[r * n + class - 1]).sum()
    }
}

/// `trace / total`
pub fn overall_accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// Recall of each class, `None` for classes without samples.
pub fn per_class_accuracy(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    (1..=cm.n_classes())
        .map(|c| {
            let row = cm.row_sum(c);
            (row > 0).then(|| cm.count(c, c) as f64 / row as f64)
        })
        .collect()
}

/// Mean recall over the classes that have at least one sample. Empty
/// classes are left out and reported through `log::warn!`.
pub fn average_accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let per_class = per_class_accuracy(cm);
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(MetricsError::Empty);
    }
    let missing: Vec<usize> = empty_classes(cm);
    if !missing.is_empty() {
        log::warn!("classes {missing:?} have no samples and are excluded from AA");
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// 1-based ids of classes with an empty row.
pub fn empty_classes(cm: &ConfusionMatrix) -> Vec<usize> {
    (1..=cm.n_classes()).filter(|&c| cm.row_sum(c) == 0).collect()
}

/// Cohen's kappa. When chance agreement is 1 (a single occupied cell) the
/// result is 1 for perfect agreement and 0 otherwise.
pub fn kappa(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    let t = total as f64;
    let p_o = cm.trace() as f64 / t;
    let p_e = (1..=cm.n_classes())
        .map(|c| cm.row_sum(c) as f64 * cm.col_sum(c) as f64)
        .sum::<f64>()
        / (t * t);
    if p_e == 1.0 {
        return Ok(if p_o == 1.0 { 1.0 } else { 0.0 });
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}
