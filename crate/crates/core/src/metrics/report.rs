use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    average_accuracy, empty_classes, kappa, overall_accuracy, per_class_accuracy, ConfusionMatrix, MetricsError,
};

/// Scores of one evaluation run. `per_class` holds `null` for classes with
/// no samples; those are also listed in `excluded_classes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<Option<f64>>,
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub wall_seconds: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded_classes: Vec<usize>,
}

impl EvalReport {
    pub fn from_confusion(cm: &ConfusionMatrix, wall_seconds: f64) -> Result<Self, MetricsError> {
        Ok(Self {
            confusion: cm.rows(),
            per_class: per_class_accuracy(cm),
            oa: overall_accuracy(cm)?,
            aa: average_accuracy(cm)?,
            kappa: kappa(cm)?,
            wall_seconds,
            excluded_classes: empty_classes(cm),
        })
    }

    pub fn confusion_matrix(&self) -> ConfusionMatrix {
        ConfusionMatrix::from_rows(&self.confusion)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-class accuracies followed by κ, OA, AA (all in percent) and the
    /// wall time, one aligned row each.
    pub fn to_table(&self, class_names: &[String]) -> String {
        let labels: Vec<String> = (0..self.per_class.len())
            .map(|i| match class_names.get(i) {
                Some(name) => format!("{} {}", i + 1, name),
                None => format!("class {}", i + 1),
            })
            .collect();
        let width = labels.iter().map(String::len).chain([8]).max().unwrap_or(8);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>8}", "Class", "Accuracy");
        for (label, acc) in labels.iter().zip(&self.per_class) {
            match acc {
                Some(a) => {
                    let _ = writeln!(out, "{label:<width$}  {:>8.2}", 100.0 * a);
                }
                None => {
                    let _ = writeln!(out, "{label:<width$}  {:>8}", "-");
                }
            }
        }
        for (name, value) in [("Kappa", self.kappa), ("OA", self.oa), ("AA", self.aa)] {
            let _ = writeln!(out, "{name:<width$}  {:>8.2}", 100.0 * value);
        }
        let _ = writeln!(out, "{:<width$}  {:>8.2}", "Time (s)", self.wall_seconds);
        out
    }
}
