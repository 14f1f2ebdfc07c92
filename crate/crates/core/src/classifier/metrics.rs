//! Binary classification metrics with malignant as the positive class.

use serde::{Deserialize, Serialize};

/// Probability at or above which a clip is called malignant.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Ratios whose denominator was zero (reported as 0).
    pub undefined: Vec<String>,
}

fn ratio(num: usize, den: usize, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassificationMetrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let mut undefined = Vec::new();
        let accuracy = ratio(tp + tn, tp + tn + fp + fn_, "accuracy", &mut undefined);
        let sensitivity = ratio(tp, tp + fn_, "sensitivity", &mut undefined);
        let specificity = ratio(tn, tn + fp, "specificity", &mut undefined);
        let precision = ratio(tp, tp + fp, "precision", &mut undefined);
        let f1 = if precision + sensitivity > 0.0 {
            2.0 * precision * sensitivity / (precision + sensitivity)
        } else {
            undefined.push("f1".to_string());
            0.0
        };
        ClassificationMetrics {
            accuracy,
            sensitivity,
            specificity,
            precision,
            f1,
            tp,
            fp,
            tn,
            fn_,
            undefined,
        }
    }

    /// Thresholds `probs` at [`DECISION_THRESHOLD`]; `labels` are 1 for malignant.
    pub fn from_predictions(probs: &[f64], labels: &[f64]) -> Self {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (&p, &y) in probs.iter().zip(labels) {
            match (p >= DECISION_THRESHOLD, y >= 0.5) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }

    pub fn summary(&self) -> MetricSummary {
        MetricSummary {
            accuracy: self.accuracy,
            sensitivity: self.sensitivity,
            specificity: self.specificity,
            precision: self.precision,
            f1: self.f1,
        }
    }
}

/// The five reported metrics, in table column order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
}

impl MetricSummary {
    pub const COLUMNS: [&'static str; 5] =
        ["accuracy", "sensitivity", "specificity", "precision", "f1"];

    pub fn values(&self) -> [f64; 5] {
        [
            self.accuracy,
            self.sensitivity,
            self.specificity,
            self.precision,
            self.f1,
        ]
    }

    /// Column-wise mean over folds.
    pub fn mean(items: &[MetricSummary]) -> MetricSummary {
        let n = items.len().max(1) as f64;
        let mut acc = [0.0; 5];
        for m in items {
            for (a, v) in acc.iter_mut().zip(m.values()) {
                *a += v;
            }
        }
        MetricSummary {
            accuracy: acc[0] / n,
            sensitivity: acc[1] / n,
            specificity: acc[2] / n,
            precision: acc[3] / n,
            f1: acc[4] / n,
        }
    }
}
