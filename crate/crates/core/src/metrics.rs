//! Binary classification metrics with malignant (1) as the positive class.

use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// The same counts with the roles of the two classes swapped.
    pub fn flipped(&self) -> Self {
        ConfusionMatrix {
            tp: self.tn,
            tn: self.tp,
            fp: self.fn_,
            fn_: self.fp,
        }
    }

    /// Rows = actual, columns = predicted, non-malignant first.
    pub fn as_rows(&self) -> [[u64; 2]; 2] {
        [[self.tn, self.fp], [self.fn_, self.tp]]
    }
}

pub fn confusion(predictions: &[u8], labels: &[u8]) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::Data(alloc::format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (1, 1) => cm.tp += 1,
            (0, 0) => cm.tn += 1,
            (1, 0) => cm.fp += 1,
            (0, 1) => cm.fn_ += 1,
            _ => return Err(Error::Label(alloc::format!("{p}/{y}"))),
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BasicMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, precision, recall and F1; empty denominators give 0.
pub fn basic_metrics(cm: &ConfusionMatrix) -> BasicMetrics {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    BasicMetrics {
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        precision,
        recall,
        f1,
    }
}

/// Support-weighted average `Σ (n_i/N)·m_i` of per-class values.
pub fn weighted_metrics(per_class: &[f64], supports: &[u64]) -> Result<f64> {
    let n: u64 = supports.iter().sum();
    if n == 0 || per_class.len() != supports.len() {
        return Err(Error::Data("weighted metric needs a positive total support".into()));
    }
    Ok(per_class
        .iter()
        .zip(supports)
        .map(|(&m, &s)| s as f64 / n as f64 * m)
        .sum())
}

/// Area under the ROC curve as the Mann-Whitney statistic: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Data("scores and labels differ in length".into()));
    }
    let mut items: Vec<(f64, u8)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    if items.iter().any(|(s, y)| s.is_nan() || *y > 1) {
        return Err(Error::Data("AUC needs finite scores and 0/1 labels".into()));
    }
    let n_pos = items.iter().filter(|(_, y)| *y == 1).count() as u64;
    let n_neg = items.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data("AUC is undefined when only one class is present".into()));
    }
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    // twice the number of correctly ordered pairs, kept integral
    let mut twice_wins: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < items.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < items.len() && items[j].0 == items[i].0 {
            if items[j].1 == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        twice_wins += pos * (2 * neg_below + neg);
        neg_below += neg;
        i = j;
    }
    Ok(twice_wins as f64 / (2 * n_pos * n_neg) as f64)
}

/// Per-class precision/recall/F1 with each class as its own positive.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    /// Malignant-positive values.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub non_malignant: ClassMetrics,
    pub malignant: ClassMetrics,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    /// `None` when only one class is present.
    pub auc_roc: Option<f64>,
}

impl MetricsReport {
    pub fn new(probabilities: &[f64], predictions: &[u8], labels: &[u8]) -> Result<Self> {
        let cm = confusion(predictions, labels)?;
        if cm.total() == 0 {
            return Err(Error::Data("no samples to evaluate".into()));
        }
        if probabilities.len() != labels.len() {
            return Err(Error::Data("probabilities and labels differ in length".into()));
        }
        let pos = basic_metrics(&cm);
        let neg = basic_metrics(&cm.flipped());
        let malignant = ClassMetrics {
            precision: pos.precision,
            recall: pos.recall,
            f1: pos.f1,
            support: cm.tp + cm.fn_,
        };
        let non_malignant = ClassMetrics {
            precision: neg.precision,
            recall: neg.recall,
            f1: neg.f1,
            support: cm.tn + cm.fp,
        };
        let supports = [non_malignant.support, malignant.support];
        let w = |a: f64, b: f64| weighted_metrics(&[a, b], &supports);
        Ok(MetricsReport {
            confusion: cm,
            accuracy: pos.accuracy,
            precision: pos.precision,
            recall: pos.recall,
            f1: pos.f1,
            weighted_precision: w(neg.precision, pos.precision)?,
            weighted_recall: w(neg.recall, pos.recall)?,
            weighted_f1: w(neg.f1, pos.f1)?,
            non_malignant,
            malignant,
            auc_roc: auc_roc(probabilities, labels).ok(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let cm = ConfusionMatrix { tp: 40, fn_: 10, fp: 5, tn: 45 };
        let m = basic_metrics(&cm);
        assert!((m.accuracy - 0.85).abs() < 1e-12);
        assert!((m.precision - 40.0 / 45.0).abs() < 1e-12);
        assert!((m.recall - 0.8).abs() < 1e-12);
        assert!((m.f1 - 0.842105).abs() < 1e-6);
    }

    #[test]
    fn degenerate_denominators_are_zero() {
        let cm = ConfusionMatrix { tp: 0, fp: 0, tn: 7, fn_: 3 };
        let m = basic_metrics(&cm);
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.f1, 0.0);
    }

    #[test]
    fn perfect_classifier() {
        let m = basic_metrics(&ConfusionMatrix { tp: 5, tn: 5, fp: 0, fn_: 0 });
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn weighted_examples() {
        assert!((weighted_metrics(&[0.8, 0.9], &[50, 50]).unwrap() - 0.85).abs() < 1e-12);
        assert!((weighted_metrics(&[1.0, 0.0], &[90, 10]).unwrap() - 0.9).abs() < 1e-12);
        assert!((weighted_metrics(&[0.3, 0.3], &[7, 13]).unwrap() - 0.3).abs() < 1e-12);
        assert!(weighted_metrics(&[0.3, 0.3], &[0, 0]).is_err());
    }

    #[test]
    fn auc_examples() {
        let s = [0.9, 0.4, 0.5, 0.1];
        let y = [1, 1, 0, 0];
        assert_eq!(auc_roc(&s, &y).unwrap(), 0.75);
        assert_eq!(auc_roc(&[0.5; 4], &y).unwrap(), 0.5);
        assert_eq!(auc_roc(&[0.9, 0.8, 0.2, 0.1], &y).unwrap(), 1.0);
        assert!(auc_roc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn confusion_counts() {
        let preds = [1u8; 100];
        let labels: alloc::vec::Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
        let cm = confusion(&preds, &labels).unwrap();
        assert_eq!((cm.tp, cm.fp, cm.tn, cm.fn_), (50, 50, 0, 0));
        assert!(confusion(&preds[..3], &labels).is_err());
    }
}
