//! Confusion matrices and the classification metrics derived from them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::ClassProbabilities;
use crate::label::NUM_CLASSES;

/// Probabilities are clamped to this floor before taking the log.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("truths and predictions differ in length ({truths} vs {preds})")]
    LengthMismatch { truths: usize, preds: usize },
    #[error("class index {index} out of range for {num_classes} classes")]
    IndexError { index: usize, num_classes: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
}

/// `−ln p[true_class]`, with `p` clamped to at least [`PROBABILITY_FLOOR`].
pub fn cross_entropy_loss(probs: &ClassProbabilities, true_class: usize) -> Result<f64, MetricsError> {
    let p = probs.probs.get(true_class).ok_or(MetricsError::IndexError {
        index: true_class,
        num_classes: probs.probs.len(),
    })?;
    Ok(-(f64::from(*p).max(PROBABILITY_FLOOR)).ln())
}

/// Square count matrix; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_rows(rows: Vec<Vec<u64>>) -> Option<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return None;
        }
        Some(Self {
            num_classes: k,
            counts: rows.into_iter().flatten().collect(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.num_classes..(truth + 1) * self.num_classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks(self.num_classes.max(1))
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<(), MetricsError> {
        for index in [truth, pred] {
            if index >= self.num_classes {
                return Err(MetricsError::IndexError {
                    index,
                    num_classes: self.num_classes,
                });
            }
        }
        self.counts[truth * self.num_classes + pred] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|i| self.get(i, i)).sum()
    }

    /// Row sum: number of samples whose true class is `class`.
    pub fn support(&self, class: usize) -> u64 {
        self.row(class).iter().sum()
    }

    /// Column sum: number of samples predicted as `class`.
    pub fn predicted(&self, class: usize) -> u64 {
        (0..self.num_classes).map(|t| self.get(t, class)).sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.num_classes, other.num_classes, "class count mismatch");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

/// Counts `(truth, pred)` pairs over the 25-class catalog.
pub fn confusion_matrix(truths: &[usize], preds: &[usize]) -> Result<ConfusionMatrix, MetricsError> {
    confusion_matrix_k(truths, preds, NUM_CLASSES)
}

pub fn confusion_matrix_k(
    truths: &[usize],
    preds: &[usize],
    num_classes: usize,
) -> Result<ConfusionMatrix, MetricsError> {
    if truths.len() != preds.len() {
        return Err(MetricsError::LengthMismatch {
            truths: truths.len(),
            preds: preds.len(),
        });
    }
    let mut cm = ConfusionMatrix::new(num_classes);
    for (&t, &p) in truths.iter().zip(preds) {
        cm.record(t, p)?;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Macro,
    Weighted,
}

impl Averaging {
    pub fn as_str(self) -> &'static str {
        match self {
            Averaging::Macro => "macro",
            Averaging::Weighted => "weighted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Nothing was predicted as this class, so precision is undefined (reported as 0).
    pub precision_undefined: bool,
    /// The class has no samples, so recall is undefined (reported as 0).
    pub recall_undefined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragedMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationMetrics {
    /// Mean cross-entropy, when computed from probabilities.
    pub loss: Option<f64>,
    pub samples: u64,
    pub accuracy: f64,
    /// Headline figures, using `averaging`.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub averaging: Averaging,
    pub macro_avg: AveragedMetrics,
    pub weighted_avg: AveragedMetrics,
    pub per_class: Vec<ClassMetrics>,
}

impl EvaluationMetrics {
    /// Classes whose precision or recall hit a zero denominator.
    pub fn zero_division_classes(&self) -> Vec<usize> {
        self.per_class
            .iter()
            .enumerate()
            .filter(|(_, c)| c.precision_undefined || c.recall_undefined)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Accuracy plus per-class, macro and support-weighted precision/recall/F1.
/// Zero denominators contribute 0 and are flagged per class.
pub fn metrics_from_confusion(cm: &ConfusionMatrix, averaging: Averaging) -> Result<EvaluationMetrics, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let k = cm.num_classes();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = cm.get(c, c) as f64;
            let predicted = cm.predicted(c);
            let support = cm.support(c);
            let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
            let recall = if support > 0 { tp / support as f64 } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
                precision_undefined: predicted == 0,
                recall_undefined: support == 0,
            }
        })
        .collect();

    let n = total as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per_class.iter().map(|c| c.support as f64 * f(c)).sum::<f64>() / n
    };
    let macro_avg = AveragedMetrics {
        precision: mean(|c| c.precision),
        recall: mean(|c| c.recall),
        f1: mean(|c| c.f1),
    };
    let weighted_avg = AveragedMetrics {
        precision: weighted(|c| c.precision),
        recall: weighted(|c| c.recall),
        f1: weighted(|c| c.f1),
    };
    let headline = match averaging {
        Averaging::Macro => macro_avg,
        Averaging::Weighted => weighted_avg,
    };
    Ok(EvaluationMetrics {
        loss: None,
        samples: total,
        accuracy: cm.trace() as f64 / n,
        precision: headline.precision,
        recall: headline.recall,
        f1: headline.f1,
        averaging,
        macro_avg,
        weighted_avg,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Per-sample recount, independent of the confusion matrix.
    fn brute_force(truths: &[usize], preds: &[usize], k: usize) -> (f64, Vec<(f64, f64, f64, usize)>) {
        let n = truths.len();
        let correct = truths.iter().zip(preds).filter(|(t, p)| t == p).count();
        let per_class = (0..k)
            .map(|c| {
                let tp = (0..n).filter(|&i| truths[i] == c && preds[i] == c).count();
                let fp = (0..n).filter(|&i| truths[i] != c && preds[i] == c).count();
                let fn_ = (0..n).filter(|&i| truths[i] == c && preds[i] != c).count();
                let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
                let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
                let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
                (p, r, f, tp + fn_)
            })
            .collect();
        (correct as f64 / n as f64, per_class)
    }

    #[test]
    fn cross_entropy_values() {
        let mut one_hot = vec![0.0f32; 25];
        one_hot[4] = 1.0;
        assert_eq!(cross_entropy_loss(&ClassProbabilities { probs: one_hot.clone() }, 4).unwrap(), 0.0);

        let uniform = ClassProbabilities { probs: vec![1.0 / 25.0; 25] };
        let loss = cross_entropy_loss(&uniform, 0).unwrap();
        assert!((loss - 25f64.ln()).abs() < 1e-6, "{loss}");
        assert!((loss - 3.2189).abs() < 1e-4);

        let zero = cross_entropy_loss(&ClassProbabilities { probs: one_hot.clone() }, 0).unwrap();
        assert!(zero.is_finite());
        assert!((zero - 27.631).abs() < 1e-3, "{zero}");

        assert_eq!(
            cross_entropy_loss(&ClassProbabilities { probs: one_hot }, 25),
            Err(MetricsError::IndexError { index: 25, num_classes: 25 })
        );
    }

    #[test]
    fn cross_entropy_is_decreasing_in_true_probability() {
        let mut last = f64::INFINITY;
        for i in 0..=20 {
            let p = i as f32 / 20.0;
            let loss = cross_entropy_loss(&ClassProbabilities { probs: vec![p, 1.0 - p] }, 0).unwrap();
            assert!(loss >= 0.0);
            assert!(loss < last);
            last = loss;
        }
        assert_eq!(last, 0.0);
    }

    #[test]
    fn confusion_matrix_counts() {
        let cm = confusion_matrix(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap();
        assert_eq!(&cm.row(0)[..3], &[1, 1, 0]);
        assert_eq!(&cm.row(1)[..3], &[0, 2, 0]);
        assert_eq!(cm.total(), 4);

        let labels: Vec<usize> = (0..25).chain(0..10).collect();
        let cm = confusion_matrix(&labels, &labels).unwrap();
        assert_eq!(cm.trace(), 35);
        assert_eq!(cm.total(), 35);

        let empty = confusion_matrix(&[], &[]).unwrap();
        assert_eq!(empty.total(), 0);
        assert_eq!(empty.num_classes(), 25);
    }

    #[test]
    fn confusion_matrix_errors() {
        assert_eq!(
            confusion_matrix(&[0, 1], &[0]),
            Err(MetricsError::LengthMismatch { truths: 2, preds: 1 })
        );
        assert_eq!(
            confusion_matrix(&[0], &[25]),
            Err(MetricsError::IndexError { index: 25, num_classes: 25 })
        );
    }

    #[test]
    fn perfect_predictions_score_one() {
        let labels: Vec<usize> = (0..25).collect();
        let m = metrics_from_confusion(&confusion_matrix(&labels, &labels).unwrap(), Averaging::Weighted).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
        assert_eq!((m.macro_avg.precision, m.macro_avg.f1), (1.0, 1.0));
    }

    #[test]
    fn two_class_hand_computation() {
        let cm = ConfusionMatrix::from_rows(vec![vec![8, 2], vec![1, 9]]).unwrap();
        let m = metrics_from_confusion(&cm, Averaging::Weighted).unwrap();
        assert!((m.accuracy - 0.85).abs() < 1e-12);
        assert!((m.per_class[0].precision - 8.0 / 9.0).abs() < 1e-12);
        assert!((m.per_class[0].recall - 0.8).abs() < 1e-12);
        assert!((m.per_class[1].precision - 9.0 / 11.0).abs() < 1e-12);
        assert!((m.per_class[1].recall - 0.9).abs() < 1e-12);
        let p0 = 8.0 / 9.0;
        assert!((m.per_class[0].f1 - 2.0 * p0 * 0.8 / (p0 + 0.8)).abs() < 1e-12);
        assert!((m.recall - m.accuracy).abs() < 1e-12);
    }

    #[test]
    fn zero_division_is_flagged() {
        // Class 2 never appears and is never predicted; class 1 is never predicted.
        let cm = confusion_matrix_k(&[0, 1], &[0, 0], 3).unwrap();
        let m = metrics_from_confusion(&cm, Averaging::Macro).unwrap();
        assert!(m.per_class[1].precision_undefined);
        assert!(!m.per_class[1].recall_undefined);
        assert!(m.per_class[2].precision_undefined && m.per_class[2].recall_undefined);
        assert_eq!(m.per_class[2].f1, 0.0);
        assert_eq!(m.zero_division_classes(), vec![1, 2]);
        assert!((m.precision - (0.5 + 0.0 + 0.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_matrix_is_an_error() {
        assert_eq!(
            metrics_from_confusion(&ConfusionMatrix::new(25), Averaging::Weighted),
            Err(MetricsError::EmptyMatrix)
        );
    }

    fn instance() -> impl Strategy<Value = (usize, Vec<usize>, Vec<usize>)> {
        (1usize..=25, 1usize..=300).prop_flat_map(|(k, n)| {
            (
                Just(k),
                prop::collection::vec(0..k, n),
                prop::collection::vec(0..k, n),
            )
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force_recount((k, truths, preds) in instance()) {
            let cm = confusion_matrix_k(&truths, &preds, k).unwrap();
            prop_assert_eq!(cm.total() as usize, truths.len());
            let m = metrics_from_confusion(&cm, Averaging::Weighted).unwrap();
            let (acc, per_class) = brute_force(&truths, &preds, k);
            prop_assert!((m.accuracy - acc).abs() < 1e-9);
            for (c, (p, r, f, s)) in per_class.iter().enumerate() {
                prop_assert!((m.per_class[c].precision - p).abs() < 1e-9);
                prop_assert!((m.per_class[c].recall - r).abs() < 1e-9);
                prop_assert!((m.per_class[c].f1 - f).abs() < 1e-9);
                prop_assert_eq!(m.per_class[c].support as usize, *s);
            }
            prop_assert!((m.recall - m.accuracy).abs() <= 1e-12);
        }

        #[test]
        fn merged_shards_equal_serial((k, truths, preds) in instance(), cut in 0usize..300) {
            let cut = cut.min(truths.len());
            let mut a = confusion_matrix_k(&truths[..cut], &preds[..cut], k).unwrap();
            let b = confusion_matrix_k(&truths[cut..], &preds[cut..], k).unwrap();
            a.merge(&b);
            prop_assert_eq!(a, confusion_matrix_k(&truths, &preds, k).unwrap());
        }
    }
}
