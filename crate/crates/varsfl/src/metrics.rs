//! Multiclass evaluation: confusion matrix, accuracy, macro/weighted F1,
//! precision, per-class recall, and rounds-to-threshold convergence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `C x C` counts; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<u64>,
    num_classes: usize,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn count(&self, true_class: usize, pred_class: usize) -> u64 {
        self.counts[true_class * self.num_classes + pred_class]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Per-class true-sample counts (row sums).
    pub fn support(&self) -> Vec<u64> {
        (0..self.num_classes)
            .map(|c| {
                self.counts[c * self.num_classes..(c + 1) * self.num_classes]
                    .iter()
                    .sum()
            })
            .collect()
    }

    fn predicted_counts(&self) -> Vec<u64> {
        let mut cols = vec![0u64; self.num_classes];
        for t in 0..self.num_classes {
            for (p, col) in cols.iter_mut().enumerate() {
                *col += self.count(t, p);
            }
        }
        cols
    }

    pub fn accuracy(&self) -> f64 {
        let trace: u64 = (0..self.num_classes).map(|c| self.count(c, c)).sum();
        trace as f64 / self.total() as f64
    }

    /// Exact integer merge of two matrices over the same class space.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.num_classes, other.num_classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

/// Count-exact confusion matrix from parallel prediction/label vectors.
pub fn confusion(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut counts = vec![0u64; num_classes * num_classes];
    for (&p, &t) in preds.iter().zip(labels) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::invalid(format!(
                "class index out of range: pred {p}, label {t}, num_classes {num_classes}"
            )));
        }
        counts[t * num_classes + p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        num_classes,
    })
}

/// One evaluation snapshot. `f1_zero_support_as_zero` records the averaging
/// convention: classes with no true and no predicted samples contribute an
/// F1 of 0 to the macro mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub accuracy: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    pub precision_macro: f64,
    pub precision_weighted: f64,
    pub loss: f64,
    pub per_class_recall: Vec<f64>,
    pub f1_zero_support_as_zero: bool,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Summarize a confusion matrix (plus an externally computed mean loss)
/// into the standard multiclass metrics. 0/0 rates are defined as 0.
pub fn summarize(cm: &ConfusionMatrix, mean_loss: f64) -> MetricsRecord {
    let c = cm.num_classes();
    let support = cm.support();
    let predicted = cm.predicted_counts();
    let total = cm.total() as f64;

    let mut f1_sum = 0.0;
    let mut f1_weighted = 0.0;
    let mut precision_sum = 0.0;
    let mut precision_weighted = 0.0;
    let mut per_class_recall = Vec::with_capacity(c);
    for class in 0..c {
        let tp = cm.count(class, class) as f64;
        let precision = ratio(tp, predicted[class] as f64);
        let recall = ratio(tp, support[class] as f64);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        f1_sum += f1;
        precision_sum += precision;
        f1_weighted += support[class] as f64 * f1;
        precision_weighted += support[class] as f64 * precision;
        per_class_recall.push(recall);
    }

    MetricsRecord {
        accuracy: cm.accuracy(),
        f1_macro: f1_sum / c as f64,
        f1_weighted: f1_weighted / total,
        precision_macro: precision_sum / c as f64,
        precision_weighted: precision_weighted / total,
        loss: mean_loss,
        per_class_recall,
        f1_zero_support_as_zero: true,
    }
}

/// Per-class recall (`diag / row sum`, 0 when the class has no support).
pub fn per_class_recall(cm: &ConfusionMatrix) -> Vec<f64> {
    let support = cm.support();
    (0..cm.num_classes())
        .map(|c| ratio(cm.count(c, c) as f64, support[c] as f64))
        .collect()
}

/// First round (1-based) whose accuracy reaches `threshold`, or `None` if
/// the series never crosses it. First crossing, not sustained crossing.
pub fn rounds_to_threshold(accuracy_series: &[f64], threshold: f64) -> Option<u64> {
    accuracy_series
        .iter()
        .position(|&a| a >= threshold)
        .map(|i| i as u64 + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_predictions_give_diagonal_and_ones() {
        let labels = vec![0, 1, 2, 1, 0];
        let cm = confusion(&labels, &labels, 3).unwrap();
        for t in 0..3 {
            for p in 0..3 {
                assert_eq!(cm.count(t, p), if t == p { cm.support()[t] } else { 0 });
            }
        }
        let m = summarize(&cm, 0.0);
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.f1_macro, 1.0);
        assert_eq!(m.f1_weighted, 1.0);
        assert!(m.per_class_recall.iter().all(|&r| r == 1.0));
    }

    #[test]
    fn counts_are_exact() {
        let cm = confusion(&[0, 1], &[1, 1], 2).unwrap();
        assert_eq!(cm.count(1, 0), 1);
        assert_eq!(cm.count(1, 1), 1);
        assert_eq!(cm.count(0, 0), 0);
        // row sums = per-class support
        assert_eq!(cm.support(), vec![0, 2]);
    }

    #[test]
    fn out_of_range_class_is_an_error() {
        assert!(confusion(&[3], &[0], 3).is_err());
        assert!(confusion(&[0], &[7], 3).is_err());
        assert!(confusion(&[0, 1], &[0], 2).is_err());
    }

    #[test]
    fn binary_hand_computed_example() {
        // cm [[8,2],[4,6]]
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for (t, p, k) in [(0, 0, 8), (0, 1, 2), (1, 0, 4), (1, 1, 6)] {
            for _ in 0..k {
                labels.push(t);
                preds.push(p);
            }
        }
        let cm = confusion(&preds, &labels, 2).unwrap();
        let m = summarize(&cm, 0.0);
        assert!((m.accuracy - 0.7).abs() < 1e-12);
        assert!((m.per_class_recall[0] - 0.8).abs() < 1e-12);
        assert!((m.per_class_recall[1] - 0.6).abs() < 1e-12);
        // class0 P=8/12 F1~0.7273, class1 P=6/8 F1~0.6667, macro ~0.6970
        let f1_0: f64 = 2.0 * (8.0 / 12.0) * 0.8 / (8.0 / 12.0 + 0.8);
        let f1_1: f64 = 2.0 * 0.75 * 0.6 / (0.75 + 0.6);
        assert!((f1_0 - 0.72727272).abs() < 1e-6);
        assert!((f1_1 - 0.66666666).abs() < 1e-6);
        assert!((m.f1_macro - (f1_0 + f1_1) / 2.0).abs() < 1e-12);
        assert!((m.f1_macro - 0.696969696).abs() < 1e-6);
        assert!((m.precision_macro - (8.0 / 12.0 + 0.75) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn absent_class_contributes_zero_f1_to_macro() {
        // class 2 never true, never predicted
        let cm = confusion(&[0, 1], &[0, 1], 3).unwrap();
        let m = summarize(&cm, 0.0);
        assert!((m.f1_macro - 2.0 / 3.0).abs() < 1e-12);
        assert!(m.f1_zero_support_as_zero);
        // weighted ignores the zero-support class entirely
        assert_eq!(m.f1_weighted, 1.0);
    }

    #[test]
    fn single_class_weighted_f1_equals_that_class() {
        let cm = confusion(&[0, 0, 1], &[0, 0, 0], 2).unwrap();
        let m = summarize(&cm, 0.0);
        let p0 = 2.0 / 3.0;
        let f1_0 = 2.0 * p0 * 1.0 / (p0 + 1.0);
        assert!((m.f1_weighted - f1_0).abs() < 1e-12);
    }

    #[test]
    fn recall_consistent_with_summarize() {
        let cm = confusion(&[0, 1, 1, 2], &[0, 1, 2, 2], 3).unwrap();
        assert_eq!(per_class_recall(&cm), summarize(&cm, 0.0).per_class_recall);
        // fully misclassified class has recall 0
        let cm2 = confusion(&[1, 1], &[0, 0], 2).unwrap();
        assert_eq!(per_class_recall(&cm2), vec![0.0, 0.0]);
    }

    #[test]
    fn rounds_to_threshold_first_crossing() {
        assert_eq!(rounds_to_threshold(&[0.5, 0.76, 0.74], 0.75), Some(2));
        assert_eq!(rounds_to_threshold(&[0.5, 0.6, 0.7], 0.75), None);
        assert_eq!(rounds_to_threshold(&[0.5, 0.6], 0.0), Some(1));
        assert_eq!(rounds_to_threshold(&[], 0.5), None);
    }

    /// Independent per-sample recomputation used as an oracle.
    fn brute_force(preds: &[usize], labels: &[usize], c: usize, loss: f64) -> MetricsRecord {
        let mut rec = MetricsRecord {
            accuracy: preds.iter().zip(labels).filter(|&(p, t)| p == t).count() as f64
                / labels.len() as f64,
            f1_macro: 0.0,
            f1_weighted: 0.0,
            precision_macro: 0.0,
            precision_weighted: 0.0,
            loss,
            per_class_recall: vec![],
            f1_zero_support_as_zero: true,
        };
        for k in 0..c {
            let tp = preds
                .iter()
                .zip(labels)
                .filter(|&(&p, &t)| p == k && t == k)
                .count() as f64;
            let pred_k = preds.iter().filter(|&&p| p == k).count() as f64;
            let true_k = labels.iter().filter(|&&t| t == k).count() as f64;
            let p = if pred_k > 0.0 { tp / pred_k } else { 0.0 };
            let r = if true_k > 0.0 { tp / true_k } else { 0.0 };
            let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            rec.f1_macro += f1 / c as f64;
            rec.precision_macro += p / c as f64;
            rec.f1_weighted += true_k * f1 / labels.len() as f64;
            rec.precision_weighted += true_k * p / labels.len() as f64;
            rec.per_class_recall.push(r);
        }
        rec
    }

    #[test]
    fn summarize_matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        for _ in 0..20 {
            let n = 500;
            let c = 15;
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            let preds: Vec<usize> = labels
                .iter()
                .map(|&t| {
                    if rng.random::<f64>() < 0.6 {
                        t
                    } else {
                        rng.random_range(0..c)
                    }
                })
                .collect();
            let cm = confusion(&preds, &labels, c).unwrap();
            let a = summarize(&cm, 1.23);
            let b = brute_force(&preds, &labels, c, 1.23);
            assert!((a.accuracy - b.accuracy).abs() < 1e-12);
            assert!((a.f1_macro - b.f1_macro).abs() < 1e-12);
            assert!((a.f1_weighted - b.f1_weighted).abs() < 1e-12);
            assert!((a.precision_macro - b.precision_macro).abs() < 1e-12);
            assert!((a.precision_weighted - b.precision_weighted).abs() < 1e-12);
            for (x, y) in a.per_class_recall.iter().zip(&b.per_class_recall) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn merge_is_exact_addition() {
        let a = confusion(&[0, 1], &[0, 1], 2).unwrap();
        let b = confusion(&[1, 1], &[0, 1], 2).unwrap();
        let mut m = a.clone();
        m.merge(&b);
        assert_eq!(m.total(), 4);
        assert_eq!(m.count(0, 1), 1);
    }
}
