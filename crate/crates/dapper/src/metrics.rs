//! Binary classification metrics on the 0-100 scale.
//!
//! The positive class is label `1`. Rates are percentages: recall (pd)
//! and false positive rate (pf) range over [0, 100], and the g-measure
//! is the harmonic mean of pd and 100 - pf. A metric whose denominator
//! is zero is undefined and reported as `None`, never silently as 0.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("input lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    Empty,
    #[error("label {value} at row {row}: expected 0 or 1")]
    InvalidLabel { row: usize, value: i8 },
    #[error("score at row {row} is not finite")]
    NonFiniteScore { row: usize },
    #[error("AUC is undefined: truth contains a single class")]
    SingleClassTruth,
}

/// Outcome counts of a binary classifier against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// The metric suite reported for every experiment cell.
///
/// `None` marks an undefined value (zero denominator, or single-class
/// truth for AUC). `auc` is on [0, 1]; everything else is on [0, 100].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub recall: Option<f64>,
    pub pf: Option<f64>,
    pub g_measure: Option<f64>,
    pub precision: Option<f64>,
    pub f_measure: Option<f64>,
    pub auc: Option<f64>,
}

/// Tallies confusion counts. Labels must be 0 or 1 on both sides.
pub fn confusion(y_true: &[i8], y_pred: &[i8]) -> Result<ConfusionCounts, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::LengthMismatch { left: y_true.len(), right: y_pred.len() });
    }
    if y_true.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut c = ConfusionCounts { tp: 0, fp: 0, tn: 0, fn_: 0 };
    for (row, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
        for &v in [t, p].iter() {
            if v != 0 && v != 1 {
                return Err(MetricsError::InvalidLabel { row, value: v });
            }
        }
        match (t, p) {
            (1, 1) => c.tp += 1,
            (0, 1) => c.fp += 1,
            (0, 0) => c.tn += 1,
            (1, 0) => c.fn_ += 1,
            _ => unreachable!(),
        }
    }
    Ok(c)
}

fn rate(numerator: usize, denominator: usize) -> Option<f64> {
    if denominator == 0 {
        None
    } else {
        Some(100.0 * numerator as f64 / denominator as f64)
    }
}

/// Harmonic mean of recall and 100 - pf, both on the 0-100 scale.
///
/// Undefined when the two components are both zero (recall 0 at pf 100).
pub fn g_measure(recall: f64, pf: f64) -> Option<f64> {
    harmonic(recall, 100.0 - pf)
}

/// Harmonic mean of recall and precision on the 0-100 scale.
pub fn f_measure(recall: f64, precision: f64) -> Option<f64> {
    harmonic(recall, precision)
}

fn harmonic(a: f64, b: f64) -> Option<f64> {
    if a + b <= 0.0 {
        None
    } else {
        Some(2.0 * a * b / (a + b))
    }
}

/// Derives the rate metrics from confusion counts. `auc` is left `None`;
/// it needs scores, not counts, and is filled in separately.
pub fn compute_metrics(counts: &ConfusionCounts) -> MetricReport {
    let recall = rate(counts.tp, counts.tp + counts.fn_);
    let pf = rate(counts.fp, counts.fp + counts.tn);
    let precision = rate(counts.tp, counts.tp + counts.fp);
    let g = match (recall, pf) {
        (Some(r), Some(p)) => g_measure(r, p),
        _ => None,
    };
    let f = match (recall, precision) {
        (Some(r), Some(p)) => f_measure(r, p),
        _ => None,
    };
    MetricReport { recall, pf, g_measure: g, precision, f_measure: f, auc: None }
}

/// Area under the ROC curve by the Mann-Whitney statistic with average
/// ranks for tied scores. Returns a value in [0, 1].
pub fn auc_roc(y_true: &[i8], scores: &[f64]) -> Result<f64, MetricsError> {
    if y_true.len() != scores.len() {
        return Err(MetricsError::LengthMismatch { left: y_true.len(), right: scores.len() });
    }
    if y_true.is_empty() {
        return Err(MetricsError::Empty);
    }
    for (row, &v) in y_true.iter().enumerate() {
        if v != 0 && v != 1 {
            return Err(MetricsError::InvalidLabel { row, value: v });
        }
    }
    for (row, &s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(MetricsError::NonFiniteScore { row });
        }
    }
    let n_pos = y_true.iter().filter(|&&v| v == 1).count();
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClassTruth);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the average rank of 1-based
        // positions i+1..=j+1.
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if y_true[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }

    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn confusion_counts_small_example() {
        let c = confusion(&[1, 1, 0, 0, 1], &[1, 0, 0, 1, 1]).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 2, fp: 1, tn: 1, fn_: 1 });
        assert_eq!(c.total(), 5);
    }

    #[test]
    fn confusion_rejects_bad_input() {
        assert_eq!(
            confusion(&[1, 0], &[1]),
            Err(MetricsError::LengthMismatch { left: 2, right: 1 })
        );
        assert_eq!(confusion(&[], &[]), Err(MetricsError::Empty));
        assert_eq!(
            confusion(&[1, 2], &[1, 1]),
            Err(MetricsError::InvalidLabel { row: 1, value: 2 })
        );
        assert_eq!(
            confusion(&[1, 0], &[1, -1]),
            Err(MetricsError::InvalidLabel { row: 1, value: -1 })
        );
    }

    #[test]
    fn perfect_classifier_scores_100() {
        let c = confusion(&[1, 0, 1, 0], &[1, 0, 1, 0]).unwrap();
        let m = compute_metrics(&c);
        assert_eq!(m.recall, Some(100.0));
        assert_eq!(m.pf, Some(0.0));
        assert_eq!(m.g_measure, Some(100.0));
        assert_eq!(m.precision, Some(100.0));
        assert_eq!(m.f_measure, Some(100.0));
        assert_eq!(m.auc, None);
    }

    #[test]
    fn undefined_metrics_are_none_not_zero() {
        // All-negative predictions on all-negative truth: recall and
        // precision have zero denominators.
        let c = confusion(&[0, 0, 0], &[0, 0, 0]).unwrap();
        let m = compute_metrics(&c);
        assert_eq!(m.recall, None);
        assert_eq!(m.pf, Some(0.0));
        assert_eq!(m.g_measure, None);
        assert_eq!(m.precision, None);
        assert_eq!(m.f_measure, None);

        // Worst case: recall 0 at pf 100 makes the g denominator zero.
        assert_eq!(g_measure(0.0, 100.0), None);
        assert_eq!(f_measure(0.0, 0.0), None);
    }

    #[test]
    fn g_measure_reference_pairs() {
        // (recall, pf, expected g), all on the 0-100 scale, verified by
        // hand against 2*pd*(100-pf)/(pd+(100-pf)).
        let cases = [
            (58.3, 0.1, 73.6),
            (85.4, 9.7, 87.8),
            (99.2, 0.4, 99.4),
            (94.0, 0.6, 96.6),
            (98.3, 0.3, 99.0),
            (96.3, 6.3, 95.0),
        ];
        for (recall, pf, expected) in cases {
            let g = g_measure(recall, pf).unwrap();
            assert!((g - expected).abs() < 0.1, "g({recall}, {pf}) = {g}, expected {expected}");
        }
    }

    #[test]
    fn auc_reference_cases() {
        assert_eq!(auc_roc(&[0, 0, 1, 1], &[0.1, 0.2, 0.8, 0.9]).unwrap(), 1.0);
        assert_eq!(auc_roc(&[0, 0, 1, 1], &[0.9, 0.8, 0.2, 0.1]).unwrap(), 0.0);
        assert_eq!(auc_roc(&[0, 1, 0, 1], &[0.5, 0.5, 0.5, 0.5]).unwrap(), 0.5);
        // One inverted pair out of four: positives score 0.35 and 0.8
        // against negatives at 0.1 and 0.4.
        let auc = auc_roc(&[0, 0, 1, 1], &[0.1, 0.4, 0.35, 0.8]).unwrap();
        assert!((auc - 0.75).abs() < 1e-12);
        // Tied group spanning both classes: ranks 1, 2.5, 2.5, 4.
        let auc = auc_roc(&[0, 0, 1, 1], &[1.0, 2.0, 2.0, 3.0]).unwrap();
        assert!((auc - 0.875).abs() < 1e-12);
    }

    #[test]
    fn auc_rejects_degenerate_input() {
        assert_eq!(auc_roc(&[1, 1], &[0.1, 0.2]), Err(MetricsError::SingleClassTruth));
        assert_eq!(auc_roc(&[0, 0], &[0.1, 0.2]), Err(MetricsError::SingleClassTruth));
        assert_eq!(
            auc_roc(&[0, 1], &[0.1, f64::NAN]),
            Err(MetricsError::NonFiniteScore { row: 1 })
        );
        assert_eq!(auc_roc(&[], &[]), Err(MetricsError::Empty));
    }

    fn label_pred_vec() -> impl Strategy<Value = (Vec<i8>, Vec<i8>)> {
        prop::collection::vec((0i8..=1, 0i8..=1), 1..200).prop_map(|v| v.into_iter().unzip())
    }

    proptest! {
        #[test]
        fn counts_partition_the_input((y_true, y_pred) in label_pred_vec()) {
            let c = confusion(&y_true, &y_pred).unwrap();
            prop_assert_eq!(c.total(), y_true.len());
        }

        #[test]
        fn rates_stay_in_range((y_true, y_pred) in label_pred_vec()) {
            let m = compute_metrics(&confusion(&y_true, &y_pred).unwrap());
            for v in [m.recall, m.pf, m.g_measure, m.precision, m.f_measure].into_iter().flatten() {
                prop_assert!((0.0..=100.0).contains(&v));
            }
        }

        #[test]
        fn harmonic_mean_sits_between_components(a in 0.0f64..=100.0, b in 0.0f64..=100.0) {
            if let Some(h) = harmonic(a, b) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(h >= lo - 1e-9 && h <= hi + 1e-9);
            }
        }

        #[test]
        fn auc_is_invariant_under_monotone_rescaling(
            pairs in prop::collection::vec((0i8..=1, -1e3f64..1e3), 2..100)
        ) {
            let (y, s): (Vec<i8>, Vec<f64>) = pairs.into_iter().unzip();
            let both = y.contains(&0) && y.contains(&1);
            prop_assume!(both);
            let base = auc_roc(&y, &s).unwrap();
            let scaled: Vec<f64> = s.iter().map(|v| 3.5 * v + 11.0).collect();
            prop_assert!((auc_roc(&y, &scaled).unwrap() - base).abs() < 1e-12);
            let negated: Vec<f64> = s.iter().map(|v| -v).collect();
            prop_assert!((auc_roc(&y, &negated).unwrap() - (1.0 - base)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&base));
        }
    }
}
