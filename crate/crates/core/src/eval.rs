//! ROC curves, AUC and threshold metrics.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("ROC needs at least one positive and one negative label")]
    SingleClass,
    #[error("score at position {0} is not finite")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Rows scoring at or above this value are called positive.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite(i));
    }
    let positives = labels.iter().filter(|l| **l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::SingleClass);
    }
    Ok((positives, negatives))
}

fn descending(a: &f64, b: &f64) -> Ordering {
    b.partial_cmp(a).expect("finite scores")
}

/// ROC points from `(0,0)` to `(1,1)`, one step per distinct score. Tied
/// scores move both coordinates in a single step.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>, EvalError> {
    let (positives, negatives) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| descending(&scores[a], &scores[b]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a ROC curve.
pub fn auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    Ok(auc(&roc_curve(scores, labels)?))
}

/// Mann-Whitney form of the AUC: the probability that a random positive
/// outscores a random negative, ties counting one half. Uses mid-ranks.
pub fn concordance_auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    let (positives, negatives) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share the mid-rank
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * order[i..j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j;
    }
    let p = positives as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

/// Counts at a fixed decision threshold (positive iff score >= threshold).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn at_threshold(scores: &[f64], labels: &[bool], threshold: f64) -> Confusion {
        assert_eq!(scores.len(), labels.len());
        let mut c = Confusion::default();
        for (&s, &l) in scores.iter().zip(labels) {
            match (s >= threshold, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    /// `None` when there are no positives.
    pub fn sensitivity(&self) -> Option<f64> {
        let p = self.tp + self.fn_;
        (p > 0).then(|| self.tp as f64 / p as f64)
    }

    /// `None` when there are no negatives.
    pub fn specificity(&self) -> Option<f64> {
        let n = self.tn + self.fp;
        (n > 0).then(|| self.tn as f64 / n as f64)
    }
}

/// `(sensitivity, specificity)` at `threshold`.
pub fn confusion_metrics(
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
) -> (Option<f64>, Option<f64>) {
    let c = Confusion::at_threshold(scores, labels, threshold);
    (c.sensitivity(), c.specificity())
}

pub fn write_roc<W: Write>(sink: W, points: &[RocPoint]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(sink);
    out.write_record(["threshold", "fpr", "tpr"])?;
    for p in points {
        out.write_record([
            p.threshold.to_string(),
            p.fpr.to_string(),
            p.tpr.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct pairwise count over every positive-negative pair.
    fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    /// Every distinct threshold evaluated independently.
    fn enumerate_roc(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let p = labels.iter().filter(|l| **l).count() as f64;
        let n = labels.len() as f64 - p;
        let mut pts = vec![(0.0, 0.0)];
        for t in thresholds {
            let c = Confusion::at_threshold(scores, labels, t);
            pts.push((c.fp as f64 / n, c.tp as f64 / p));
        }
        pts
    }

    #[test]
    fn perfect_separation() {
        let pts = roc_curve(&[0.9, 0.1], &[true, false]).unwrap();
        let xy: Vec<(f64, f64)> = pts.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(xy, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        assert_eq!(auc(&pts), 1.0);
    }

    #[test]
    fn all_tied_scores() {
        let pts = roc_curve(&[0.3; 4], &[true, false, true, false]).unwrap();
        let xy: Vec<(f64, f64)> = pts.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(xy, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(auc(&pts), 0.5);
    }

    #[test]
    fn four_point_case() {
        let scores = [0.9, 0.8, 0.7, 0.1];
        let labels = [true, false, true, false];
        assert_eq!(pairwise_auc(&scores, &labels), 0.75);
        assert_eq!(roc_auc(&scores, &labels).unwrap(), 0.75);
        assert_eq!(concordance_auc(&scores, &labels).unwrap(), 0.75);
        let pts: Vec<(f64, f64)> = roc_curve(&scores, &labels)
            .unwrap()
            .iter()
            .map(|p| (p.fpr, p.tpr))
            .collect();
        assert_eq!(pts, enumerate_roc(&scores, &labels));
    }

    #[test]
    fn single_class_is_an_error() {
        assert_eq!(
            roc_curve(&[0.1, 0.2], &[true, true]),
            Err(EvalError::SingleClass)
        );
        assert_eq!(
            concordance_auc(&[0.1], &[false]),
            Err(EvalError::SingleClass)
        );
        assert!(matches!(
            roc_curve(&[0.1], &[true, false]),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert_eq!(
            roc_curve(&[f64::NAN, 0.1], &[true, false]),
            Err(EvalError::NonFinite(0))
        );
    }

    #[test]
    fn threshold_metrics() {
        assert_eq!(
            confusion_metrics(&[0.9, 0.1], &[true, false], 0.5),
            (Some(1.0), Some(1.0))
        );
        assert_eq!(
            confusion_metrics(&[0.0; 4], &[true, true, false, false], 0.5),
            (Some(0.0), Some(1.0))
        );
        assert_eq!(
            confusion_metrics(&[0.7, 0.2], &[false, false], 0.5),
            (None, Some(0.5))
        );
        // score equal to the threshold is called positive
        assert_eq!(confusion_metrics(&[0.5], &[true], 0.5).0, Some(1.0));
    }

    #[test]
    fn threshold_metrics_against_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let scores: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<bool> = (0..20).map(|_| rng.random_bool(0.4)).collect();
        let (sens, spec) = confusion_metrics(&scores, &labels, 0.5);
        let tp = (0..20).filter(|&i| labels[i] && scores[i] >= 0.5).count() as f64;
        let pos = labels.iter().filter(|l| **l).count() as f64;
        let tn = (0..20).filter(|&i| !labels[i] && scores[i] < 0.5).count() as f64;
        assert_eq!(sens, Some(tp / pos));
        assert_eq!(spec, Some(tn / (20.0 - pos)));
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..50)
            .prop_flat_map(|n| {
                (
                    proptest::collection::vec((0u8..12).prop_map(|v| f64::from(v) / 4.0), n),
                    proptest::collection::vec(any::<bool>(), n),
                )
            })
            .prop_filter("two classes", |(_, l)| {
                l.iter().any(|x| *x) && l.iter().any(|x| !*x)
            })
    }

    proptest! {
        #[test]
        fn trapezoid_equals_concordance((scores, labels) in instance()) {
            let a = roc_auc(&scores, &labels).unwrap();
            prop_assert!((a - pairwise_auc(&scores, &labels)).abs() < 1e-12);
            prop_assert!((a - concordance_auc(&scores, &labels).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn roc_matches_enumeration((scores, labels) in instance()) {
            let pts: Vec<(f64, f64)> = roc_curve(&scores, &labels).unwrap().iter().map(|p| (p.fpr, p.tpr)).collect();
            prop_assert_eq!(pts, enumerate_roc(&scores, &labels));
        }

        #[test]
        fn roc_is_monotone((scores, labels) in instance()) {
            let pts = roc_curve(&scores, &labels).unwrap();
            prop_assert!(pts.windows(2).all(|w| w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr));
            let last = pts.last().unwrap();
            prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        }

        #[test]
        fn increasing_transform_preserves_auc((scores, labels) in instance()) {
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            let a: Vec<(f64, f64)> = roc_curve(&scores, &labels).unwrap().iter().map(|p| (p.fpr, p.tpr)).collect();
            let b: Vec<(f64, f64)> = roc_curve(&warped, &labels).unwrap().iter().map(|p| (p.fpr, p.tpr)).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn label_flip_symmetry((scores, labels) in instance()) {
            let a = roc_auc(&scores, &labels).unwrap();
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
            prop_assert!((roc_auc(&negated, &flipped).unwrap() - a).abs() < 1e-12);
            prop_assert!((roc_auc(&scores, &flipped).unwrap() - (1.0 - a)).abs() < 1e-12);
        }
    }
}
