//! Held-out evaluation statistics.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no examples")]
    Empty,
    #[error("score at position {0} is not finite")]
    NonFinite(usize),
    #[error("both classes must be present")]
    SingleClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    /// Fraction of `true` labels.
    pub class_prior: f64,
    pub accuracy: f64,
    /// Absent when only one class is present.
    pub roc_auc: Option<f64>,
    pub roc_points: Vec<(f64, f64)>,
}

impl EvalReport {
    pub fn compute(scores: &[f64], labels: &[bool], threshold: f64) -> Result<Self, MetricsError> {
        let roc_auc = roc_auc(scores, labels)?;
        let roc_points = if roc_auc.is_some() {
            roc_points(scores, labels)?
        } else {
            Vec::new()
        };
        Ok(Self {
            n: labels.len(),
            class_prior: class_prior(labels)?,
            accuracy: accuracy(scores, labels, threshold)?,
            roc_auc,
            roc_points,
        })
    }
}

fn check(scores: &[f64], labels: &[bool]) -> Result<(), MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite(i));
    }
    Ok(())
}

/// (score, label) pairs sorted by descending score.
fn ranked(scores: &[f64], labels: &[bool]) -> Vec<(f64, bool)> {
    let mut v: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    v.sort_by(|a, b| b.0.total_cmp(&a.0));
    v
}

/// Mann–Whitney ROC-AUC: the fraction of (positive, negative) pairs in which the
/// positive outscores the negative, ties counting one half.
///
/// Returns `Ok(None)` when either class is empty.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<Option<f64>, MetricsError> {
    check(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }

    // walk tie groups from the top; count positives already seen above each group
    let v = ranked(scores, labels);
    let mut u2: u128 = 0; // twice the U statistic, kept integral
    let mut pos_above: u128 = 0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        let (mut p, mut q) = (0u128, 0u128);
        while j < v.len() && v[j].0 == v[i].0 {
            if v[j].1 {
                p += 1;
            } else {
                q += 1;
            }
            j += 1;
        }
        u2 += q * (2 * pos_above + p);
        pos_above += p;
        i = j;
    }
    Ok(Some(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64)))
}

/// Fraction of examples where `score >= threshold` agrees with the label.
pub fn accuracy(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64, MetricsError> {
    check(scores, labels)?;
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= threshold) == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn class_prior(labels: &[bool]) -> Result<f64, MetricsError> {
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64)
}

/// ROC curve with one vertex per distinct score threshold, from (0,0) to (1,1).
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>, MetricsError> {
    check(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let v = ranked(scores, labels);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < v.len() {
        let s = v[i].0;
        while i < v.len() && v[i].0 == s {
            if v[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(points)
}

/// Trapezoidal area under a piecewise-linear curve.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_and_tied_auc() {
        let labels = [true, true, false, false];
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap(), Some(1.0));
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap(), Some(0.0));
        assert_eq!(roc_auc(&[0.5; 4], &labels).unwrap(), Some(0.5));
    }

    #[test]
    fn single_class_auc_is_absent() {
        assert_eq!(roc_auc(&[0.1, 0.2], &[true, true]).unwrap(), None);
        assert_eq!(roc_auc(&[0.1], &[false]).unwrap(), None);
    }

    #[test]
    fn length_mismatch_and_empty() {
        assert_eq!(
            roc_auc(&[0.1], &[true, false]),
            Err(MetricsError::LengthMismatch { scores: 1, labels: 2 })
        );
        assert_eq!(accuracy(&[], &[], 0.5), Err(MetricsError::Empty));
        assert_eq!(class_prior(&[]), Err(MetricsError::Empty));
        assert_eq!(roc_auc(&[f64::NAN], &[true]), Err(MetricsError::NonFinite(0)));
    }

    #[test]
    fn accuracy_thresholds() {
        let scores = [0.1, 0.4, 0.6, 0.9, 0.3];
        let labels = [true, false, true, true, false];
        assert_eq!(accuracy(&scores, &labels, 0.0).unwrap(), 0.6);
        assert_eq!(accuracy(&scores, &labels, 0.9 + 1e-9).unwrap(), 0.4);
        assert_eq!(accuracy(&scores, &labels, 0.5).unwrap(), 0.8);
    }

    #[test]
    fn class_prior_of_easy_bucket_rate() {
        let mut labels = vec![true; 851];
        labels.extend(vec![false; 149]);
        assert_eq!(class_prior(&labels).unwrap(), 0.851);
        assert_eq!(class_prior(&[true, true]).unwrap(), 1.0);
    }

    #[test]
    fn roc_point_shapes() {
        let labels = [true, true, false, false];
        assert_eq!(
            roc_points(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap(),
            vec![(0.0, 0.0), (0.0, 0.5), (0.0, 1.0), (0.5, 1.0), (1.0, 1.0)]
        );
        assert_eq!(
            roc_points(&[0.3; 4], &labels).unwrap(),
            vec![(0.0, 0.0), (1.0, 1.0)]
        );
        assert_eq!(roc_points(&[0.3], &[true]), Err(MetricsError::SingleClass));
    }

    #[test]
    fn report_without_both_classes_has_no_auc() {
        let r = EvalReport::compute(&[0.2, 0.7], &[true, true], 0.5).unwrap();
        assert_eq!(r.roc_auc, None);
        assert!(r.roc_points.is_empty());
        assert_eq!(r.accuracy, 0.5);
    }
}
