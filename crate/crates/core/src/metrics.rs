//! Classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(predictions: &[usize], labels: &[usize]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} predictions but {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Input("no predictions to score".into()));
    }
    Ok(())
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    check(predictions, labels)?;
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Micro-averaged F1 from global true-positive, false-positive and
/// false-negative counts.
pub fn micro_f1(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    check(predictions, labels)?;
    let classes = predictions.iter().chain(labels).max().unwrap() + 1;
    let (tp, fp, fn_) = ConfusionMatrix::from_predictions(classes, predictions, labels)?.global_counts();
    let denom = 2 * tp + fp + fn_;
    Ok(if denom == 0 { 0.0 } else { (2 * tp) as f64 / denom as f64 })
}

/// `counts[label][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

impl ConfusionMatrix {
    pub fn from_predictions(classes: usize, predictions: &[usize], labels: &[usize]) -> Result<Self> {
        check(predictions, labels)?;
        let mut counts = vec![vec![0u64; classes]; classes];
        for (&p, &l) in predictions.iter().zip(labels) {
            if p >= classes || l >= classes {
                return Err(Error::Label {
                    label: p.max(l),
                    classes,
                });
            }
            counts[l][p] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Summed (TP, FP, FN) over all classes.
    pub fn global_counts(&self) -> (u64, u64, u64) {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for c in 0..self.classes() {
            let (t, p, n) = self.class_counts(c);
            tp += t;
            fp += p;
            fn_ += n;
        }
        (tp, fp, fn_)
    }

    fn class_counts(&self, c: usize) -> (u64, u64, u64) {
        let tp = self.counts[c][c];
        let predicted: u64 = self.counts.iter().map(|row| row[c]).sum();
        let actual: u64 = self.counts[c].iter().sum();
        (tp, predicted - tp, actual - tp)
    }

    pub fn class_scores(&self) -> Vec<ClassScores> {
        (0..self.classes())
            .map(|c| {
                let (tp, fp, fn_) = self.class_counts(c);
                let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
                let precision = ratio(tp, tp + fp);
                let recall = ratio(tp, tp + fn_);
                let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
                ClassScores {
                    precision,
                    recall,
                    f1,
                    support: tp + fn_,
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        assert_eq!(micro_f1(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        let f = micro_f1(&[0, 1, 1], &[0, 1, 0]).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(micro_f1(&[1, 0, 0], &[0, 1, 2]).unwrap(), 0.0);
    }

    #[test]
    fn input_errors() {
        assert!(matches!(micro_f1(&[], &[]), Err(Error::Input(_))));
        assert!(matches!(micro_f1(&[0, 1], &[0]), Err(Error::Input(_))));
    }

    #[test]
    fn per_class_scores() {
        let cm = ConfusionMatrix::from_predictions(2, &[0, 1, 1], &[0, 1, 0]).unwrap();
        let s = cm.class_scores();
        assert_eq!(s[0].precision, 1.0);
        assert_eq!(s[0].recall, 0.5);
        assert_eq!(s[1].precision, 0.5);
        assert_eq!(s[1].support, 1);
        assert_eq!(cm.total(), 3);
    }
}
