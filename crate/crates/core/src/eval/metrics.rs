use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn same_len(a: usize, b: usize, context: &'static str) -> Result<()> {
    if a != b {
        return Err(Error::Dimension {
            context,
            expected: a,
            found: b,
        });
    }
    Ok(())
}

/// Fraction of exact matches. Empty input scores 0.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    same_len(predictions.len(), labels.len(), "accuracy")?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Counts indexed `[true][predicted]` with row-normalized rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
    /// Each non-empty row sums to one; empty rows are all zero.
    pub rates: Vec<Vec<f64>>,
}

pub fn confusion(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    same_len(predictions.len(), labels.len(), "confusion")?;
    let mut counts = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= num_classes || l >= num_classes {
            return Err(Error::InvalidInput(format!(
                "class id outside 0..{num_classes} in confusion input"
            )));
        }
        counts[l][p] += 1;
    }
    let rates = counts
        .iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            row.iter()
                .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                .collect()
        })
        .collect();
    Ok(ConfusionMatrix { counts, rates })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitScore {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub per_unit: Vec<UnitScore>,
    pub mean_f1: f64,
}

/// Per-unit precision, recall and F1 over window units, plus their mean F1.
pub fn f1_segment(predictions: &[Vec<bool>], labels: &[Vec<bool>]) -> Result<F1Report> {
    same_len(labels.len(), predictions.len(), "f1-segment windows")?;
    let units = labels.first().map_or(0, Vec::len);
    for (p, l) in predictions.iter().zip(labels) {
        if p.len() != units || l.len() != units {
            return Err(Error::InvalidInput("misaligned unit bitsets in f1-segment".into()));
        }
    }
    let per_unit: Vec<UnitScore> = (0..units)
        .map(|u| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (p, l) in predictions.iter().zip(labels) {
                match (p[u], l[u]) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
            let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            UnitScore {
                true_positives: tp,
                false_positives: fp,
                false_negatives: fn_,
                precision,
                recall,
                f1,
            }
        })
        .collect();
    let mean_f1 = if units == 0 {
        0.0
    } else {
        per_unit.iter().map(|s| s.f1).sum::<f64>() / units as f64
    };
    Ok(F1Report { per_unit, mean_f1 })
}

/// A video counts as correct when strictly more than half its frames are.
pub fn video_majority_rule(frame_predictions: &[usize], label: usize) -> bool {
    let hits = frame_predictions.iter().filter(|&&p| p == label).count();
    2 * hits > frame_predictions.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let l = [0, 1, 2, 1];
        assert_eq!(accuracy(&l, &l).unwrap(), 1.0);
        let c = confusion(&l, &l, 3).unwrap();
        for (i, row) in c.rates.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn constant_predictor_on_balanced_labels() {
        assert_eq!(accuracy(&[0, 0, 0, 0], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn hand_built_three_class_confusion() {
        let labels = [0, 0, 0, 1, 1, 2, 2, 2, 2];
        let preds = [0, 1, 0, 1, 1, 2, 0, 2, 1];
        let c = confusion(&preds, &labels, 3).unwrap();
        assert_eq!(c.counts, vec![vec![2, 1, 0], vec![0, 2, 0], vec![1, 1, 2]]);
        assert_eq!(c.rates[2], vec![0.25, 0.25, 0.5]);
        assert!((c.rates[0][0] - 2.0 / 3.0).abs() < 1e-15);
        for row in &c.rates {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!((accuracy(&preds, &labels).unwrap() - 6.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn f1_is_harmonic_mean() {
        // one unit: tp 1, fp 1, fn 1 -> P = R = 0.5
        let preds = vec![vec![true], vec![true], vec![false], vec![false]];
        let labels = vec![vec![true], vec![false], vec![true], vec![false]];
        let r = f1_segment(&preds, &labels).unwrap();
        assert_eq!(r.per_unit[0].precision, 0.5);
        assert_eq!(r.per_unit[0].recall, 0.5);
        assert_eq!(r.mean_f1, 0.5);
    }

    #[test]
    fn f1_perfect_and_degenerate() {
        let l = vec![vec![true, false], vec![false, true]];
        let r = f1_segment(&l, &l).unwrap();
        assert!(r.per_unit.iter().all(|s| s.f1 == 1.0));
        let none = vec![vec![false, false]; 2];
        assert_eq!(f1_segment(&none, &l).unwrap().mean_f1, 0.0);
        assert!(f1_segment(&l[..1], &l).is_err());
    }

    #[test]
    fn hand_built_two_unit_four_windows() {
        let preds = vec![vec![true, true], vec![true, false], vec![false, true], vec![true, false]];
        let labels = vec![vec![true, false], vec![false, false], vec![true, true], vec![true, true]];
        // unit 0: tp 2, fp 1, fn 1 -> P 2/3 R 2/3 F1 2/3
        // unit 1: tp 1, fp 1, fn 1 -> P 1/2 R 1/2 F1 1/2
        let r = f1_segment(&preds, &labels).unwrap();
        assert!((r.per_unit[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.per_unit[1].f1 - 0.5).abs() < 1e-15);
        assert!((r.mean_f1 - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn majority_rule_is_strict() {
        let frames = |hits: usize, n: usize| (0..n).map(|i| usize::from(i >= hits)).collect::<Vec<_>>();
        assert!(video_majority_rule(&frames(51, 100), 0));
        assert!(!video_majority_rule(&frames(50, 100), 0));
        assert!(video_majority_rule(&[3], 3));
        assert!(!video_majority_rule(&[], 3));
    }

    #[test]
    fn metrics_ignore_example_order() {
        let labels = [0, 1, 2, 2, 1, 0, 1];
        let preds = [0, 2, 2, 1, 1, 0, 0];
        let mut pairs: Vec<_> = labels.iter().copied().zip(preds).collect();
        pairs.reverse();
        pairs.swap(1, 4);
        let (l2, p2): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        assert_eq!(accuracy(&preds, &labels).unwrap(), accuracy(&p2, &l2).unwrap());
        assert_eq!(confusion(&preds, &labels, 3).unwrap(), confusion(&p2, &l2, 3).unwrap());
    }
}
