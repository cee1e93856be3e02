use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Classification metrics for one evaluation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub balanced_accuracy: f64,
    pub kappa: f64,
    pub weighted_f1: f64,
    /// Binary tasks with scores only.
    pub auroc: Option<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// `confusion[true][predicted]` counts.
pub fn confusion_matrix(
    predictions: &[usize],
    labels: &[usize],
    n_classes: usize,
) -> Result<Vec<Vec<usize>>> {
    if predictions.len() != labels.len() {
        return Err(invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(invalid("metrics need at least one labelled sample"));
    }
    let mut m = vec![vec![0; n_classes]; n_classes];
    for (&p, &t) in predictions.iter().zip(labels) {
        if p >= n_classes || t >= n_classes {
            return Err(invalid(format!(
                "class index out of range for {n_classes} classes"
            )));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Mean recall over the classes that occur in the labels.
pub fn balanced_accuracy(confusion: &[Vec<usize>]) -> f64 {
    let recalls: Vec<f64> = confusion
        .iter()
        .enumerate()
        .filter_map(|(k, row)| {
            let support: usize = row.iter().sum();
            (support > 0).then(|| row[k] as f64 / support as f64)
        })
        .collect();
    recalls.iter().sum::<f64>() / recalls.len() as f64
}

/// Cohen's kappa `(p_o − p_e)/(1 − p_e)`; 1 when both raters use one
/// identical class throughout, where the ratio is undefined.
pub fn cohen_kappa(confusion: &[Vec<usize>]) -> f64 {
    let n: usize = confusion.iter().flatten().sum();
    let n = n as f64;
    let k = confusion.len();
    let p_o = (0..k).map(|i| confusion[i][i] as f64).sum::<f64>() / n;
    let p_e = (0..k)
        .map(|i| {
            let row: usize = confusion[i].iter().sum();
            let col: usize = confusion.iter().map(|r| r[i]).sum();
            row as f64 * col as f64
        })
        .sum::<f64>()
        / (n * n);
    if 1.0 - p_e == 0.0 {
        return if p_o == 1.0 { 1.0 } else { 0.0 };
    }
    (p_o - p_e) / (1.0 - p_e)
}

/// Support-weighted mean of per-class F1; a class with no true or predicted
/// positives scores 0.
pub fn weighted_f1(confusion: &[Vec<usize>]) -> f64 {
    let n: usize = confusion.iter().flatten().sum();
    let k = confusion.len();
    (0..k)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|r| r[c]).sum();
            let denom = support as f64 + predicted as f64;
            let f1 = if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
            support as f64 * f1
        })
        .sum::<f64>()
        / n as f64
}

/// Area under the ROC curve from the rank-sum statistic, ties at midrank.
/// `labels` are 0/1; `scores` rank class 1 higher.
pub fn auroc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(invalid("AUROC needs binary labels"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(invalid("AUROC scores must be finite"));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(invalid("AUROC needs both classes present"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = mid;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(r, _)| r)
        .sum();
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// Full report; `scores` (probability of class 1) are accepted only for
/// binary tasks.
pub fn metrics(
    predictions: &[usize],
    labels: &[usize],
    n_classes: usize,
    scores: Option<&[f64]>,
) -> Result<MetricReport> {
    let confusion = confusion_matrix(predictions, labels, n_classes)?;
    let auroc = match scores {
        Some(_) if n_classes != 2 => {
            return Err(invalid(format!("AUROC requested for {n_classes} classes")))
        }
        Some(s) => Some(auroc(s, labels)?),
        None => None,
    };
    Ok(MetricReport {
        balanced_accuracy: balanced_accuracy(&confusion),
        kappa: cohen_kappa(&confusion),
        weighted_f1: weighted_f1(&confusion),
        auroc,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 1, 0];
        let r = metrics(&y, &y, 3, None).unwrap();
        assert_eq!(
            (r.balanced_accuracy, r.kappa, r.weighted_f1),
            (1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn binary_confusion_arithmetic() {
        let mut labels = Vec::new();
        let mut preds = Vec::new();
        for (t, p, n) in [(1, 1, 40), (1, 0, 10), (0, 0, 30), (0, 1, 20)] {
            labels.extend(std::iter::repeat_n(t, n));
            preds.extend(std::iter::repeat_n(p, n));
        }
        let r = metrics(&preds, &labels, 2, None).unwrap();
        assert_abs_diff_eq!(r.balanced_accuracy, 0.7, epsilon = 1e-15);
        assert_eq!(r.confusion, vec![vec![30, 20], vec![10, 40]]);
    }

    #[test]
    fn majority_predictor_is_chance() {
        let labels: Vec<usize> = (0..100).map(|k| usize::from(k >= 90)).collect();
        let r = metrics(&[0; 100], &labels, 2, None).unwrap();
        assert_eq!(r.balanced_accuracy, 0.5);
        assert_eq!(r.kappa, 0.0);
    }

    #[test]
    fn auroc_rejects_multiclass() {
        assert!(metrics(&[0, 1, 2], &[0, 1, 2], 3, Some(&[0.1, 0.2, 0.3])).is_err());
    }

    #[test]
    fn auroc_midranks_ties() {
        assert_eq!(auroc(&[0.5, 0.5], &[0, 1]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.9, 0.4], &[0, 1, 0]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.1, 0.5, 0.5, 0.9], &[0, 0, 1, 1]).unwrap(), 0.875);
    }

    proptest! {
        #[test]
        fn auroc_is_invariant_under_monotone_maps(
            scores in prop::collection::vec(-3.0f64..3.0, 4..40),
            seed in any::<u64>(),
        ) {
            let labels: Vec<usize> = (0..scores.len()).map(|k| ((seed >> (k % 64)) & 1) as usize).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let a = auroc(&scores, &labels).unwrap();
            let mapped: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 1.0).collect();
            let b = auroc(&mapped, &labels).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
