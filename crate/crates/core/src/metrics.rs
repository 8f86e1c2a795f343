//! Classification metrics: accuracy, macro F1, macro one-vs-rest AUC and the
//! confusion matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model;
use crate::numeric::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_auc: f64,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
    pub per_class_f1: Vec<f64>,
}

/// Counts of (true, predicted) class pairs.
pub fn confusion_matrix(preds: &[usize], labels: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    if preds.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut m = vec![vec![0usize; k]; k];
    for (&p, &y) in preds.iter().zip(labels) {
        if p >= k || y >= k {
            return Err(Error::LabelOutOfRange {
                label: p.max(y),
                classes: k,
            });
        }
        m[y][p] += 1;
    }
    Ok(m)
}

/// F1 of each class; 0 where precision and recall are both undefined or zero.
pub fn per_class_f1(confusion: &[Vec<usize>]) -> Vec<f64> {
    let k = confusion.len();
    (0..k)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let actual: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let denom = actual as f64 + predicted as f64;
            // 2PR/(P+R) simplifies to 2TP/(actual + predicted).
            if denom == 0.0 {
                0.0
            } else {
                2.0 * tp / denom
            }
        })
        .collect()
}

/// Unweighted mean of per-class F1 over all `K` classes.
pub fn macro_f1(confusion: &[Vec<usize>]) -> f64 {
    let f1 = per_class_f1(confusion);
    if f1.is_empty() {
        return 0.0;
    }
    f1.iter().sum::<f64>() / f1.len() as f64
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyBatch("accuracy"));
    }
    if preds.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Binary AUC of `scores` for `positive[i]` via the Mann–Whitney rank sum,
/// with tied scores given their average rank. `None` if either side is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let avg_rank = (i + j + 2) as f64 / 2.0;
        let pos_in_group = order[i..=j].iter().filter(|&&t| positive[t]).count();
        rank_sum_pos += avg_rank * pos_in_group as f64;
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Some((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Macro one-vs-rest AUC over the classes present in `labels`.
pub fn macro_auc_ovr<T: Scalar>(scores: &Matrix<T>, labels: &[usize]) -> Result<f64> {
    if scores.rows() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} score rows for {} labels",
            scores.rows(),
            labels.len()
        )));
    }
    let k = scores.cols();
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: k,
        });
    }
    let mut present = vec![false; k];
    labels.iter().for_each(|&y| present[y] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::InvalidArgument(
            "AUC needs at least two distinct labels".into(),
        ));
    }
    let mut total = 0.0;
    let mut used = 0usize;
    for c in (0..k).filter(|&c| present[c]) {
        let column: Vec<f64> = (0..scores.rows()).map(|r| scores[(r, c)].as_f64()).collect();
        let positive: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        if let Some(auc) = binary_auc(&column, &positive) {
            total += auc;
            used += 1;
        }
    }
    Ok(total / used as f64)
}

/// Full report for class probabilities `probs` against `labels`.
pub fn evaluate<T: Scalar>(probs: &Matrix<T>, labels: &[usize]) -> Result<MetricsReport> {
    let k = probs.cols();
    let preds = model::predict_classes(probs);
    let confusion = confusion_matrix(&preds, labels, k)?;
    Ok(MetricsReport {
        accuracy: accuracy(&preds, labels)?,
        macro_f1: macro_f1(&confusion),
        per_class_f1: per_class_f1(&confusion),
        macro_auc: macro_auc_ovr(probs, labels)?,
        confusion,
    })
}
