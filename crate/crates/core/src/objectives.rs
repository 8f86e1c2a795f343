//! Training objectives: source cross-entropy, linear-kernel MMD between
//! feature means, the binary domain loss driven through gradient reversal,
//! and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::scalar::{clamp_prob, Scalar};

/// The individual loss terms of one step (or an average over steps).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_source: f64,
    pub l_mmd: f64,
    pub l_adv: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn compose(l_source: f64, l_mmd: f64, l_adv: f64, lambda_mmd: f64, lambda_adv: f64) -> Result<Self> {
        Ok(Self {
            l_source,
            l_mmd,
            l_adv,
            l_total: total_loss(l_source, l_mmd, l_adv, lambda_mmd, lambda_adv)?,
        })
    }
}

/// Mean cross-entropy of the true-class probabilities.
///
/// Returns the loss and its gradient with respect to the classifier logits
/// (`(p − onehot) / n`).
pub fn source_loss<T: Scalar>(probs: &Matrix<T>, labels: &[usize]) -> Result<(T, Matrix<T>)> {
    let weights = vec![T::one(); labels.len()];
    weighted_source_loss(probs, labels, &weights)
}

/// Weighted mean cross-entropy, `Σ wᵢ·ceᵢ / Σ wᵢ`.
pub fn weighted_source_loss<T: Scalar>(
    probs: &Matrix<T>,
    labels: &[usize],
    weights: &[T],
) -> Result<(T, Matrix<T>)> {
    if labels.is_empty() {
        return Err(Error::EmptyBatch("source_loss"));
    }
    if probs.rows() != labels.len() || weights.len() != labels.len() {
        return Err(Error::Shape {
            op: "source_loss",
            left: probs.shape(),
            right: (labels.len(), weights.len()),
        });
    }
    let k = probs.cols();
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: k,
        });
    }
    let total_w: T = weights.iter().copied().sum();
    if !(total_w > T::zero()) {
        return Err(Error::InvalidArgument("source loss weights sum to zero".into()));
    }

    let mut loss = T::zero();
    let mut grad = probs.clone();
    for (i, (&y, &w)) in labels.iter().zip(weights).enumerate() {
        loss += -w * clamp_prob(probs[(i, y)]).ln();
        let row = grad.row_mut(i);
        row[y] -= T::one();
        for g in row.iter_mut() {
            *g = *g * w / total_w;
        }
    }
    Ok((loss / total_w, grad))
}

/// Result of [`mmd_loss`]: value and gradients with respect to each batch.
#[derive(Debug, Clone)]
pub struct MmdTerm<T> {
    pub value: T,
    pub grad_source: Matrix<T>,
    pub grad_target: Matrix<T>,
}

/// Squared distance between the source and target feature means.
pub fn mmd_loss<T: Scalar>(f_s: &Matrix<T>, f_t: &Matrix<T>) -> Result<MmdTerm<T>> {
    if f_s.cols() != f_t.cols() {
        return Err(Error::Shape {
            op: "mmd_loss",
            left: f_s.shape(),
            right: f_t.shape(),
        });
    }
    let mu_s = f_s.col_means().ok_or(Error::EmptyBatch("mmd_loss source"))?;
    let mu_t = f_t.col_means().ok_or(Error::EmptyBatch("mmd_loss target"))?;
    let diff: Vec<T> = mu_s.iter().zip(&mu_t).map(|(&a, &b)| a - b).collect();
    let value = diff.iter().map(|&d| d * d).sum();

    let two = T::lit(2.0);
    let gs: Vec<T> = diff.iter().map(|&d| two * d / T::lit(f_s.rows() as f64)).collect();
    let gt: Vec<T> = diff.iter().map(|&d| -(two * d) / T::lit(f_t.rows() as f64)).collect();
    let broadcast = |n: usize, row: &[T]| {
        let mut m = Matrix::zeros(n, row.len());
        for r in 0..n {
            m.row_mut(r).copy_from_slice(row);
        }
        m
    };
    Ok(MmdTerm {
        value,
        grad_source: broadcast(f_s.rows(), &gs),
        grad_target: broadcast(f_t.rows(), &gt),
    })
}

/// Result of [`domain_adversarial_loss`]: value and gradients with respect
/// to the discriminator's output probabilities.
#[derive(Debug, Clone)]
pub struct DomainTerm<T> {
    pub value: T,
    pub grad_source: Vec<T>,
    pub grad_target: Vec<T>,
}

/// Binary cross-entropy of the domain discriminator, with source labelled 1:
/// `−mean log D(source) − mean log(1 − D(target))`.
///
/// The discriminator minimizes this; the extractor sees its gradient through
/// gradient reversal and so maximizes it.
pub fn domain_adversarial_loss<T: Scalar>(d_s: &[T], d_t: &[T]) -> Result<DomainTerm<T>> {
    if d_s.is_empty() {
        return Err(Error::EmptyBatch("domain loss source"));
    }
    if d_t.is_empty() {
        return Err(Error::EmptyBatch("domain loss target"));
    }
    let ns = T::lit(d_s.len() as f64);
    let nt = T::lit(d_t.len() as f64);

    let mut sum_s = T::zero();
    let grad_source = d_s
        .iter()
        .map(|&p| {
            let p = clamp_prob(p);
            sum_s += p.ln();
            -T::one() / (ns * p)
        })
        .collect();
    let mut sum_t = T::zero();
    let grad_target = d_t
        .iter()
        .map(|&p| {
            let q = T::one() - clamp_prob(p);
            sum_t += q.ln();
            T::one() / (nt * q)
        })
        .collect();

    Ok(DomainTerm {
        value: -(sum_s / ns) - sum_t / nt,
        grad_source,
        grad_target,
    })
}

/// `l_s + λ₁·l_mmd + λ₂·l_adv`.
pub fn total_loss<T: Scalar>(l_s: T, l_mmd: T, l_adv: T, lambda_mmd: T, lambda_adv: T) -> Result<T> {
    if !(lambda_mmd >= T::zero()) || !(lambda_adv >= T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "loss weights must be nonnegative, got {lambda_mmd} and {lambda_adv}"
        )));
    }
    Ok(l_s + lambda_mmd * l_mmd + lambda_adv * l_adv)
}
