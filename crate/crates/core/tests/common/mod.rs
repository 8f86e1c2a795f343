//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rca_core::model::{self, ArchSpec, Mlp, ModelParams};
use rca_core::numeric::Matrix;
use rca_core::objectives::{domain_adversarial_loss, mmd_loss, weighted_source_loss};
use rca_core::training::LabeledRows;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a floor on the denominator, so entries whose true
/// gradient is ~0 are judged by absolute error instead.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// Central difference of `f` along every coordinate of `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn flatten(mlp: &Mlp<f64>) -> Vec<f64> {
    mlp.layers
        .iter()
        .flat_map(|l| l.weight.as_slice().iter().chain(&l.bias).copied())
        .collect()
}

pub fn unflatten(template: &Mlp<f64>, flat: &[f64]) -> Mlp<f64> {
    let mut out = template.clone();
    let mut at = 0;
    for l in &mut out.layers {
        let w = l.weight.as_mut_slice();
        w.copy_from_slice(&flat[at..at + w.len()]);
        at += w.len();
        let nb = l.bias.len();
        l.bias.copy_from_slice(&flat[at..at + nb]);
        at += nb;
    }
    assert_eq!(at, flat.len());
    out
}

pub fn flatten_grads(grads: &[model::LayerGrad<f64>]) -> Vec<f64> {
    grads
        .iter()
        .flat_map(|g| g.weight.as_slice().iter().chain(&g.bias).copied())
        .collect()
}

/// The loss terms of a combined batch, recomputed from the public forward
/// functions.
pub fn batch_losses(
    params: &ModelParams<f64>,
    x: &Matrix<f64>,
    n_source: usize,
    labeled: &LabeledRows<f64>,
) -> (f64, f64, f64) {
    let feats = model::extract_features(x, params).unwrap();
    let probs = model::classify(&feats, params).unwrap();
    let l_s = weighted_source_loss(&probs.select_rows(&labeled.rows), &labeled.classes, &labeled.weights)
        .unwrap()
        .0;
    let (f_s, f_t) = feats.split_rows(n_source);
    let l_mmd = mmd_loss(&f_s, &f_t).unwrap().value;
    let d = model::discriminate(&feats, params).unwrap();
    let l_adv = domain_adversarial_loss(&d[..n_source], &d[n_source..]).unwrap().value;
    (l_s, l_mmd, l_adv)
}

pub fn small_arch(input_dim: usize, hidden: usize, k: usize) -> ArchSpec {
    ArchSpec {
        input_dim,
        extractor_hidden: vec![hidden],
        feature_dim: hidden,
        num_classes: k,
        discriminator_hidden: vec![hidden],
        ..ArchSpec::default()
    }
}

/// `‖mean(a) − mean(b)‖²` with explicit loops.
pub fn naive_mmd(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    let mut total = 0.0;
    for c in 0..a.cols() {
        let mut sa = 0.0;
        for r in 0..a.rows() {
            sa += a[(r, c)];
        }
        let mut sb = 0.0;
        for r in 0..b.rows() {
            sb += b[(r, c)];
        }
        let d = sa / a.rows() as f64 - sb / b.rows() as f64;
        total += d * d;
    }
    total
}

/// Direct sum of the binary domain cross-entropy with clamped probabilities.
pub fn naive_domain_loss(d_s: &[f64], d_t: &[f64]) -> f64 {
    let clamp = |p: f64| p.clamp(1e-7, 1.0 - 1e-7);
    let mut s = 0.0;
    for &p in d_s {
        s -= clamp(p).ln();
    }
    let mut t = 0.0;
    for &p in d_t {
        t -= (1.0 - clamp(p)).ln();
    }
    s / d_s.len() as f64 + t / d_t.len() as f64
}

/// AUC by counting every (positive, negative) pair; ties count one half.
pub fn pair_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut num = 0.0;
    let mut pairs = 0usize;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if positive[i] && !positive[j] {
                pairs += 1;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    (pairs > 0).then(|| num / pairs as f64)
}

/// Macro one-vs-rest AUC by pair counting over the classes present.
pub fn pair_macro_auc(scores: &Matrix<f64>, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    let mut used = 0;
    for c in 0..scores.cols() {
        let col: Vec<f64> = (0..scores.rows()).map(|r| scores[(r, c)]).collect();
        let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        if let Some(a) = pair_auc(&col, &pos) {
            total += a;
            used += 1;
        }
    }
    total / used as f64
}
