//! Joint training of extractor, classifier and discriminator with SGD and
//! momentum, plus the confidence-thresholded pseudo-label cycle.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{self, init_params, ArchSpec, ModelGrads, ModelParams};
use crate::numeric::{GradReverse, Matrix};
use crate::objectives::{
    domain_adversarial_loss, mmd_loss, weighted_source_loss, LossBreakdown,
};
use crate::scalar::{clamp_prob, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the MMD term.
    pub lambda_mmd: f64,
    /// Weight of the adversarial domain term.
    pub lambda_adv: f64,
    /// Minimum classifier confidence for a pseudo-label.
    pub confidence_threshold: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Steepness of the gradient-reversal warmup schedule.
    pub grl_gamma: f64,
    pub pseudo_labels: bool,
    pub pseudo_label_warmup_epochs: usize,
    /// Per-class limit on pseudo-labels per refresh; 0 means unlimited.
    pub pseudo_label_class_cap: usize,
    /// Loss weight of a pseudo-labeled sample relative to a real label.
    pub pseudo_label_weight: f64,
    /// Whether visible target labels join the classification term.
    pub use_target_labels: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_mmd: 1.0,
            lambda_adv: 1.0,
            confidence_threshold: 0.95,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 64,
            epochs: 50,
            grl_gamma: 10.0,
            pseudo_labels: true,
            pseudo_label_warmup_epochs: 5,
            pseudo_label_class_cap: 64,
            pseudo_label_weight: 1.0,
            use_target_labels: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.lambda_mmd >= 0.0) || !(self.lambda_adv >= 0.0) {
            return bad(format!(
                "loss weights must be nonnegative (lambda_mmd = {}, lambda_adv = {})",
                self.lambda_mmd, self.lambda_adv
            ));
        }
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold <= 1.0) {
            return bad(format!(
                "confidence_threshold must be in (0, 1], got {}",
                self.confidence_threshold
            ));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if !(self.grl_gamma > 0.0) {
            return bad(format!("grl_gamma must be positive, got {}", self.grl_gamma));
        }
        if !(self.pseudo_label_weight >= 0.0) {
            return bad(format!(
                "pseudo_label_weight must be nonnegative, got {}",
                self.pseudo_label_weight
            ));
        }
        Ok(())
    }

    fn class_cap(&self) -> usize {
        if self.pseudo_label_class_cap == 0 {
            usize::MAX
        } else {
            self.pseudo_label_class_cap
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub target_index: usize,
    pub predicted_class: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub source_accuracy: f64,
    pub target_accuracy: Option<f64>,
    pub pseudo_label_count: usize,
    pub grl_coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub lambda_mmd: f64,
    pub lambda_adv: f64,
    pub epochs: Vec<EpochRecord>,
    /// Per-step losses, in order.
    pub steps: Vec<LossBreakdown>,
}

/// Warmup schedule `2 / (1 + exp(−γ·p)) − 1` for the reversal coefficient.
pub fn grl_coefficient(progress: f64, gamma: f64) -> f64 {
    let p = progress.clamp(0.0, 1.0);
    2.0 / (1.0 + (-gamma * p).exp()) - 1.0
}

/// One SGD-with-momentum update over a flat parameter block:
/// `v ← m·v − lr·g; θ ← θ + v`.
pub fn sgd_momentum_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    velocity: &mut [T],
    lr: T,
    momentum: T,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Shape {
            op: "sgd_momentum_step",
            left: (params.len(), 1),
            right: (grads.len(), velocity.len()),
        });
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
    Ok(())
}

/// Momentum optimizer over all three parameter groups.
#[derive(Debug, Clone)]
pub struct SgdMomentum<T> {
    lr: T,
    momentum: T,
    velocity: ModelGrads<T>,
}

impl<T: Scalar> SgdMomentum<T> {
    pub fn new(params: &ModelParams<T>, lr: T, momentum: T) -> Self {
        Self {
            lr,
            momentum,
            velocity: params.zero_grads(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelGrads<T>) -> Result<()> {
        // Walk params/grads and velocity in the same fixed order.
        let mut velocity_slices: Vec<&mut [T]> = Vec::new();
        for group in [
            &mut self.velocity.extractor,
            &mut self.velocity.classifier,
            &mut self.velocity.discriminator,
        ] {
            for g in group.iter_mut() {
                velocity_slices.push(g.weight.as_mut_slice());
                velocity_slices.push(&mut g.bias);
            }
        }
        let mut it = velocity_slices.into_iter();
        let (lr, m) = (self.lr, self.momentum);
        let mut result = Ok(());
        grads.zip_params_mut(params, |p, g| {
            if result.is_err() {
                return;
            }
            result = match it.next() {
                Some(v) => sgd_momentum_step(p, g, v, lr, m),
                None => Err(Error::InvalidArgument("velocity layout mismatch".into())),
            };
        })?;
        result
    }
}

/// Selects confident predictions on the unlabeled samples of `target`.
///
/// A sample qualifies when its top class probability (clamped below 1) is at
/// least `threshold`. Each predicted class keeps at most `class_cap` samples,
/// most confident first with ties to the lower index. The result is sorted by
/// sample index.
pub fn select_pseudo_labels<T: Scalar>(
    params: &ModelParams<T>,
    target: &Dataset,
    threshold: f64,
    class_cap: usize,
) -> Result<Vec<PseudoLabel>> {
    let unlabeled: Vec<usize> = (0..target.len())
        .filter(|&i| target.samples[i].label.is_none())
        .collect();
    if unlabeled.is_empty() {
        return Ok(Vec::new());
    }
    let x = target.subset(&unlabeled).feature_matrix::<T>();
    let probs = model::predict_proba(&x, params)?;
    let k = probs.cols();

    let mut per_class: Vec<Vec<PseudoLabel>> = vec![Vec::new(); k];
    for (row, &idx) in unlabeled.iter().enumerate() {
        let p = probs.row(row);
        let c = model::argmax(p);
        let conf = clamp_prob(p[c]).as_f64();
        if conf >= threshold {
            per_class[c].push(PseudoLabel {
                target_index: idx,
                predicted_class: c,
                confidence: conf,
            });
        }
    }
    let mut out: Vec<PseudoLabel> = per_class
        .into_iter()
        .flat_map(|mut v| {
            v.sort_by(|a, b| {
                b.confidence
                    .total_cmp(&a.confidence)
                    .then(a.target_index.cmp(&b.target_index))
            });
            v.truncate(class_cap);
            v
        })
        .collect();
    out.sort_by_key(|p| p.target_index);
    Ok(out)
}

/// Batch order shared by every training path: a fresh source permutation per
/// epoch, and a cycling target permutation reshuffled whenever exhausted.
#[derive(Debug)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    n_source: usize,
    n_target: usize,
    batch_size: usize,
    target_order: Vec<usize>,
    target_pos: usize,
}

impl BatchSampler {
    pub fn new(seed: u64, n_source: usize, n_target: usize, batch_size: usize) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x0062_6174_6368),
            n_source,
            n_target,
            batch_size,
            target_order: Vec::new(),
            target_pos: 0,
        }
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.n_source.div_ceil(self.batch_size)
    }

    /// Source batches of one epoch.
    pub fn source_epoch(&mut self) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.n_source).collect();
        order.shuffle(&mut self.rng);
        order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }

    pub fn target_batch(&mut self) -> Vec<usize> {
        let want = self.batch_size.min(self.n_target);
        let mut out = Vec::with_capacity(want);
        while out.len() < want {
            if self.target_pos >= self.target_order.len() {
                self.target_order = (0..self.n_target).collect();
                self.target_order.shuffle(&mut self.rng);
                self.target_pos = 0;
            }
            out.push(self.target_order[self.target_pos]);
            self.target_pos += 1;
        }
        out
    }
}

/// Rows of a combined (source ++ target) batch that carry a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRows<T> {
    pub rows: Vec<usize>,
    pub classes: Vec<usize>,
    pub weights: Vec<T>,
}

fn labeled_rows<T: Scalar>(
    source: &Dataset,
    target: &Dataset,
    src_idx: &[usize],
    tgt_idx: &[usize],
    pseudo: &[Option<usize>],
    config: &TrainConfig,
) -> LabeledRows<T> {
    let mut out = LabeledRows {
        rows: Vec::new(),
        classes: Vec::new(),
        weights: Vec::new(),
    };
    for (row, &i) in src_idx.iter().enumerate() {
        if let Some(c) = source.samples[i].label {
            out.rows.push(row);
            out.classes.push(c);
            out.weights.push(T::one());
        }
    }
    let offset = src_idx.len();
    for (row, &j) in tgt_idx.iter().enumerate() {
        let visible = target.samples[j].label.filter(|_| config.use_target_labels);
        if let Some(c) = visible {
            out.rows.push(offset + row);
            out.classes.push(c);
            out.weights.push(T::one());
        } else if let Some(c) = pseudo.get(j).copied().flatten() {
            out.rows.push(offset + row);
            out.classes.push(c);
            out.weights.push(T::lit(config.pseudo_label_weight));
        }
    }
    out
}

/// Classification term on the labeled rows of a batch. Returns the loss and
/// the gradient w.r.t. all classifier logits (zero rows where unlabeled).
fn classification_term<T: Scalar>(
    logits: &Matrix<T>,
    labeled: &LabeledRows<T>,
) -> Result<(T, Matrix<T>)> {
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    if labeled.rows.is_empty() || labeled.weights.iter().all(|w| *w == T::zero()) {
        return Ok((T::zero(), grad));
    }
    let probs = crate::numeric::softmax_rows(&logits.select_rows(&labeled.rows))?;
    let (loss, g) = weighted_source_loss(&probs, &labeled.classes, &labeled.weights)?;
    for (k, &r) in labeled.rows.iter().enumerate() {
        grad.row_mut(r).copy_from_slice(g.row(k));
    }
    Ok((loss, grad))
}

fn check_inputs(source: &Dataset, target: &Dataset, arch: &ArchSpec) -> Result<()> {
    arch.validate()?;
    if source.is_empty() {
        return Err(Error::EmptyBatch("source dataset"));
    }
    if target.is_empty() {
        return Err(Error::EmptyBatch("target dataset"));
    }
    if source.feature_dim() != arch.input_dim || target.feature_dim() != arch.input_dim {
        return Err(Error::InvalidArgument(format!(
            "feature dimension mismatch: source {}, target {}, architecture {}",
            source.feature_dim(),
            target.feature_dim(),
            arch.input_dim
        )));
    }
    if source.num_classes > arch.num_classes || target.num_classes > arch.num_classes {
        return Err(Error::InvalidArgument(format!(
            "datasets have {} / {} classes, architecture has {}",
            source.num_classes, target.num_classes, arch.num_classes
        )));
    }
    if source.labeled_count() == 0 {
        return Err(Error::InvalidArgument("source domain has no labeled samples".into()));
    }
    Ok(())
}

fn finite(term: &'static str, value: f64, epoch: usize, step: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteLoss {
            term,
            epoch,
            step,
            value,
        })
    }
}

/// Accuracy of `params` on the samples of `ds` with a visible label.
fn visible_accuracy<T: Scalar>(params: &ModelParams<T>, ds: &Dataset) -> Result<Option<f64>> {
    let idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.samples[i].label.is_some()).collect();
    if idx.is_empty() {
        return Ok(None);
    }
    let sub = ds.subset(&idx);
    let probs = model::predict_proba(&sub.feature_matrix::<T>(), params)?;
    let preds = model::predict_classes(&probs);
    let labels: Vec<usize> = sub.samples.iter().filter_map(|s| s.label).collect();
    metrics::accuracy(&preds, &labels).map(Some)
}

/// Loss terms and parameter gradients of one combined batch.
#[derive(Debug, Clone)]
pub struct BatchGradients<T> {
    pub l_source: T,
    pub l_mmd: T,
    pub l_adv: T,
    pub grads: ModelGrads<T>,
}

/// Gradients of `l_s + λ₁·l_mmd` for the extractor and classifier, of `l_adv`
/// for the discriminator, and of `−reversal·l_adv` for the extractor.
///
/// `x` holds `n_source` source rows followed by target rows. The MMD and
/// reversal paths are skipped entirely when their weight is zero.
pub fn batch_gradients<T: Scalar>(
    params: &ModelParams<T>,
    x: &Matrix<T>,
    n_source: usize,
    labeled: &LabeledRows<T>,
    lambda_mmd: T,
    reversal: T,
) -> Result<BatchGradients<T>> {
    let f_trace = params.extractor.forward_trace(x)?;
    let feats = f_trace.output();

    let c_trace = params.classifier.forward_trace(feats)?;
    let (l_source, g_logits) = classification_term(c_trace.output(), labeled)?;
    let (g_cls, mut g_feats) = params.classifier.backward(&c_trace, &g_logits)?;

    let (f_s, f_t) = feats.split_rows(n_source);
    let mmd = mmd_loss(&f_s, &f_t)?;
    if lambda_mmd > T::zero() {
        let g_mmd = mmd.grad_source.vstack(&mmd.grad_target)?;
        g_feats.add_scaled(&g_mmd, lambda_mmd)?;
    }

    // The discriminator descends on the domain loss; the extractor receives
    // its gradient reversed and scaled.
    let reverse = GradReverse::new(reversal)?;
    let d_trace = params.discriminator.forward_trace(&reverse.forward(feats))?;
    let d_out = d_trace.output().as_slice();
    let dom = domain_adversarial_loss(&d_out[..n_source], &d_out[n_source..])?;
    let g_dout = Matrix::from_vec(
        x.rows(),
        1,
        dom.grad_source.iter().chain(&dom.grad_target).copied().collect(),
    )?;
    let (g_disc, g_feats_d) = params.discriminator.backward(&d_trace, &g_dout)?;
    if reverse.coef() > T::zero() {
        g_feats.add_scaled(&reverse.backward(&g_feats_d), T::one())?;
    }

    let (g_ext, _) = params.extractor.backward(&f_trace, &g_feats)?;
    Ok(BatchGradients {
        l_source,
        l_mmd: mmd.value,
        l_adv: dom.value,
        grads: ModelGrads {
            extractor: g_ext,
            classifier: g_cls,
            discriminator: g_disc,
        },
    })
}

/// Full method: source classification (plus visible and pseudo target labels),
/// MMD alignment, and the reversed-gradient domain game.
pub fn train<T: Scalar>(
    source: &Dataset,
    target: &Dataset,
    arch: &ArchSpec,
    config: &TrainConfig,
) -> Result<(ModelParams<T>, TrainHistory)> {
    config.validate()?;
    check_inputs(source, target, arch)?;

    let mut params: ModelParams<T> = init_params(arch, config.seed)?;
    let mut opt = SgdMomentum::new(&params, T::lit(config.learning_rate), T::lit(config.momentum));
    let mut sampler = BatchSampler::new(config.seed, source.len(), target.len(), config.batch_size);
    let xs = source.feature_matrix::<T>();
    let xt = target.feature_matrix::<T>();

    let steps_per_epoch = sampler.steps_per_epoch();
    let total_steps = (steps_per_epoch * config.epochs).max(1);
    let mut history = TrainHistory {
        lambda_mmd: config.lambda_mmd,
        lambda_adv: config.lambda_adv,
        ..TrainHistory::default()
    };
    let mut pseudo: Vec<Option<usize>> = vec![None; target.len()];
    let mut global_step = 0usize;

    for epoch in 0..config.epochs {
        let mut pseudo_count = 0;
        if config.pseudo_labels && epoch >= config.pseudo_label_warmup_epochs {
            pseudo = vec![None; target.len()];
            for pl in select_pseudo_labels(&params, target, config.confidence_threshold, config.class_cap())? {
                pseudo[pl.target_index] = Some(pl.predicted_class);
                pseudo_count += 1;
            }
        }

        let mut sums = [0.0f64; 3];
        let mut grl = 0.0;
        let batches = sampler.source_epoch();
        let n_batches = batches.len();
        for (step, src_idx) in batches.into_iter().enumerate() {
            let tgt_idx = sampler.target_batch();
            let progress = global_step as f64 / total_steps as f64;
            grl = grl_coefficient(progress, config.grl_gamma);

            let x = xs.select_rows(&src_idx).vstack(&xt.select_rows(&tgt_idx))?;
            let labeled = labeled_rows::<T>(source, target, &src_idx, &tgt_idx, &pseudo, config);
            let out = batch_gradients(
                &params,
                &x,
                src_idx.len(),
                &labeled,
                T::lit(config.lambda_mmd),
                T::lit(config.lambda_adv * grl),
            )?;
            let l_s = finite("source", out.l_source.as_f64(), epoch, step)?;
            let l_mmd = finite("mmd", out.l_mmd.as_f64(), epoch, step)?;
            let l_adv = finite("adversarial", out.l_adv.as_f64(), epoch, step)?;
            let breakdown =
                LossBreakdown::compose(l_s, l_mmd, l_adv, config.lambda_mmd, config.lambda_adv)?;
            finite("total", breakdown.l_total, epoch, step)?;
            history.steps.push(breakdown);
            sums[0] += l_s;
            sums[1] += l_mmd;
            sums[2] += l_adv;

            opt.step(&mut params, &out.grads)?;
            global_step += 1;
        }

        let n = n_batches.max(1) as f64;
        let losses = LossBreakdown::compose(
            sums[0] / n,
            sums[1] / n,
            sums[2] / n,
            config.lambda_mmd,
            config.lambda_adv,
        )?;
        history.epochs.push(EpochRecord {
            epoch,
            losses,
            source_accuracy: visible_accuracy(&params, source)?.unwrap_or(0.0),
            target_accuracy: if config.use_target_labels {
                visible_accuracy(&params, target)?
            } else {
                None
            },
            pseudo_label_count: pseudo_count,
            grl_coefficient: grl,
        });
    }
    Ok((params, history))
}

/// Plain supervised training on the labeled rows only: no alignment terms,
/// no discriminator, no pseudo-labels. Draws batches exactly as [`train`].
pub fn train_source_only<T: Scalar>(
    source: &Dataset,
    target: &Dataset,
    arch: &ArchSpec,
    config: &TrainConfig,
) -> Result<ModelParams<T>> {
    config.validate()?;
    check_inputs(source, target, arch)?;

    let mut params: ModelParams<T> = init_params(arch, config.seed)?;
    let mut opt = SgdMomentum::new(&params, T::lit(config.learning_rate), T::lit(config.momentum));
    let mut sampler = BatchSampler::new(config.seed, source.len(), target.len(), config.batch_size);
    let xs = source.feature_matrix::<T>();
    let xt = target.feature_matrix::<T>();
    let no_pseudo = vec![None; target.len()];

    for epoch in 0..config.epochs {
        for (step, src_idx) in sampler.source_epoch().into_iter().enumerate() {
            let tgt_idx = sampler.target_batch();
            let x = xs.select_rows(&src_idx).vstack(&xt.select_rows(&tgt_idx))?;
            let f_trace = params.extractor.forward_trace(&x)?;
            let c_trace = params.classifier.forward_trace(f_trace.output())?;
            let labeled = labeled_rows::<T>(source, target, &src_idx, &tgt_idx, &no_pseudo, config);
            let (l_s, g_logits) = classification_term(c_trace.output(), &labeled)?;
            finite("source", l_s.as_f64(), epoch, step)?;
            let (g_cls, g_feats) = params.classifier.backward(&c_trace, &g_logits)?;
            let (g_ext, _) = params.extractor.backward(&f_trace, &g_feats)?;
            let grads = ModelGrads {
                extractor: g_ext,
                classifier: g_cls,
                discriminator: params.discriminator.zero_grads(),
            };
            opt.step(&mut params, &grads)?;
        }
    }
    Ok(params)
}
