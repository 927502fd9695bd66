//! Adam optimization with poly learning-rate decay, the training loop, and
//! model evaluation.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::loss::{total_loss, LossParts, LossWeights};
use crate::metrics::{self, Mask, MetricsReport};
use crate::net::Model;
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::{Shape, Tensor};

const SHUFFLE_LABEL: u64 = 0x7368_7566; // "shuf"

/// Optimization hyperparameters.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub epochs: usize,
    pub poly_power: f64,
    /// Reconstruction loss weight.
    pub lambda: f64,
    pub seed: u64,
    /// Binarization threshold used for validation metrics.
    pub eval_tau: f64,
    /// Optional global gradient-norm clip; off by default.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            batch: 8,
            epochs: 400,
            poly_power: 0.9,
            lambda: 0.1,
            seed: 0,
            eval_tau: 0.5,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 || self.eps <= 0.0 {
            return Err(crate::invalid_arg!("train: lr0 and eps must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(crate::invalid_arg!("train: betas must lie in [0,1)"));
        }
        if self.batch == 0 || self.epochs == 0 {
            return Err(crate::invalid_arg!(
                "train: batch and epochs must be >= 1"
            ));
        }
        if self.weight_decay < 0.0 || self.lambda < 0.0 {
            return Err(crate::invalid_arg!(
                "train: weight_decay and lambda must be >= 0"
            ));
        }
        if !(0.0..=1.0).contains(&self.eval_tau) {
            return Err(crate::invalid_arg!("train: eval_tau must lie in [0,1]"));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            ..LossWeights::default()
        }
    }
}

/// lr = lr0 * (1 - epoch/total)^power
pub fn poly_lr(epoch: usize, total_epochs: usize, lr0: f64, power: f64) -> Result<f64> {
    if epoch >= total_epochs {
        return Err(crate::invalid_arg!(
            "poly_lr: epoch {epoch} out of range 0..{total_epochs}"
        ));
    }
    let frac = 1.0 - epoch as f64 / total_epochs as f64;
    Ok(lr0 * num_traits::Float::powf(frac, power))
}

/// Per-parameter first/second moment estimates.
#[derive(Clone, Debug)]
pub struct AdamState<E: Scalar> {
    m: Vec<Tensor<E>>,
    v: Vec<Tensor<E>>,
    pub step: u64,
}

impl<E: Scalar> AdamState<E> {
    pub fn new(model: &Model<E>) -> Self {
        let mut m = Vec::new();
        model.visit_params(&mut |_, t| m.push(Tensor::zeros(t.shape())));
        let v = m.clone();
        AdamState { m, v, step: 0 }
    }
}

/// One bias-corrected Adam update of a single tensor.
#[allow(clippy::too_many_arguments)]
pub fn adam_update_tensor<E: Scalar>(
    param: &mut Tensor<E>,
    grad: &Tensor<E>,
    m: &mut Tensor<E>,
    v: &mut Tensor<E>,
    step: u64,
    lr: f64,
    cfg: &TrainConfig,
) {
    let b1 = E::from_f64(cfg.beta1);
    let b2 = E::from_f64(cfg.beta2);
    let one = E::one();
    let eps = E::from_f64(cfg.eps);
    let wd = E::from_f64(cfg.weight_decay);
    let lr = E::from_f64(lr);
    let corr1 = E::from_f64(1.0 - num_traits::Float::powi(cfg.beta1, step as i32));
    let corr2 = E::from_f64(1.0 - num_traits::Float::powi(cfg.beta2, step as i32));

    let pd = param.data_mut();
    let md = m.data_mut();
    let vd = v.data_mut();
    for i in 0..pd.len() {
        let mut g = grad.data()[i];
        if wd != E::zero() {
            g = g + wd * pd[i];
        }
        md[i] = b1 * md[i] + (one - b1) * g;
        vd[i] = b2 * vd[i] + (one - b2) * g * g;
        let m_hat = md[i] / corr1;
        let v_hat = vd[i] / corr2;
        pd[i] = pd[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Apply one Adam step to every model parameter. `grads` must hold one
/// entry per parameter in visit order (as produced by
/// `Tape::named_grads` after a forward pass that registered the model).
pub fn adam_step<E: Scalar>(
    model: &mut Model<E>,
    grads: &[(String, Tensor<E>)],
    state: &mut AdamState<E>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    state.step += 1;
    let step = state.step;
    let mut idx = 0usize;
    let mut err: Option<Error> = None;
    let m = &mut state.m;
    let v = &mut state.v;
    model.visit_params_mut(&mut |name, param| {
        if err.is_some() {
            return;
        }
        match grads.get(idx) {
            Some((gname, grad)) if *gname == name => {
                adam_update_tensor(param, grad, &mut m[idx], &mut v[idx], step, lr, cfg);
            }
            Some((gname, _)) => {
                err = Some(crate::invalid_arg!(
                    "adam_step: gradient order mismatch at {idx}: expected {name}, got {gname}"
                ));
            }
            None => {
                err = Some(crate::invalid_arg!(
                    "adam_step: missing gradient for parameter {name}"
                ));
            }
        }
        idx += 1;
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(())
}

/// Training/evaluation sample: image in [0,1] plus its binary target mask.
#[derive(Clone, Debug)]
pub struct Sample<E: Scalar> {
    /// H x W image.
    pub image: Tensor<E>,
    pub mask: Mask,
}

impl<E: Scalar> Sample<E> {
    pub fn from_scene(scene: &crate::synth::Scene) -> Self {
        Sample {
            image: scene.image.cast(),
            mask: scene.mask.clone(),
        }
    }
}

fn stack_batch<E: Scalar>(samples: &[&Sample<E>]) -> (Tensor<E>, Tensor<E>) {
    let (h, w) = (
        samples[0].image.shape().dim(0),
        samples[0].image.shape().dim(1),
    );
    let n = samples.len();
    let mut images = Vec::with_capacity(n * h * w);
    let mut masks = Vec::with_capacity(n * h * w);
    for s in samples {
        images.extend_from_slice(s.image.data());
        masks.extend(
            s.mask
                .data
                .iter()
                .map(|&b| if b { E::one() } else { E::zero() }),
        );
    }
    (
        Tensor::from_vec(Shape::d4(n, 1, h, w), images).expect("batch shape"),
        Tensor::from_vec(Shape::d4(n, 1, h, w), masks).expect("batch shape"),
    )
}

/// Forward a set of samples in batches, returning per-sample confidence
/// maps as f64 rank-2 tensors.
pub fn infer_confidences<E: Scalar>(
    model: &Model<E>,
    samples: &[Sample<E>],
    batch: usize,
) -> Result<Vec<Tensor<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&Sample<E>> = chunk.iter().collect();
        let (images, _) = stack_batch(&refs);
        let (h, w) = (images.shape().dim(2), images.shape().dim(3));
        let pred = model.infer(&images)?;
        for i in 0..chunk.len() {
            let plane = &pred.confidence.data()[i * h * w..][..h * w];
            out.push(
                Tensor::from_vec(
                    Shape::d2(h, w),
                    plane.iter().map(|v| v.as_f64()).collect(),
                )
                .expect("confidence plane"),
            );
        }
    }
    Ok(out)
}

/// Pixel/object metrics plus a full ROC sweep at the default 101-point
/// threshold grid.
pub fn evaluate<E: Scalar>(
    model: &Model<E>,
    samples: &[Sample<E>],
    tau: f64,
    batch: usize,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(crate::invalid_arg!("evaluate: empty sample set"));
    }
    let confs = infer_confidences(model, samples, batch)?;
    let gts: Vec<Mask> = samples.iter().map(|s| s.mask.clone()).collect();
    metrics::evaluate_set(
        &confs,
        &gts,
        tau,
        metrics::DEFAULT_D_MAX,
        &metrics::default_thresholds(),
    )
}

/// Quick pixel/object metrics without the ROC sweep (used per epoch).
fn quick_metrics<E: Scalar>(
    model: &Model<E>,
    samples: &[Sample<E>],
    tau: f64,
    batch: usize,
) -> Result<(f64, f64, f64, f64)> {
    let confs = infer_confidences(model, samples, batch)?;
    let gts: Vec<Mask> = samples.iter().map(|s| s.mask.clone()).collect();
    let preds: Vec<Mask> = confs.iter().map(|c| metrics::binarize(c, tau)).collect();
    let pm = metrics::pixel_metrics(&preds, &gts)?;
    let om = metrics::object_metrics(&preds, &gts, metrics::DEFAULT_D_MAX)?;
    Ok((pm.iou, pm.niou, om.pd, om.fa))
}

/// Per-epoch record; loss parts are sample-weighted batch means.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub seg_softiou: f64,
    pub seg_l1: f64,
    pub rec_mse: f64,
    pub total: f64,
    pub val_iou: f64,
    pub val_niou: f64,
    pub val_pd: f64,
    pub val_fa: f64,
}

/// Outcome of a training run.
pub struct TrainRun<E: Scalar> {
    pub history: Vec<EpochRecord>,
    /// Snapshot of the parameters with the best validation IoU.
    pub best: Model<E>,
    pub best_epoch: usize,
    pub best_val_iou: f64,
}

/// Seeded, deterministic training loop: shuffle, batch, forward, combined
/// loss, backward, Adam step under the poly schedule; validation metrics
/// after every epoch; best snapshot kept by validation IoU. Aborts with a
/// located error if the loss turns non-finite.
pub fn train_loop<E: Scalar>(
    model: &mut Model<E>,
    train: &[Sample<E>],
    val: &[Sample<E>],
    cfg: &TrainConfig,
) -> Result<TrainRun<E>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(crate::invalid_arg!(
            "train_loop: train and validation sets must be non-empty"
        ));
    }
    let weights = cfg.loss_weights();
    let mut state = AdamState::new(model);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Model<E>)> = None;

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = poly_lr(epoch, cfg.epochs, cfg.lr0, cfg.poly_power)?;
        let mut shuffle_rng = Stream::derive(cfg.seed, SHUFFLE_LABEL, epoch as u64);
        shuffle_rng.shuffle(&mut order);

        let mut sums = LossParts::default();
        let mut seen = 0usize;
        for (batch_idx, batch) in order.chunks(cfg.batch).enumerate() {
            let refs: Vec<&Sample<E>> = batch.iter().map(|&i| &train[i]).collect();
            let (images, masks) = stack_batch(&refs);

            let mut tape = Tape::new();
            let image_var = tape.constant(images);
            let mask_var = tape.constant(masks);
            let vars = model.register(&mut tape);
            let out = model.forward(&mut tape, &vars, image_var)?;
            let loss_vars = total_loss(
                &mut tape,
                out.confidence,
                mask_var,
                out.reconstruction,
                image_var,
                &weights,
            )?;
            let parts = loss_vars.values(&tape);
            if !parts.total.is_finite() {
                return Err(Error::Numerical(alloc::format!(
                    "training diverged: non-finite loss at epoch {epoch}, batch {batch_idx}"
                )));
            }
            tape.backward(loss_vars.total)?;
            let mut grads = tape.named_grads();
            if let Some(limit) = cfg.grad_clip {
                clip_gradients(&mut grads, limit);
            }
            adam_step(model, &grads, &mut state, lr, cfg)?;

            let bsz = batch.len() as f64;
            sums.seg_softiou += parts.seg_softiou * bsz;
            sums.seg_l1 += parts.seg_l1 * bsz;
            sums.rec_mse += parts.rec_mse * bsz;
            sums.total += parts.total * bsz;
            seen += batch.len();
        }

        let inv = 1.0 / seen as f64;
        let (val_iou, val_niou, val_pd, val_fa) =
            quick_metrics(model, val, cfg.eval_tau, cfg.batch)?;
        history.push(EpochRecord {
            epoch,
            lr,
            seg_softiou: sums.seg_softiou * inv,
            seg_l1: sums.seg_l1 * inv,
            rec_mse: sums.rec_mse * inv,
            total: sums.total * inv,
            val_iou,
            val_niou,
            val_pd,
            val_fa,
        });

        let improved = best.as_ref().map_or(true, |(_, b, _)| val_iou > *b);
        if improved {
            best = Some((epoch, val_iou, model.clone()));
        }
    }

    let (best_epoch, best_val_iou, best_model) = best.expect("at least one epoch ran");
    Ok(TrainRun {
        history,
        best: best_model,
        best_epoch,
        best_val_iou,
    })
}

fn clip_gradients<E: Scalar>(grads: &mut [(String, Tensor<E>)], limit: f64) {
    let mut sq = 0.0f64;
    for (_, g) in grads.iter() {
        for v in g.data() {
            let x = v.as_f64();
            sq += x * x;
        }
    }
    let norm = num_traits::Float::sqrt(sq);
    if norm > limit && norm > 0.0 {
        let scale = E::from_f64(limit / norm);
        for (_, g) in grads.iter_mut() {
            for v in g.data_mut() {
                *v = *v * scale;
            }
        }
    }
}

/// Deterministic 80/20 split by index hash: indices are ordered by a mixed
/// hash and the first fifth becomes validation.
pub fn split_indices(count: usize, val_frac: f64) -> (Vec<usize>, Vec<usize>) {
    fn mix(mut x: u64) -> u64 {
        x ^= x >> 30;
        x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x ^= x >> 27;
        x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
        x ^ (x >> 31)
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by_key(|&i| (mix(i as u64), i));
    let n_val = num_traits::Float::round(count as f64 * val_frac) as usize;
    let val: Vec<usize> = order[..n_val].to_vec();
    let train: Vec<usize> = order[n_val..].to_vec();
    (train, val)
}
