//! Training objective: SoftIoU + L1 on the confidence map, MSE on the
//! reconstruction, combined as seg + lambda * rec.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, VarId};

/// Loss combination weights.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossWeights {
    /// Weight of the reconstruction term.
    pub lambda: f64,
    pub softiou_eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 0.1,
            softiou_eps: 1e-6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(crate::invalid_arg!("loss: lambda must be >= 0"));
        }
        if self.softiou_eps <= 0.0 {
            return Err(crate::invalid_arg!("loss: softiou_eps must be > 0"));
        }
        Ok(())
    }
}

/// Scalar loss values extracted from a forward pass.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossParts {
    pub seg_softiou: f64,
    pub seg_l1: f64,
    pub rec_mse: f64,
    pub total: f64,
}

/// Tape handles of the loss terms.
pub struct LossVars {
    pub seg_softiou: VarId,
    pub seg_l1: VarId,
    pub rec_mse: VarId,
    pub total: VarId,
}

fn check_binary<E: Scalar>(tape: &Tape<E>, target: VarId) -> Result<()> {
    let ok = tape
        .value(target)
        .data()
        .iter()
        .all(|&v| v == E::zero() || v == E::one());
    if !ok {
        return Err(crate::invalid_arg!(
            "soft_iou_loss: target mask must be binary (0/1)"
        ));
    }
    Ok(())
}

/// Per-sample 1 - (|p∩t| + eps) / (|p| + |t| - |p∩t| + eps), averaged over
/// the batch. `pred` holds confidences in (0,1); `target` is a 0/1 mask of
/// identical shape.
pub fn soft_iou_loss<E: Scalar>(
    tape: &mut Tape<E>,
    pred: VarId,
    target: VarId,
    eps: f64,
) -> Result<VarId> {
    if tape.value(pred).shape() != tape.value(target).shape() {
        return Err(Error::ShapeMismatch {
            op: "soft_iou_loss",
            expected: tape.value(pred).shape(),
            got: tape.value(target).shape(),
        });
    }
    check_binary(tape, target)?;
    let eps = E::from_f64(eps);
    let inter_px = tape.mul(pred, target)?;
    let inter = tape.sum_per_sample(inter_px);
    let p_sum = tape.sum_per_sample(pred);
    let t_sum = tape.sum_per_sample(target);
    let p_plus_t = tape.add(p_sum, t_sum)?;
    let union = tape.sub(p_plus_t, inter)?;
    let num = tape.add_scalar(inter, eps);
    let den = tape.add_scalar(union, eps);
    let ratio = tape.div(num, den)?;
    let neg = tape.scale(ratio, -E::one());
    let one_minus = tape.add_scalar(neg, E::one());
    Ok(tape.mean_all(one_minus))
}

/// Mean absolute difference over all elements.
pub fn l1_loss<E: Scalar>(tape: &mut Tape<E>, pred: VarId, target: VarId) -> Result<VarId> {
    if tape.value(pred).shape() != tape.value(target).shape() {
        return Err(Error::ShapeMismatch {
            op: "l1_loss",
            expected: tape.value(pred).shape(),
            got: tape.value(target).shape(),
        });
    }
    let diff = tape.sub(pred, target)?;
    let mag = tape.abs(diff);
    Ok(tape.mean_all(mag))
}

/// Mean squared difference over all elements.
pub fn mse_loss<E: Scalar>(tape: &mut Tape<E>, pred: VarId, target: VarId) -> Result<VarId> {
    if tape.value(pred).shape() != tape.value(target).shape() {
        return Err(Error::ShapeMismatch {
            op: "mse_loss",
            expected: tape.value(pred).shape(),
            got: tape.value(target).shape(),
        });
    }
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.mean_all(sq))
}

/// total = (SoftIoU + L1)(confidence, mask) + lambda * MSE(reconstruction,
/// image). The reconstruction target is the input image itself.
pub fn total_loss<E: Scalar>(
    tape: &mut Tape<E>,
    confidence: VarId,
    mask: VarId,
    reconstruction: VarId,
    image: VarId,
    weights: &LossWeights,
) -> Result<LossVars> {
    weights.validate()?;
    let seg_softiou = soft_iou_loss(tape, confidence, mask, weights.softiou_eps)?;
    let seg_l1 = l1_loss(tape, confidence, mask)?;
    let rec_mse = mse_loss(tape, reconstruction, image)?;
    let seg = tape.add(seg_softiou, seg_l1)?;
    let rec_weighted = tape.scale(rec_mse, E::from_f64(weights.lambda));
    let total = tape.add(seg, rec_weighted)?;
    Ok(LossVars {
        seg_softiou,
        seg_l1,
        rec_mse,
        total,
    })
}

impl LossVars {
    pub fn values<E: Scalar>(&self, tape: &Tape<E>) -> LossParts {
        LossParts {
            seg_softiou: tape.value(self.seg_softiou).item().as_f64(),
            seg_l1: tape.value(self.seg_l1).item().as_f64(),
            rec_mse: tape.value(self.rec_mse).item().as_f64(),
            total: tape.value(self.total).item().as_f64(),
        }
    }
}
