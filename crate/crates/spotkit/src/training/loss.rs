//! Per-frame weighted cross-entropy over soft label targets.
//!
//! The loss is summed (not averaged) over masked-in frames; each frame's
//! weight is the label-weighted average of the per-class weights, so a hard
//! foreground frame contributes exactly fg_weight times its plain CE.

use crate::core::{SoftLabelSeq, SpotError};
use crate::model::Scalar;
use ndarray::Array2;

/// Loss value plus the gradient w.r.t. the logits.
pub struct LossOutput<T> {
    pub loss: T,
    pub dlogits: Array2<T>,
    /// Number of frames that contributed (masked-in).
    pub frames: usize,
}

/// Weighted per-frame cross-entropy between logits (L, K+1) and soft
/// targets. Masked-out frames are excluded entirely.
pub fn per_frame_loss<T: Scalar>(
    logits: &Array2<T>,
    targets: &SoftLabelSeq,
    weights: &[f32],
) -> crate::Result<T> {
    Ok(per_frame_loss_with_grad(logits, targets, weights)?.loss)
}

pub fn per_frame_loss_with_grad<T: Scalar>(
    logits: &Array2<T>,
    targets: &SoftLabelSeq,
    weights: &[f32],
) -> crate::Result<LossOutput<T>> {
    let (l, k1) = logits.dim();
    if targets.dist.dim() != (l, k1) {
        return Err(SpotError::ShapeMismatch(format!(
            "logits {:?} vs targets {:?}",
            logits.dim(),
            targets.dist.dim()
        )));
    }
    if weights.len() != k1 {
        return Err(SpotError::ShapeMismatch(format!(
            "weight vector has {} entries, expected {}",
            weights.len(),
            k1
        )));
    }
    let mut loss = T::zero();
    let mut dlogits = Array2::<T>::zeros((l, k1));
    let mut frames = 0usize;
    for t in 0..l {
        if targets.mask[t] == 0 {
            continue;
        }
        frames += 1;
        let row = logits.row(t);
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for &v in row.iter() {
            sum += (v - max).exp();
        }
        let log_sum = sum.ln() + max;
        // frame weight: label-weighted average of class weights
        let mut w_t = T::zero();
        for c in 0..k1 {
            w_t += T::from_f32(targets.dist[[t, c]] * weights[c]);
        }
        // CE = -sum_c dist_c * (logit_c - log_sum)
        let mut ce = T::zero();
        for c in 0..k1 {
            let d = T::from_f32(targets.dist[[t, c]]);
            if d > T::zero() {
                ce -= d * (row[c] - log_sum);
            }
        }
        loss += w_t * ce;
        // d/dlogit_c = w_t * (softmax_c - dist_c)
        for c in 0..k1 {
            let p = (row[c] - log_sum).exp();
            dlogits[[t, c]] = w_t * (p - T::from_f32(targets.dist[[t, c]]));
        }
    }
    Ok(LossOutput { loss, dlogits, frames })
}
