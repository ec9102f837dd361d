//! Finite-difference verification of the analytic gradients.
//!
//! Runs the whole model in f64 and compares the backward pass against
//! central differences on a random sample of parameters.

use crate::core::SoftLabelSeq;
use crate::model::SpotModel;
use crate::training::loss::per_frame_loss_with_grad;
use ndarray::Array4;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
}

/// Compare analytic gradients to central finite differences on at least
/// `min_samples` randomly chosen scalar parameters (covering every
/// parameter array at least once). Relative error uses the usual
/// symmetric normalization with an absolute floor.
pub fn finite_difference_check(
    model: &mut SpotModel<f64>,
    input: &Array4<f64>,
    targets: &SoftLabelSeq,
    weights: &[f32],
    min_samples: usize,
    seed: u64,
) -> crate::Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Analytic gradients.
    model.store.zero_grads();
    let (logits, cache) = model.forward_logits(input)?;
    let out = per_frame_loss_with_grad(&logits, targets, weights)?;
    model.backward(&cache, &out.dlogits);

    // Sample (param, flat index) pairs: one per array, then uniform.
    let ids: Vec<_> = model.store.ids().collect();
    let mut picks: Vec<(usize, usize)> = Vec::new();
    for (i, &id) in ids.iter().enumerate() {
        let n = model.store.value(id).len();
        picks.push((i, rng.gen_range(0..n)));
    }
    while picks.len() < min_samples {
        let i = rng.gen_range(0..ids.len());
        let n = model.store.value(ids[i]).len();
        picks.push((i, rng.gen_range(0..n)));
    }
    picks.shuffle(&mut rng);

    let eps = 1e-5;
    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    for (i, j) in picks.iter().copied() {
        let id = ids[i];
        let analytic = model.store.grad(id).as_slice().unwrap()[j];
        let orig = model.store.value(id).as_slice().unwrap()[j];

        let eval = |m: &SpotModel<f64>| -> crate::Result<f64> {
            let (lg, _) = m.forward_logits(input)?;
            Ok(per_frame_loss_with_grad(&lg, targets, weights)?.loss)
        };
        model.store.value_mut(id).as_slice_mut().unwrap()[j] = orig + eps;
        let fp = eval(model)?;
        model.store.value_mut(id).as_slice_mut().unwrap()[j] = orig - eps;
        let fm = eval(model)?;
        model.store.value_mut(id).as_slice_mut().unwrap()[j] = orig;

        let numeric = (fp - fm) / (2.0 * eps);
        // The floor keeps cancellation noise on near-zero gradients from
        // dominating: the quotient's own resolution is ~1e-10 for an O(1)
        // loss, far below the floor.
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-3);
        if rel > max_rel {
            max_rel = rel;
            worst = format!("{}[{}]", model.store.name(id), j);
        }
    }
    Ok(GradCheckReport {
        checked: picks.len(),
        max_rel_err: max_rel,
        worst_param: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{class_weights, densify, EventLabel};
    use crate::model::{BackboneConfig, HeadConfig, HeadKind};

    fn check(kind: HeadKind) -> GradCheckReport {
        let bb = BackboneConfig::grad_check(3);
        let mut head = HeadConfig::new(kind, 16, 2);
        head.grustar_scales = vec![2];
        let mut model: SpotModel<f64> = SpotModel::new(&bb, &head, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = Array4::from_shape_simple_fn((6, 3, 16, 16), || rng.gen_range(-0.5..0.5));
        let events = vec![
            EventLabel {
                video_id: "v".into(),
                frame: 1,
                class_id: 1,
            },
            EventLabel {
                video_id: "v".into(),
                frame: 4,
                class_id: 2,
            },
        ];
        let dense = densify(&events, 6, 2).unwrap();
        let targets = SoftLabelSeq::from_dense(&dense, 2);
        let w = class_weights(2, 5.0).unwrap();
        finite_difference_check(&mut model, &input, &targets, &w, 220, 5).unwrap()
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        let report = check(HeadKind::Bigru);
        assert!(report.checked >= 200);
        assert!(report.max_rel_err < 1e-5, "{:?}", report);
    }

    #[test]
    fn grustar_gradients_match_finite_differences() {
        let report = check(HeadKind::Grustar);
        assert!(report.checked >= 200);
        assert!(report.max_rel_err < 1e-5, "{:?}", report);
    }
}
