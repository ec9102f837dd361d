//! AdamW with decoupled weight decay, and the warmup + cosine LR schedule.

use crate::core::SpotError;
use crate::model::{ParamStore, Scalar};
use ndarray::ArrayD;

/// Learning rate at a global step: linear warmup over the first
/// `warmup_steps`, then cosine decay to zero at `total_steps`.
pub fn lr_at_step(step: usize, base_lr: f64, warmup_steps: usize, total_steps: usize) -> crate::Result<f64> {
    if step >= total_steps {
        return Err(SpotError::invalid(format!(
            "step {} out of range (total {})",
            step, total_steps
        )));
    }
    if step < warmup_steps {
        return Ok(base_lr * (step + 1) as f64 / warmup_steps as f64);
    }
    let t = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}

/// Decoupled-weight-decay adaptive-moment optimizer.
pub struct AdamW<T> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: usize,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(store: &ParamStore<T>, weight_decay: f64) -> Self {
        let m = store.ids().map(|id| ArrayD::zeros(store.value(id).raw_dim())).collect();
        let v = store.ids().map(|id| ArrayD::zeros(store.value(id).raw_dim())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m,
            v,
        }
    }

    /// One update from the gradients currently held in the store.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one_m_b1 = T::from_f64(1.0 - self.beta1);
        let one_m_b2 = T::from_f64(1.0 - self.beta2);
        let eps = T::from_f64(self.eps);
        let lr_t = T::from_f64(lr / bc1);
        let inv_sqrt_bc2 = T::from_f64(1.0 / bc2.sqrt());
        for (i, entry) in store.entries.iter_mut().enumerate() {
            let decay_factor = if entry.decay {
                T::from_f64(1.0 - lr * self.weight_decay)
            } else {
                T::one()
            };
            let m = self.m[i].as_slice_mut().unwrap();
            let v = self.v[i].as_slice_mut().unwrap();
            let g = entry.grad.as_slice().unwrap();
            let p = entry.value.as_slice_mut().unwrap();
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = b1 * m[j] + one_m_b1 * gj;
                v[j] = b2 * v[j] + one_m_b2 * gj * gj;
                let denom = (v[j]).sqrt() * inv_sqrt_bc2 + eps;
                p[j] = p[j] * decay_factor - lr_t * m[j] / denom;
            }
        }
    }
}
