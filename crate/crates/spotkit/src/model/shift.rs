//! Temporal shift and gate shift modules.
//!
//! Both exchange a subset of channels between adjacent frames inside a 2D
//! CNN block. The temporal shift is fixed; the gate shift modulates it with
//! a learned spatial gate. Shift direction split is pinned: the first half
//! of the shift channels moves forward in time (frame t reads t-1), the
//! second half backward. Out-of-range positions are zero-filled.

use super::conv::{Conv2d, Conv2dCache};
use super::nn::{ParamStore, Scalar};
use crate::core::SpotError;
use ndarray::{s, Array4};

/// Number of channels a shift module operates on: the smallest multiple of
/// 4 that is >= C * fraction, capped at C.
pub fn shift_channel_count(channels: usize, fraction: (u32, u32)) -> usize {
    assert!(channels >= 1 && fraction.0 > 0 && fraction.1 > 0);
    let target = (channels as u64 * fraction.0 as u64) as f64 / fraction.1 as f64;
    let mult = ((target / 4.0).ceil() as usize).max(1) * 4;
    mult.min(channels)
}

/// Shift the first half of channels forward in time and the second half
/// backward; boundary frames receive zeros. Requires an even channel count.
pub fn temporal_shift<T: Scalar>(x: &Array4<T>) -> crate::Result<Array4<T>> {
    let (l, c, _h, _w) = x.dim();
    if c % 2 != 0 {
        return Err(SpotError::invalid(format!(
            "temporal shift needs an even channel count, got {}",
            c
        )));
    }
    let half = c / 2;
    let mut y = Array4::<T>::zeros(x.raw_dim());
    for t in 0..l {
        // forward half: value from t-1
        if t >= 1 {
            y.slice_mut(s![t, ..half, .., ..])
                .assign(&x.slice(s![t - 1, ..half, .., ..]));
        }
        // backward half: value from t+1
        if t + 1 < l {
            y.slice_mut(s![t, half.., .., ..])
                .assign(&x.slice(s![t + 1, half.., .., ..]));
        }
    }
    Ok(y)
}

/// Adjoint of [`temporal_shift`]: shifts each half the opposite way.
pub fn temporal_shift_adjoint<T: Scalar>(dy: &Array4<T>) -> Array4<T> {
    let (l, c, _h, _w) = dy.dim();
    let half = c / 2;
    let mut dx = Array4::<T>::zeros(dy.raw_dim());
    for t in 0..l {
        if t + 1 < l {
            dx.slice_mut(s![t, ..half, .., ..])
                .assign(&dy.slice(s![t + 1, ..half, .., ..]));
        }
        if t >= 1 {
            dx.slice_mut(s![t, half.., .., ..])
                .assign(&dy.slice(s![t - 1, half.., .., ..]));
        }
    }
    dx
}

/// Gate shift module: a learned tanh gate decides, per location and frame,
/// how much of each shift channel is exchanged with its neighbors.
///
/// With gate output g = tanh(conv3x3(x)) and gated part r = g .* x, the
/// output is temporal_shift(r) + (x - r). Zero gate parameters make the
/// module an exact identity.
#[derive(Debug, Clone)]
pub struct GateShift {
    pub gate_conv: Conv2d,
}

pub struct GateShiftCache<T> {
    conv_cache: Conv2dCache<T>,
    gate: Array4<T>,
    input: Array4<T>,
}

impl GateShift {
    pub fn new<T: Scalar, R: rand::Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
    ) -> Self {
        // Modest gain keeps tanh out of saturation at init.
        let gate_conv = Conv2d::new(store, rng, &format!("{name}.gate"), channels, channels, 3, 1, 1, 0.5);
        Self { gate_conv }
    }

    pub fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        x: &Array4<T>,
    ) -> crate::Result<(Array4<T>, GateShiftCache<T>)> {
        let (pre, conv_cache) = self.gate_conv.forward(store, x);
        let gate = pre.mapv(|v| v.tanh());
        let r = &gate * x;
        let shifted = temporal_shift(&r)?;
        let y = shifted + x - &r;
        Ok((
            y,
            GateShiftCache {
                conv_cache,
                gate,
                input: x.clone(),
            },
        ))
    }

    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        cache: &GateShiftCache<T>,
        dy: &Array4<T>,
    ) -> Array4<T> {
        // y = shift(r) + x - r  =>  dr = shift^T(dy) - dy, dx += dy
        let dr = temporal_shift_adjoint(dy) - dy;
        // r = g .* x
        let dgate = &dr * &cache.input;
        let mut dx = dy + &(&dr * &cache.gate);
        // g = tanh(pre) => dpre = dgate .* (1 - g^2)
        let dpre = &dgate * &cache.gate.mapv(|g| T::one() - g * g);
        let dconv = self.gate_conv.backward(store, &cache.conv_cache, &dpre);
        dx += &dconv;
        dx
    }
}
