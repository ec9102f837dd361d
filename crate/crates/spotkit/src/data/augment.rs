//! Training-time augmentation: width-only random crop, clip-consistent
//! color jitter, and optional Gaussian blur. Labels are never touched.

use crate::core::SpotError;
use crate::data::clip::Clip;
use ndarray::{s, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Output width; the crop moves only along the width axis.
    pub crop_width: usize,
    /// Max relative brightness/contrast perturbation (0 disables).
    pub jitter_strength: f32,
    /// Probability of blurring the whole clip.
    pub blur_probability: f32,
    /// Beta(α, α) mixup parameter; 0 disables mixup.
    pub mixup_alpha: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop_width: 224,
            jitter_strength: 0.1,
            blur_probability: 0.25,
            mixup_alpha: 0.2,
        }
    }
}

impl AugmentConfig {
    /// Identity configuration (no crop, no jitter, no blur, no mixup).
    pub fn none(width: usize) -> Self {
        Self {
            crop_width: width,
            jitter_strength: 0.0,
            blur_probability: 0.0,
            mixup_alpha: 0.0,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(0.0..=1.0).contains(&self.blur_probability) {
            return Err(SpotError::invalid("blur_probability must be in [0,1]"));
        }
        if self.jitter_strength < 0.0 || self.mixup_alpha < 0.0 {
            return Err(SpotError::invalid("jitter_strength and mixup_alpha must be >= 0"));
        }
        if self.crop_width == 0 {
            return Err(SpotError::invalid("crop_width must be >= 1"));
        }
        Ok(())
    }
}

/// 3-tap binomial blur along both spatial axes, every frame.
fn blur(frames: &Array4<f32>) -> Array4<f32> {
    let (l, h, w, c) = frames.dim();
    let taps = [0.25f32, 0.5, 0.25];
    let mut tmp = Array4::<f32>::zeros((l, h, w, c));
    // horizontal pass with edge clamping
    for t in 0..l {
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for (k, &wt) in taps.iter().enumerate() {
                        let jj = (j + k).saturating_sub(1).min(w - 1);
                        acc += wt * frames[[t, i, jj, ch]];
                    }
                    tmp[[t, i, j, ch]] = acc;
                }
            }
        }
    }
    let mut out = Array4::<f32>::zeros((l, h, w, c));
    for t in 0..l {
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for (k, &wt) in taps.iter().enumerate() {
                        let ii = (i + k).saturating_sub(1).min(h - 1);
                        acc += wt * tmp[[t, ii, j, ch]];
                    }
                    out[[t, i, j, ch]] = acc;
                }
            }
        }
    }
    out
}

/// Apply crop/jitter/blur with clip-consistent random draws. Mixup is the
/// caller's job (it needs a second clip).
pub fn augment<R: Rng>(clip: &Clip, config: &AugmentConfig, rng: &mut R) -> crate::Result<Clip> {
    config.validate()?;
    let (l, h, w, c) = clip.frames.dim();
    if config.crop_width > w {
        return Err(SpotError::invalid(format!(
            "crop_width {} exceeds frame width {}",
            config.crop_width, w
        )));
    }
    // one crop offset for the whole clip; the height axis is untouched
    let max_off = w - config.crop_width;
    let off = if max_off > 0 { rng.gen_range(0..=max_off) } else { 0 };
    let mut frames: Array4<f32> = clip
        .frames
        .slice(s![.., .., off..off + config.crop_width, ..])
        .to_owned();
    if config.jitter_strength > 0.0 {
        // clip-consistent brightness shift and per-channel contrast scale
        let s = config.jitter_strength;
        let shift: f32 = rng.gen_range(-s..=s);
        let scale: [f32; 3] = [
            rng.gen_range(1.0 - s..=1.0 + s),
            rng.gen_range(1.0 - s..=1.0 + s),
            rng.gen_range(1.0 - s..=1.0 + s),
        ];
        for t in 0..l {
            for i in 0..h {
                for j in 0..config.crop_width {
                    for ch in 0..c {
                        let v = frames[[t, i, j, ch]] * scale[ch] + shift;
                        frames[[t, i, j, ch]] = v.clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    if config.blur_probability > 0.0 && rng.gen::<f32>() < config.blur_probability {
        frames = blur(&frames);
    }
    Ok(Clip {
        frames,
        labels: clip.labels.clone(),
        source: clip.source.clone(),
    })
}
