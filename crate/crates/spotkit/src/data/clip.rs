//! Clip sampling: fixed-length training windows with black-frame padding
//! and one-hot soft labels, plus mixup blending.

use crate::core::{DenseLabelSeq, SoftLabelSeq, SpotError};
use crate::data::frames::VideoFrames;
use ndarray::Array4;
use rand::Rng;

/// A fixed-length window of frames plus per-frame soft targets. The
/// validity mask lives inside `labels`; mask 0 marks padded positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    /// (L, H, W, 3) pixel values in [0,1].
    pub frames: Array4<f32>,
    pub labels: SoftLabelSeq,
    /// (video id, start frame).
    pub source: (String, usize),
}

impl Clip {
    pub fn len(&self) -> usize {
        self.frames.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Cut a clip of length `len` starting at `start`. Frames past the end of
/// the video are black with background label and mask 0.
pub fn clip_at(
    video: &VideoFrames,
    video_id: &str,
    dense: &DenseLabelSeq,
    num_classes: usize,
    start: usize,
    len: usize,
) -> crate::Result<Clip> {
    let n = video.num_frames();
    if dense.len() != n {
        return Err(SpotError::ShapeMismatch(format!(
            "video {} has {} frames but {} labels",
            video_id,
            n,
            dense.len()
        )));
    }
    let frames = video.clip_f32(start, len);
    let mut labels = Vec::with_capacity(len);
    let mut mask = Vec::with_capacity(len);
    for t in 0..len {
        if start + t < n {
            labels.push(dense.labels[start + t]);
            mask.push(dense.mask[start + t]);
        } else {
            labels.push(crate::core::BACKGROUND);
            mask.push(0);
        }
    }
    let soft = SoftLabelSeq::from_dense(&DenseLabelSeq { labels, mask }, num_classes);
    Ok(Clip {
        frames,
        labels: soft,
        source: (video_id.to_string(), start),
    })
}

/// Sample a clip with a uniformly random start in [0, max(0, N−len)].
pub fn sample_clip<R: Rng>(
    video: &VideoFrames,
    video_id: &str,
    dense: &DenseLabelSeq,
    num_classes: usize,
    len: usize,
    rng: &mut R,
) -> crate::Result<Clip> {
    if len == 0 {
        return Err(SpotError::invalid("clip length must be >= 1"));
    }
    let n = video.num_frames();
    let max_start = n.saturating_sub(len);
    let start = rng.gen_range(0..=max_start);
    clip_at(video, video_id, dense, num_classes, start, len)
}

/// Blend two clips: frames and label rows mixed with one λ, masks ANDed.
pub fn mixup(a: &Clip, b: &Clip, lambda: f32) -> crate::Result<Clip> {
    if a.frames.dim() != b.frames.dim() || a.labels.dist.dim() != b.labels.dist.dim() {
        return Err(SpotError::ShapeMismatch(format!(
            "mixup clips disagree: frames {:?} vs {:?}, labels {:?} vs {:?}",
            a.frames.dim(),
            b.frames.dim(),
            a.labels.dist.dim(),
            b.labels.dist.dim()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(SpotError::invalid(format!("mixup lambda {} outside [0,1]", lambda)));
    }
    let frames = &a.frames * lambda + &b.frames * (1.0 - lambda);
    let dist = &a.labels.dist * lambda + &b.labels.dist * (1.0 - lambda);
    let mask = a
        .labels
        .mask
        .iter()
        .zip(&b.labels.mask)
        .map(|(&x, &y)| x & y)
        .collect();
    Ok(Clip {
        frames,
        labels: SoftLabelSeq { dist, mask },
        source: a.source.clone(),
    })
}
