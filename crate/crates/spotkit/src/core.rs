//! Shared domain types: classes, videos, sparse events, dense label
//! sequences, per-frame score sequences, and spot predictions — plus label
//! densification, dilation, and foreground class weighting.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors surfaced by the spotting pipeline.
#[derive(Debug, Error)]
pub enum SpotError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("duplicate event frame {frame} in video {video}")]
    DuplicateEventFrame { video: String, frame: usize },
    #[error("event out of range: frame {frame} >= num_frames {num_frames} in video {video}")]
    EventOutOfRange {
        video: String,
        frame: usize,
        num_frames: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint version mismatch: file has {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("training diverged at step {step}: non-finite loss")]
    Diverged { step: usize },
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SpotError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        SpotError::Invalid(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        SpotError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Background class id. Foreground classes are 1..=K.
pub const BACKGROUND: usize = 0;

/// Ordered table of K foreground event class names.
///
/// Class id `i + 1` maps to `names[i]`; id 0 is the background class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventClassTable {
    names: Vec<String>,
}

impl EventClassTable {
    pub fn new(names: Vec<String>) -> crate::Result<Self> {
        if names.is_empty() {
            return Err(SpotError::invalid("class table must name at least one class"));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(SpotError::invalid(format!("class {} has an empty name", i)));
            }
            if names[..i].contains(n) {
                return Err(SpotError::invalid(format!("duplicate class name {:?}", n)));
            }
        }
        Ok(Self { names })
    }

    /// Number of foreground classes K.
    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Name of foreground class id (1-based).
    pub fn name_of(&self, class_id: usize) -> Option<&str> {
        if class_id == BACKGROUND {
            return None;
        }
        self.names.get(class_id - 1).map(|s| s.as_str())
    }

    /// 1-based class id for a name.
    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name).map(|i| i + 1)
    }
}

/// A video's identity, frame rate, length, and frame location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub id: String,
    pub fps: f64,
    pub num_frames: usize,
    pub frame_source: String,
}

impl VideoMeta {
    pub fn validate(&self) -> crate::Result<()> {
        if self.num_frames < 1 {
            return Err(SpotError::invalid(format!("video {}: num_frames must be >= 1", self.id)));
        }
        if !(self.fps > 0.0) {
            return Err(SpotError::invalid(format!("video {}: fps must be > 0", self.id)));
        }
        Ok(())
    }
}

/// One frame-accurate ground-truth event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLabel {
    pub video_id: String,
    pub frame: usize,
    /// Foreground class id in 1..=K.
    pub class_id: usize,
}

/// Per-frame hard class targets with a validity mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseLabelSeq {
    /// Class id per frame, 0 = background.
    pub labels: Vec<usize>,
    /// 1 = frame counts toward loss/inference, 0 = padding.
    pub mask: Vec<u8>,
}

impl DenseLabelSeq {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Per-frame class probability targets (after dilation/mixup) with a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelSeq {
    /// N x (K+1), row-stochastic on masked-in rows.
    pub dist: Array2<f32>,
    pub mask: Vec<u8>,
}

impl SoftLabelSeq {
    /// One-hot encode a dense sequence into K+1 columns.
    pub fn from_dense(dense: &DenseLabelSeq, num_classes: usize) -> Self {
        let n = dense.len();
        let mut dist = Array2::<f32>::zeros((n, num_classes + 1));
        for (t, &c) in dense.labels.iter().enumerate() {
            dist[[t, c]] = 1.0;
        }
        Self {
            dist,
            mask: dense.mask.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }
}

/// Per-frame (K+1)-way probabilities produced by the model; column 0 is
/// the background class.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeq {
    pub scores: Array2<f32>,
}

impl ScoreSeq {
    pub fn num_frames(&self) -> usize {
        self.scores.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.scores.ncols() - 1
    }
}

/// One detection candidate: the unit of NMS and AP matching.
#[derive(Debug, Clone, PartialEq)]
pub struct SpotPrediction {
    pub video_id: String,
    pub frame: usize,
    /// Foreground class id in 1..=K; never background.
    pub class_id: usize,
    pub score: f32,
}

/// Global tie ordering: descending score, then ascending frame, then
/// ascending class. Pinned so NMS, AP, and file output are reproducible.
pub fn prediction_order(a: &SpotPrediction, b: &SpotPrediction) -> std::cmp::Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then(a.frame.cmp(&b.frame))
        .then(a.class_id.cmp(&b.class_id))
}

/// Expand sparse events into a per-frame label sequence of length `num_frames`.
///
/// Frames without an event are background; the mask is all ones. Duplicate
/// event frames and out-of-range frames are hard errors.
pub fn densify(events: &[EventLabel], num_frames: usize, num_classes: usize) -> crate::Result<DenseLabelSeq> {
    let mut labels = vec![BACKGROUND; num_frames];
    let mut seen = vec![false; num_frames];
    for ev in events {
        if ev.frame >= num_frames {
            return Err(SpotError::EventOutOfRange {
                video: ev.video_id.clone(),
                frame: ev.frame,
                num_frames,
            });
        }
        if ev.class_id == BACKGROUND || ev.class_id > num_classes {
            return Err(SpotError::invalid(format!(
                "event at frame {} has class id {} outside 1..={}",
                ev.frame, ev.class_id, num_classes
            )));
        }
        if seen[ev.frame] {
            return Err(SpotError::DuplicateEventFrame {
                video: ev.video_id.clone(),
                frame: ev.frame,
            });
        }
        seen[ev.frame] = true;
        labels[ev.frame] = ev.class_id;
    }
    Ok(DenseLabelSeq {
        labels,
        mask: vec![1; num_frames],
    })
}

/// Propagate each event label to background frames within `radius`.
///
/// Original event frames keep their label. A background frame within reach
/// of several events takes the class of the nearest one; equidistant ties go
/// to the lower event frame index. Clipped at sequence boundaries.
pub fn dilate(dense: &DenseLabelSeq, radius: usize) -> DenseLabelSeq {
    let n = dense.len();
    let mut out = dense.clone();
    if radius == 0 {
        return out;
    }
    // (distance, event_frame) per target frame; event frames scanned in
    // ascending order, so strict improvement implements the tie rule.
    let mut best: Vec<Option<(usize, usize)>> = vec![None; n];
    for (ev_frame, &c) in dense.labels.iter().enumerate() {
        if c == BACKGROUND {
            continue;
        }
        let lo = ev_frame.saturating_sub(radius);
        let hi = (ev_frame + radius).min(n.saturating_sub(1));
        for t in lo..=hi {
            if dense.labels[t] != BACKGROUND {
                continue;
            }
            let d = ev_frame.abs_diff(t);
            let better = match best[t] {
                None => true,
                Some((bd, _)) => d < bd,
            };
            if better {
                best[t] = Some((d, ev_frame));
                out.labels[t] = c;
            }
        }
    }
    out
}

/// Per-class loss weights: background 1, every foreground class `fg_weight`.
pub fn class_weights(num_classes: usize, fg_weight: f32) -> crate::Result<Vec<f32>> {
    if num_classes == 0 {
        return Err(SpotError::invalid("class count must be >= 1"));
    }
    if !(fg_weight > 0.0) {
        return Err(SpotError::invalid("fg_weight must be > 0"));
    }
    let mut w = vec![fg_weight; num_classes + 1];
    w[0] = 1.0;
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(frame: usize, class_id: usize) -> EventLabel {
        EventLabel {
            video_id: "v".into(),
            frame,
            class_id,
        }
    }

    #[test]
    fn densify_empty() {
        let d = densify(&[], 5, 2).unwrap();
        assert_eq!(d.labels, vec![0, 0, 0, 0, 0]);
        assert_eq!(d.mask, vec![1; 5]);
    }

    #[test]
    fn densify_single_placement() {
        let d = densify(&[ev(3, 2)], 5, 2).unwrap();
        assert_eq!(d.labels, vec![0, 0, 0, 2, 0]);
    }

    #[test]
    fn densify_duplicate_frame_rejected() {
        let err = densify(&[ev(3, 1), ev(3, 2)], 5, 2).unwrap_err();
        assert!(matches!(err, SpotError::DuplicateEventFrame { frame: 3, .. }));
    }

    #[test]
    fn densify_out_of_range_rejected() {
        let err = densify(&[ev(5, 1)], 5, 2).unwrap_err();
        assert!(matches!(err, SpotError::EventOutOfRange { frame: 5, .. }));
    }

    #[test]
    fn dilate_radius_one() {
        let d = densify(&[ev(3, 1)], 7, 2).unwrap();
        assert_eq!(dilate(&d, 1).labels, vec![0, 0, 1, 1, 1, 0, 0]);
    }

    #[test]
    fn dilate_clips_at_boundary() {
        let d = densify(&[ev(0, 2)], 3, 2).unwrap();
        assert_eq!(dilate(&d, 1).labels, vec![2, 2, 0]);
    }

    #[test]
    fn dilate_tie_goes_to_earlier_event() {
        // Events A@2 (class 1), B@4 (class 2); frame 3 is equidistant.
        let d = densify(&[ev(2, 1), ev(4, 2)], 6, 2).unwrap();
        assert_eq!(dilate(&d, 1).labels, vec![0, 1, 1, 1, 2, 2]);
    }

    #[test]
    fn dilate_tie_rule_exhaustive_two_events() {
        // Brute-force oracle over all 6-frame two-event layouts: nearest
        // event wins, ties broken by the lower event frame.
        for a in 0..6usize {
            for b in (a + 1)..6 {
                let d = densify(&[ev(a, 1), ev(b, 2)], 6, 2).unwrap();
                let got = dilate(&d, 1);
                for t in 0..6 {
                    let expect = if t == a {
                        1
                    } else if t == b {
                        2
                    } else {
                        let da = a.abs_diff(t);
                        let db = b.abs_diff(t);
                        if da <= 1 && (da < db || (da == db)) {
                            1
                        } else if db <= 1 {
                            2
                        } else {
                            0
                        }
                    };
                    assert_eq!(got.labels[t], expect, "a={} b={} t={}", a, b, t);
                }
            }
        }
    }

    #[test]
    fn class_weights_examples() {
        assert_eq!(class_weights(2, 5.0).unwrap(), vec![1.0, 5.0, 5.0]);
        assert_eq!(class_weights(3, 1.0).unwrap(), vec![1.0, 1.0, 1.0, 1.0]);
        assert_eq!(class_weights(1, 2.5).unwrap(), vec![1.0, 2.5]);
        assert!(class_weights(0, 5.0).is_err());
    }

    #[test]
    fn class_table_rejects_duplicates_and_empty() {
        assert!(EventClassTable::new(vec![]).is_err());
        assert!(EventClassTable::new(vec!["a".into(), "a".into()]).is_err());
        assert!(EventClassTable::new(vec!["".into()]).is_err());
        let t = EventClassTable::new(vec!["x".into(), "y".into()]).unwrap();
        assert_eq!(t.num_classes(), 2);
        assert_eq!(t.id_of("y"), Some(2));
        assert_eq!(t.name_of(1), Some("x"));
        assert_eq!(t.name_of(0), None);
    }

    proptest! {
        #[test]
        fn densify_round_trips_events(frames in proptest::collection::btree_set(0usize..50, 0..8)) {
            let events: Vec<EventLabel> = frames.iter().enumerate()
                .map(|(i, &f)| ev(f, (i % 3) + 1))
                .collect();
            let d = densify(&events, 50, 3).unwrap();
            let recovered: Vec<(usize, usize)> = d.labels.iter().enumerate()
                .filter(|(_, &c)| c != BACKGROUND)
                .map(|(t, &c)| (t, c))
                .collect();
            let expect: Vec<(usize, usize)> = events.iter().map(|e| (e.frame, e.class_id)).collect();
            prop_assert_eq!(recovered, expect);
        }

        #[test]
        fn dilate_preserves_events_and_is_monotone(
            frames in proptest::collection::btree_set(0usize..40, 0..6),
            r in 0usize..5,
        ) {
            let events: Vec<EventLabel> = frames.iter().enumerate()
                .map(|(i, &f)| ev(f, (i % 2) + 1))
                .collect();
            let d = densify(&events, 40, 2).unwrap();
            let d_r = dilate(&d, r);
            let d_r1 = dilate(&d, r + 1);
            prop_assert_eq!(&dilate(&d, 0), &d);
            for t in 0..40 {
                if d.labels[t] != BACKGROUND {
                    prop_assert_eq!(d_r.labels[t], d.labels[t]);
                }
                if d_r.labels[t] != BACKGROUND {
                    prop_assert_ne!(d_r1.labels[t], BACKGROUND);
                }
            }
        }
    }
}
