//! End-to-end temporally precise event spotting in video.
//!
//! The pipeline has five stages:
//! 1. [`data`] — dataset manifests, clip sampling, augmentation, and a
//!    deterministic synthetic bouncing-ball benchmark generator.
//! 2. [`model`] — a residual 2D CNN with gate-shift (or temporal-shift)
//!    modules producing one feature vector per frame, followed by a
//!    bidirectional GRU head making a per-frame (K+1)-way prediction.
//! 3. [`training`] — weighted per-frame cross-entropy, warmup + cosine LR,
//!    AdamW, and cycle-based training with validation-mAP model selection.
//! 4. [`inference`] — overlapping-clip dense prediction, score averaging,
//!    candidate extraction, temporal NMS, and two-stream ensembling.
//! 5. [`evaluation`] — per-class average precision at a frame tolerance
//!    delta, mAP, tolerance sweeps in seconds, and PR curves.

pub mod core;
pub mod data;
pub mod evaluation;
pub mod inference;
pub mod model;
pub mod training;

pub use crate::core::SpotError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, SpotError>;
