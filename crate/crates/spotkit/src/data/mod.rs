//! Dataset handling: manifest ingestion, frame and flow I/O, clip sampling
//! with padding, training augmentations, and the synthetic benchmark
//! generator.

mod augment;
mod clip;
mod flow;
mod frames;
pub mod manifest;
mod synth;

pub use augment::{augment, AugmentConfig};
pub use clip::{clip_at, mixup, sample_clip, Clip};
pub use flow::{flow_path, load_video_flow, read_flow, write_flow, FLOW_MAGIC, FLOW_VERSION};
pub use frames::{load_video_frames, read_frame, write_frame, FrameCache, VideoFrames};
pub use manifest::{load_manifest, save_manifest, DatasetManifest, Split, VideoEntry};
pub use synth::{generate_synthetic, render_frame, simulate_video, SyntheticConfig, Trajectory, SYNTH_CLASS_NAMES};
