//! Training: weighted per-frame cross-entropy, AdamW with a warmup+cosine
//! schedule, cycle-based training with validation-mAP model selection, and
//! finite-difference gradient verification.

mod gradcheck;
mod loss;
mod optim;
mod train;

pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use loss::{per_frame_loss, per_frame_loss_with_grad, LossOutput};
pub use optim::{lr_at_step, AdamW};
pub use train::{evaluate_split_map, split_manifest, train, CycleLog, TrainConfig, TrainOutcome};
