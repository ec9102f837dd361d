//! The cycle-based training loop with per-cycle validation-mAP model
//! selection.

use crate::core::{class_weights, densify, dilate, DenseLabelSeq, SpotError};
use crate::data::{augment, mixup, sample_clip, AugmentConfig, DatasetManifest, FrameCache, Split};
use crate::evaluation::map_at_deltas;
use crate::inference::{infer_scores, scores_to_predictions};
use crate::model::{checkpoint_bytes, frames_to_input, load_checkpoint_bytes, Scalar, SpotModel};
use crate::training::loss::per_frame_loss_with_grad;
use crate::training::optim::{lr_at_step, AdamW};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub clip_len: usize,
    pub batch_clips: usize,
    pub steps_per_cycle: usize,
    pub num_cycles: usize,
    pub base_lr: f64,
    pub warmup_cycles: usize,
    pub weight_decay: f64,
    pub fg_weight: f32,
    /// Label dilation radius in frames (0 disables).
    pub dilate_radius: usize,
    pub augment: AugmentConfig,
    pub seed: u64,
    /// When set, the whole run is a pure function of (data, config, seed).
    pub deterministic: bool,
    /// Print one progress line per cycle to stderr.
    #[serde(default)]
    pub progress: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            clip_len: 100,
            batch_clips: 8,
            steps_per_cycle: 625,
            num_cycles: 50,
            base_lr: 1e-3,
            warmup_cycles: 3,
            weight_decay: 1e-4,
            fg_weight: 5.0,
            dilate_radius: 0,
            augment: AugmentConfig::default(),
            seed: 0,
            deterministic: true,
            progress: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.clip_len < 2 || self.clip_len % 2 != 0 {
            return Err(SpotError::invalid("clip_len must be even and >= 2"));
        }
        if self.batch_clips == 0 || self.steps_per_cycle == 0 || self.num_cycles == 0 {
            return Err(SpotError::invalid("batch_clips, steps_per_cycle, num_cycles must be >= 1"));
        }
        if self.warmup_cycles >= self.num_cycles {
            return Err(SpotError::invalid("warmup_cycles must be < num_cycles"));
        }
        if !(self.base_lr > 0.0) {
            return Err(SpotError::invalid("base_lr must be > 0"));
        }
        if !(self.fg_weight > 0.0) {
            return Err(SpotError::invalid("fg_weight must be > 0"));
        }
        self.augment.validate()
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleLog {
    pub cycle: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub val_map: f64,
}

/// The result of a run: the best checkpoint (by validation mAP@1) and the
/// per-cycle log. The passed-in model is left at its best-cycle weights.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<CycleLog>,
    pub best_cycle: usize,
    pub best_val_map: f64,
    pub best_checkpoint: Vec<u8>,
}

/// Manifest restricted to one split (videos and their events).
pub fn split_manifest(manifest: &DatasetManifest, split: Split) -> crate::Result<DatasetManifest> {
    let videos: Vec<_> = manifest.videos.iter().filter(|v| v.split == split).cloned().collect();
    let ids: std::collections::HashSet<&str> = videos.iter().map(|v| v.meta.id.as_str()).collect();
    let events = manifest
        .events
        .iter()
        .filter(|e| ids.contains(e.video_id.as_str()))
        .cloned()
        .collect();
    DatasetManifest::new(manifest.class_table.clone(), videos, events)
}

/// Validation mAP at δ=1 (no NMS) over one split.
pub fn evaluate_split_map<T: Scalar>(
    model: &SpotModel<T>,
    manifest: &DatasetManifest,
    split: Split,
    clip_len: usize,
    cache: &FrameCache,
) -> crate::Result<f64> {
    let sub = split_manifest(manifest, split)?;
    if sub.videos.is_empty() {
        return Err(SpotError::invalid(format!("manifest has no {} videos", split)));
    }
    let mut preds = Vec::new();
    for v in &sub.videos {
        let frames = cache.get(&v.meta.frame_source, v.meta.num_frames)?;
        let input = frames_to_input::<T>(&frames.clip_f32(0, v.meta.num_frames).view());
        let (scores, _) = infer_scores(model, &input, clip_len)?;
        preds.extend(scores_to_predictions(&scores, &v.meta.id, 0.0));
    }
    let report = map_at_deltas(&preds, &sub, &[1], None)?;
    Ok(report.map_by_delta[0])
}

struct TrainVideo {
    frames: Arc<crate::data::VideoFrames>,
    dense: DenseLabelSeq,
    id: String,
}

/// Run the training loop. Returns the per-cycle log and the best
/// checkpoint; the model ends at the best cycle's parameters.
pub fn train<T: Scalar>(
    manifest: &DatasetManifest,
    model: &mut SpotModel<T>,
    config: &TrainConfig,
) -> crate::Result<TrainOutcome> {
    config.validate()?;
    let k = manifest.class_table.num_classes();
    if model.num_classes() != k {
        return Err(SpotError::invalid(format!(
            "model predicts {} classes but the manifest defines {}",
            model.num_classes(),
            k
        )));
    }
    let cache = FrameCache::new();
    let train_videos: Vec<TrainVideo> = manifest
        .videos_in_split(Split::Train)
        .into_iter()
        .map(|v| -> crate::Result<TrainVideo> {
            let dense = densify(&manifest.events_for_video(&v.meta.id), v.meta.num_frames, k)?;
            let dense = if config.dilate_radius > 0 {
                dilate(&dense, config.dilate_radius)
            } else {
                dense
            };
            Ok(TrainVideo {
                frames: cache.get(&v.meta.frame_source, v.meta.num_frames)?,
                dense,
                id: v.meta.id.clone(),
            })
        })
        .collect::<crate::Result<_>>()?;
    if train_videos.is_empty() {
        return Err(SpotError::invalid("manifest has no train videos"));
    }
    if manifest.videos_in_split(Split::Val).is_empty() {
        return Err(SpotError::invalid("manifest has no val videos"));
    }

    let weights = class_weights(k, config.fg_weight)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt: AdamW<T> = AdamW::new(&model.store, config.weight_decay);
    let total_steps = config.num_cycles * config.steps_per_cycle;
    let warmup_steps = config.warmup_cycles * config.steps_per_cycle;
    let mixup_beta = if config.augment.mixup_alpha > 0.0 {
        Some(
            Beta::new(config.augment.mixup_alpha as f64, config.augment.mixup_alpha as f64)
                .map_err(|e| SpotError::invalid(format!("bad mixup alpha: {e}")))?,
        )
    } else {
        None
    };

    model.meta.train_config = Some(
        serde_json::to_value(config).map_err(|e| SpotError::invalid(format!("config echo: {e}")))?,
    );

    let mut log = Vec::with_capacity(config.num_cycles);
    let mut best_cycle = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    let mut best_ckpt: Vec<u8> = Vec::new();
    let batch_scale = T::from_f64(1.0 / config.batch_clips as f64);

    let draw_clip = |rng: &mut ChaCha8Rng| -> crate::Result<crate::data::Clip> {
        let v = &train_videos[rng.gen_range(0..train_videos.len())];
        let clip = sample_clip(&v.frames, &v.id, &v.dense, k, config.clip_len, rng)?;
        augment(&clip, &config.augment, rng)
    };

    for cycle in 0..config.num_cycles {
        let mut cycle_loss = 0.0f64;
        let mut last_lr = 0.0f64;
        for s in 0..config.steps_per_cycle {
            let step = cycle * config.steps_per_cycle + s;
            let lr = lr_at_step(step, config.base_lr, warmup_steps, total_steps)?;
            last_lr = lr;
            model.store.zero_grads();
            let mut batch_loss = 0.0f64;
            for _ in 0..config.batch_clips {
                let mut clip = draw_clip(&mut rng)?;
                if let Some(beta) = &mixup_beta {
                    let lambda = beta.sample(&mut rng) as f32;
                    let other = draw_clip(&mut rng)?;
                    clip = mixup(&clip, &other, lambda)?;
                }
                let input = frames_to_input::<T>(&clip.frames.view());
                let (logits, fwd_cache) = model.forward_logits(&input)?;
                let out = per_frame_loss_with_grad(&logits, &clip.labels, &weights)?;
                let loss = out.loss.to_f64();
                if !loss.is_finite() {
                    return Err(SpotError::Diverged { step });
                }
                batch_loss += loss / config.batch_clips as f64;
                model.backward(&fwd_cache, &out.dlogits.mapv(|g| g * batch_scale));
            }
            opt.step(&mut model.store, lr);
            cycle_loss += batch_loss / config.steps_per_cycle as f64;
        }
        let val_map = evaluate_split_map(model, manifest, Split::Val, config.clip_len, &cache)?;
        if config.progress {
            eprintln!(
                "cycle {}/{}: mean_loss={:.4} lr={:.6} val_mAP@1={:.4}",
                cycle + 1,
                config.num_cycles,
                cycle_loss,
                last_lr,
                val_map
            );
        }
        model.meta.cycle = cycle;
        log.push(CycleLog {
            cycle,
            mean_loss: cycle_loss,
            lr: last_lr,
            val_map,
        });
        if val_map > best_val {
            best_val = val_map;
            best_cycle = cycle;
            model.meta.best_val_map = val_map;
            best_ckpt = checkpoint_bytes(model)?;
        }
    }
    // leave the model at its best weights
    *model = load_checkpoint_bytes(&best_ckpt)?;
    Ok(TrainOutcome {
        log,
        best_cycle,
        best_val_map: best_val,
        best_checkpoint: best_ckpt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, load_manifest, SyntheticConfig};
    use crate::model::{BackboneConfig, HeadConfig, HeadKind};

    fn tiny_dataset(dir: &std::path::Path) -> DatasetManifest {
        let config = SyntheticConfig {
            num_videos: 5,
            frames_per_video: 40,
            seed: 3,
            ..SyntheticConfig::default()
        };
        generate_synthetic(&config, dir).unwrap();
        load_manifest(dir.join("manifest.json")).unwrap()
    }

    fn smoke_config() -> TrainConfig {
        TrainConfig {
            clip_len: 8,
            batch_clips: 1,
            steps_per_cycle: 2,
            num_cycles: 2,
            warmup_cycles: 1,
            augment: AugmentConfig::none(64),
            seed: 1,
            ..TrainConfig::default()
        }
    }

    fn tiny_model(seed: u64) -> SpotModel<f32> {
        let bb = BackboneConfig::grad_check(3);
        let head = HeadConfig::new(HeadKind::Linear, bb.feature_dim(), 3);
        SpotModel::new(&bb, &head, seed).unwrap()
    }

    #[test]
    fn smoke_run_returns_log_and_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny_dataset(dir.path());
        let mut model = tiny_model(0);
        let out = train(&m, &mut model, &smoke_config()).unwrap();
        assert_eq!(out.log.len(), 2);
        assert!(!out.best_checkpoint.is_empty());
        assert!(out.log.iter().all(|r| r.mean_loss.is_finite() && r.lr > 0.0));
        // config echoed into the model
        assert!(model.meta.train_config.is_some());
        // model is at the best-cycle weights
        assert_eq!(model.meta.best_val_map, out.best_val_map);
    }

    #[test]
    fn deterministic_runs_are_identical() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny_dataset(dir.path());
        let mut a = tiny_model(0);
        let mut b = tiny_model(0);
        let out_a = train(&m, &mut a, &smoke_config()).unwrap();
        let out_b = train(&m, &mut b, &smoke_config()).unwrap();
        assert_eq!(out_a.log, out_b.log);
        assert_eq!(out_a.best_checkpoint, out_b.best_checkpoint);
    }

    #[test]
    fn missing_splits_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = tiny_dataset(dir.path());
        for v in &mut m.videos {
            v.split = Split::Train;
        }
        let mut model = tiny_model(0);
        let err = train(&m, &mut model, &smoke_config()).unwrap_err();
        assert!(err.to_string().contains("val"), "{err}");
        for v in &mut m.videos {
            v.split = Split::Test;
        }
        let err = train(&m, &mut model, &smoke_config()).unwrap_err();
        assert!(err.to_string().contains("train"), "{err}");
    }

    #[test]
    fn class_count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny_dataset(dir.path());
        let bb = BackboneConfig::grad_check(3);
        let head = HeadConfig::new(HeadKind::Linear, bb.feature_dim(), 2);
        let mut model: SpotModel<f32> = SpotModel::new(&bb, &head, 0).unwrap();
        assert!(train(&m, &mut model, &smoke_config()).is_err());
    }

    #[test]
    fn mixup_and_dilation_paths_run() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny_dataset(dir.path());
        let mut model = tiny_model(0);
        let mut cfg = smoke_config();
        cfg.dilate_radius = 1;
        cfg.augment.mixup_alpha = 0.2;
        let out = train(&m, &mut model, &cfg).unwrap();
        assert_eq!(out.log.len(), 2);
    }
}
