//! The end-to-end network: feature extractor F (residual 2D CNN with
//! gate-shift or temporal-shift modules) composed with head G
//! (bidirectional GRU variants + per-frame classifier).

mod backbone;
mod checkpoint;
mod conv;
mod gru;
mod head;
pub(crate) mod nn;
mod shift;

pub use backbone::{Backbone, BackboneConfig, ShiftMode, StageConfig};
pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, load_checkpoint_bytes, peek_checkpoint_config, save_checkpoint,
    CheckpointConfig, CHECKPOINT_VERSION,
};
pub use head::{Head, HeadConfig, HeadKind};
pub use nn::{ParamId, ParamStore, Scalar};
pub use shift::{shift_channel_count, temporal_shift, temporal_shift_adjoint, GateShift};

use crate::core::{ScoreSeq, SpotError};
use ndarray::{Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Training metadata carried inside a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainMeta {
    pub cycle: usize,
    pub best_val_map: f64,
    /// The training configuration serialized verbatim, when trained.
    pub train_config: Option<serde_json::Value>,
}

/// The full spotting model: backbone + head over one parameter store.
pub struct SpotModel<T: Scalar> {
    // Debug by hand: the parameter store is too large to dump.
    pub backbone: Backbone,
    pub head: Head,
    pub store: ParamStore<T>,
    pub meta: TrainMeta,
}

pub struct ModelCache<T> {
    backbone: backbone::BackboneCache<T>,
    head: head::HeadCache<T>,
}

impl<T: Scalar> std::fmt::Debug for SpotModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpotModel")
            .field("backbone", &self.backbone.config)
            .field("head", &self.head.config)
            .field("params", &self.store.num_scalars())
            .finish()
    }
}

impl<T: Scalar> SpotModel<T> {
    pub fn new(backbone_config: &BackboneConfig, head_config: &HeadConfig, seed: u64) -> crate::Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = Backbone::new(&mut store, &mut rng, backbone_config)?;
        let head = Head::new(&mut store, &mut rng, backbone_config.feature_dim(), head_config)?;
        Ok(Self {
            backbone,
            head,
            store,
            meta: TrainMeta::default(),
        })
    }

    pub fn backbone_config(&self) -> &BackboneConfig {
        &self.backbone.config
    }

    pub fn head_config(&self) -> &HeadConfig {
        &self.head.config
    }

    pub fn num_classes(&self) -> usize {
        self.head.config.num_classes
    }

    /// Dense per-frame features: (L, C, H, W) -> (L, D).
    pub fn extract_features(&self, frames: &Array4<T>) -> crate::Result<Array2<T>> {
        let (f, _) = self.backbone.forward(&self.store, frames)?;
        Ok(f)
    }

    /// Full forward returning raw logits plus the caches needed by
    /// [`SpotModel::backward`].
    pub fn forward_logits(&self, frames: &Array4<T>) -> crate::Result<(Array2<T>, ModelCache<T>)> {
        let (feats, bc) = self.backbone.forward(&self.store, frames)?;
        let (logits, hc) = self.head.forward(&self.store, &feats)?;
        Ok((logits, ModelCache { backbone: bc, head: hc }))
    }

    /// Accumulate parameter gradients for a given logit gradient.
    pub fn backward(&mut self, cache: &ModelCache<T>, dlogits: &Array2<T>) {
        let dfeats = self.head.backward(&mut self.store, &cache.head, dlogits);
        self.backbone.backward(&mut self.store, &cache.backbone, &dfeats);
    }

    /// Softmax over the logits, as an f32 probability sequence.
    pub fn forward_scores(&self, frames: &Array4<T>) -> crate::Result<ScoreSeq> {
        let (logits, _) = self.forward_logits(frames)?;
        Ok(softmax_scores(&logits))
    }
}

/// Row-wise softmax of a logit matrix into an f32 [`ScoreSeq`].
pub fn softmax_scores<T: Scalar>(logits: &Array2<T>) -> ScoreSeq {
    let (l, k1) = logits.dim();
    let mut scores = Array2::<f32>::zeros((l, k1));
    for (t, row) in logits.rows().into_iter().enumerate() {
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).to_f64().exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (j, e) in exps.iter().enumerate() {
            scores[[t, j]] = (e / sum) as f32;
        }
    }
    ScoreSeq { scores }
}

/// Convert a clip's (L, H, W, 3) pixel array into the model's (L, C, H, W)
/// input layout.
pub fn frames_to_input<T: Scalar>(frames: &ndarray::ArrayView4<'_, f32>) -> Array4<T> {
    let (l, h, w, c) = frames.dim();
    let mut out = Array4::<T>::zeros((l, c, h, w));
    for t in 0..l {
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    out[[t, ch, i, j]] = T::from_f32(frames[[t, i, j, ch]]);
                }
            }
        }
    }
    out
}

impl SpotError {
    pub(crate) fn checkpoint(msg: impl Into<String>) -> Self {
        SpotError::Checkpoint(msg.into())
    }
}
