//! Residual 2D CNN feature extractor with per-block shift modules.
//!
//! Every frame of a clip is processed exactly once; the time axis is never
//! pooled or strided. The shift modules (gate shift or temporal shift) are
//! the only temporal interaction and apply to each residual block's input
//! features.

use super::conv::{global_avg_pool, global_avg_pool_backward, relu_backward, relu_forward, Conv2d, Conv2dCache};
use super::nn::{ParamStore, Scalar};
use super::shift::{shift_channel_count, temporal_shift, temporal_shift_adjoint, GateShift, GateShiftCache};
use crate::core::SpotError;
use ndarray::{s, Array2, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftMode {
    Gsm,
    Tsm,
    None,
}

impl std::str::FromStr for ShiftMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gsm" => Ok(ShiftMode::Gsm),
            "tsm" => Ok(ShiftMode::Tsm),
            "none" => Ok(ShiftMode::None),
            other => Err(format!("unknown shift mode {:?} (expected gsm, tsm, or none)", other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub blocks: usize,
    pub channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stem_stride: usize,
    pub stages: Vec<StageConfig>,
    pub shift_mode: ShiftMode,
    /// Fraction of channels each shift module touches, as a rational.
    pub shift_fraction: (u32, u32),
}

impl BackboneConfig {
    /// Desk-scale default: a miniature residual net that trains in minutes
    /// on a single CPU core.
    pub fn tiny(in_channels: usize) -> Self {
        Self {
            in_channels,
            stem_channels: 16,
            stem_stride: 2,
            stages: vec![
                StageConfig { blocks: 1, channels: 16, stride: 2 },
                StageConfig { blocks: 2, channels: 32, stride: 2 },
                StageConfig { blocks: 2, channels: 64, stride: 2 },
                StageConfig { blocks: 1, channels: 128, stride: 2 },
            ],
            shift_mode: ShiftMode::Gsm,
            shift_fraction: (1, 4),
        }
    }

    /// Miniature of the RegNet-Y-200MF shape with a 368-dim output feature.
    pub fn small(in_channels: usize) -> Self {
        Self {
            in_channels,
            stem_channels: 32,
            stem_stride: 2,
            stages: vec![
                StageConfig { blocks: 1, channels: 32, stride: 2 },
                StageConfig { blocks: 2, channels: 64, stride: 2 },
                StageConfig { blocks: 2, channels: 128, stride: 2 },
                StageConfig { blocks: 1, channels: 368, stride: 2 },
            ],
            shift_mode: ShiftMode::Gsm,
            shift_fraction: (1, 4),
        }
    }

    /// Two-block model used by the double-precision gradient check.
    pub fn grad_check(in_channels: usize) -> Self {
        Self {
            in_channels,
            stem_channels: 8,
            stem_stride: 2,
            stages: vec![
                StageConfig { blocks: 1, channels: 16, stride: 2 },
                StageConfig { blocks: 1, channels: 32, stride: 2 },
            ],
            shift_mode: ShiftMode::Gsm,
            shift_fraction: (1, 4),
        }
    }

    /// Output feature dimension D after global spatial pooling.
    pub fn feature_dim(&self) -> usize {
        self.stages.last().map(|st| st.channels).unwrap_or(self.stem_channels)
    }

    /// Product of all spatial strides.
    pub fn total_stride(&self) -> usize {
        self.stem_stride * self.stages.iter().map(|st| st.stride).product::<usize>()
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.in_channels == 0 {
            return Err(SpotError::invalid("backbone needs at least one input channel"));
        }
        if self.stages.is_empty() {
            return Err(SpotError::invalid("backbone needs at least one stage"));
        }
        for st in &self.stages {
            if st.channels < 4 {
                return Err(SpotError::invalid("stage channel counts must be >= 4"));
            }
            if st.blocks == 0 || st.stride == 0 {
                return Err(SpotError::invalid("stage block count and stride must be >= 1"));
            }
        }
        let (num, den) = self.shift_fraction;
        if num == 0 || den == 0 || num > den {
            return Err(SpotError::invalid("shift_fraction must be in (0, 1]"));
        }
        Ok(())
    }
}

enum ShiftOp {
    Gsm(GateShift),
    Tsm,
    None,
}

enum ShiftCache<T> {
    Gsm(GateShiftCache<T>),
    Tsm,
    None,
}

struct ResBlock {
    shift: ShiftOp,
    shift_channels: usize,
    conv1: Conv2d,
    conv2: Conv2d,
    proj: Option<Conv2d>,
}

struct BlockCache<T> {
    shift: ShiftCache<T>,
    conv1: Conv2dCache<T>,
    conv2: Conv2dCache<T>,
    proj: Option<Conv2dCache<T>>,
    mask1: Vec<bool>,
    mask2: Vec<bool>,
}

impl ResBlock {
    fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        mode: ShiftMode,
        fraction: (u32, u32),
    ) -> Self {
        let shift_channels = match mode {
            ShiftMode::None => 0,
            _ => shift_channel_count(in_channels, fraction),
        };
        let shift = match mode {
            ShiftMode::Gsm => ShiftOp::Gsm(GateShift::new(store, rng, name, shift_channels)),
            ShiftMode::Tsm => ShiftOp::Tsm,
            ShiftMode::None => ShiftOp::None,
        };
        let conv1 = Conv2d::new(store, rng, &format!("{name}.conv1"), in_channels, out_channels, 3, stride, 1, 1.0);
        let conv2 = Conv2d::new(store, rng, &format!("{name}.conv2"), out_channels, out_channels, 3, 1, 1, 1.0);
        let proj = if in_channels != out_channels || stride != 1 {
            Some(Conv2d::new(store, rng, &format!("{name}.proj"), in_channels, out_channels, 1, stride, 0, 1.0))
        } else {
            None
        };
        Self {
            shift,
            shift_channels,
            conv1,
            conv2,
            proj,
        }
    }

    fn apply_shift<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        x: &Array4<T>,
    ) -> crate::Result<(Array4<T>, ShiftCache<T>)> {
        let cs = self.shift_channels;
        if cs == 0 {
            return Ok((x.clone(), ShiftCache::None));
        }
        let xs = x.slice(s![.., ..cs, .., ..]).to_owned();
        let (shifted, cache) = match &self.shift {
            ShiftOp::Gsm(gs) => {
                let (y, c) = gs.forward(store, &xs)?;
                (y, ShiftCache::Gsm(c))
            }
            ShiftOp::Tsm => (temporal_shift(&xs)?, ShiftCache::Tsm),
            ShiftOp::None => (xs, ShiftCache::None),
        };
        let mut out = x.clone();
        out.slice_mut(s![.., ..cs, .., ..]).assign(&shifted);
        Ok((out, cache))
    }

    fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Array4<T>) -> crate::Result<(Array4<T>, BlockCache<T>)> {
        let (x2, shift_cache) = self.apply_shift(store, x)?;
        let (mut h1, c1) = self.conv1.forward(store, &x2);
        let mask1 = relu_forward(&mut h1);
        let (h2, c2) = self.conv2.forward(store, &h1);
        let (skip, proj_cache) = match &self.proj {
            Some(p) => {
                let (sk, pc) = p.forward(store, &x2);
                (sk, Some(pc))
            }
            None => (x2.clone(), None),
        };
        let mut y = h2 + skip;
        let mask2 = relu_forward(&mut y);
        Ok((
            y,
            BlockCache {
                shift: shift_cache,
                conv1: c1,
                conv2: c2,
                proj: proj_cache,
                mask1,
                mask2,
            },
        ))
    }

    fn backward<T: Scalar>(&self, store: &mut ParamStore<T>, cache: &BlockCache<T>, dy: &Array4<T>) -> Array4<T> {
        let mut dsum = dy.clone();
        relu_backward(&mut dsum, &cache.mask2);
        let mut dh1 = self.conv2.backward(store, &cache.conv2, &dsum);
        relu_backward(&mut dh1, &cache.mask1);
        let mut dx2 = self.conv1.backward(store, &cache.conv1, &dh1);
        match (&self.proj, &cache.proj) {
            (Some(p), Some(pc)) => {
                dx2 += &p.backward(store, pc, &dsum);
            }
            _ => {
                dx2 += &dsum;
            }
        }
        let cs = self.shift_channels;
        if cs == 0 {
            return dx2;
        }
        let d_shifted = dx2.slice(s![.., ..cs, .., ..]).to_owned();
        let d_xs = match (&self.shift, &cache.shift) {
            (ShiftOp::Gsm(gs), ShiftCache::Gsm(gc)) => gs.backward(store, gc, &d_shifted),
            (ShiftOp::Tsm, _) => temporal_shift_adjoint(&d_shifted),
            _ => d_shifted,
        };
        let mut dx = dx2;
        dx.slice_mut(s![.., ..cs, .., ..]).assign(&d_xs);
        dx
    }
}

/// The feature extractor F: stem conv, residual stages, global spatial
/// average pooling. Output is one D-vector per frame.
pub struct Backbone {
    pub config: BackboneConfig,
    stem: Conv2d,
    blocks: Vec<ResBlock>,
}

pub struct BackboneCache<T> {
    stem: Conv2dCache<T>,
    stem_mask: Vec<bool>,
    blocks: Vec<BlockCache<T>>,
    final_spatial: (usize, usize),
}

impl Backbone {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, config: &BackboneConfig) -> crate::Result<Self> {
        config.validate()?;
        let stem = Conv2d::new(
            store,
            rng,
            "backbone.stem",
            config.in_channels,
            config.stem_channels,
            3,
            config.stem_stride,
            1,
            1.0,
        );
        let mut blocks = Vec::new();
        let mut in_ch = config.stem_channels;
        for (si, st) in config.stages.iter().enumerate() {
            for bi in 0..st.blocks {
                let stride = if bi == 0 { st.stride } else { 1 };
                let name = format!("backbone.s{si}.b{bi}");
                blocks.push(ResBlock::new(
                    store,
                    rng,
                    &name,
                    in_ch,
                    st.channels,
                    stride,
                    config.shift_mode,
                    config.shift_fraction,
                ));
                in_ch = st.channels;
            }
        }
        Ok(Self {
            config: config.clone(),
            stem,
            blocks,
        })
    }

    /// Number of residual blocks, which is also the temporal receptive
    /// radius in frames when a shift mode is active.
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn check_input(&self, h: usize, w: usize) -> crate::Result<()> {
        let ts = self.config.total_stride();
        if h % ts != 0 || w % ts != 0 {
            return Err(SpotError::invalid(format!(
                "input spatial size {}x{} is not divisible by the total stride {}",
                h, w, ts
            )));
        }
        Ok(())
    }

    /// (L, C, H, W) -> (L, D) features.
    pub fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        x: &Array4<T>,
    ) -> crate::Result<(Array2<T>, BackboneCache<T>)> {
        let (_l, c, h, w) = x.dim();
        if c != self.config.in_channels {
            return Err(SpotError::ShapeMismatch(format!(
                "backbone expects {} input channels, got {}",
                self.config.in_channels, c
            )));
        }
        self.check_input(h, w)?;
        let (mut act, stem_cache) = self.stem.forward(store, x);
        let stem_mask = relu_forward(&mut act);
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(store, &act)?;
            block_caches.push(cache);
            act = next;
        }
        let (_, _, fh, fw) = act.dim();
        let feats = global_avg_pool(&act);
        Ok((
            feats,
            BackboneCache {
                stem: stem_cache,
                stem_mask,
                blocks: block_caches,
                final_spatial: (fh, fw),
            },
        ))
    }

    pub fn backward<T: Scalar>(&self, store: &mut ParamStore<T>, cache: &BackboneCache<T>, dfeats: &Array2<T>) {
        let (fh, fw) = cache.final_spatial;
        let mut d = global_avg_pool_backward(dfeats, fh, fw);
        for (block, bc) in self.blocks.iter().zip(cache.blocks.iter()).rev() {
            d = block.backward(store, bc, &d);
        }
        relu_backward(&mut d, &cache.stem_mask);
        let _ = self.stem.backward(store, &cache.stem, &d);
    }
}
