//! Per-frame classification heads: 1-layer bidirectional GRU (default),
//! a 3-layer stack, a multi-scale GRU variant, and a per-frame linear
//! ablation head. All heads output raw logits of shape (L, K+1).

use super::gru::{
    max_pool_time, max_pool_time_backward, upsample_repeat, upsample_repeat_backward, BiGru, BiGruCache, Linear,
    LinearCache,
};
use super::nn::{ParamStore, Scalar};
use crate::core::SpotError;
use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Bigru,
    BigruDeep3,
    Grustar,
    Linear,
}

impl std::str::FromStr for HeadKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bigru" => Ok(HeadKind::Bigru),
            "bigru_deep3" => Ok(HeadKind::BigruDeep3),
            "grustar" => Ok(HeadKind::Grustar),
            "linear" => Ok(HeadKind::Linear),
            other => Err(format!(
                "unknown head {:?} (expected bigru, bigru_deep3, grustar, or linear)",
                other
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub kind: HeadKind,
    /// Hidden dimension; by convention equal to the backbone feature dim.
    pub hidden: usize,
    /// Foreground class count K; the head predicts K+1 ways.
    pub num_classes: usize,
    pub grustar_scales: Vec<usize>,
}

impl HeadConfig {
    pub fn new(kind: HeadKind, hidden: usize, num_classes: usize) -> Self {
        Self {
            kind,
            hidden,
            num_classes,
            grustar_scales: vec![4, 16],
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.hidden == 0 {
            return Err(SpotError::invalid("head hidden dimension must be > 0"));
        }
        if self.num_classes == 0 {
            return Err(SpotError::invalid("head needs at least one foreground class"));
        }
        if self.kind == HeadKind::Grustar {
            let mut prev = 1usize;
            for &sc in &self.grustar_scales {
                if sc < 2 || sc <= prev {
                    return Err(SpotError::invalid(
                        "grustar scales must be >= 2 and strictly increasing",
                    ));
                }
                prev = sc;
            }
        }
        Ok(())
    }
}

struct ScalePath {
    proj: Linear,
    gru: BiGru,
    scale: usize,
}

pub struct Head {
    pub config: HeadConfig,
    base_gru: Option<BiGru>,
    extra_grus: Vec<BiGru>, // layers 2..3 for the deep variant
    scale_paths: Vec<ScalePath>,
    out: Linear,
}

struct ScalePathCache<T> {
    proj: LinearCache<T>,
    relu_mask: Vec<bool>,
    pool_idx: Array2<usize>,
    gru: BiGruCache<T>,
    pooled_len: usize,
}

pub struct HeadCache<T> {
    base: Option<BiGruCache<T>>,
    extra: Vec<BiGruCache<T>>,
    scales: Vec<ScalePathCache<T>>,
    out: LinearCache<T>,
    seq_len: usize,
}

impl Head {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        feature_dim: usize,
        config: &HeadConfig,
    ) -> crate::Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let k1 = config.num_classes + 1;
        let (base_gru, extra_grus, scale_paths, out) = match config.kind {
            HeadKind::Linear => (
                None,
                Vec::new(),
                Vec::new(),
                Linear::new(store, rng, "head.out", feature_dim, k1),
            ),
            HeadKind::Bigru => (
                Some(BiGru::new(store, rng, "head.gru0", feature_dim, h)),
                Vec::new(),
                Vec::new(),
                Linear::new(store, rng, "head.out", 2 * h, k1),
            ),
            HeadKind::BigruDeep3 => {
                let g0 = BiGru::new(store, rng, "head.gru0", feature_dim, h);
                let g1 = BiGru::new(store, rng, "head.gru1", 2 * h, h);
                let g2 = BiGru::new(store, rng, "head.gru2", 2 * h, h);
                (
                    Some(g0),
                    vec![g1, g2],
                    Vec::new(),
                    Linear::new(store, rng, "head.out", 2 * h, k1),
                )
            }
            HeadKind::Grustar => {
                let g0 = BiGru::new(store, rng, "head.gru0", feature_dim, h);
                let mut paths = Vec::new();
                for (i, &sc) in config.grustar_scales.iter().enumerate() {
                    paths.push(ScalePath {
                        proj: Linear::new(store, rng, &format!("head.scale{i}.proj"), feature_dim, h),
                        gru: BiGru::new(store, rng, &format!("head.scale{i}.gru"), h, h),
                        scale: sc,
                    });
                }
                let width = 2 * h * (1 + config.grustar_scales.len());
                (
                    Some(g0),
                    Vec::new(),
                    paths,
                    Linear::new(store, rng, "head.out", width, k1),
                )
            }
        };
        Ok(Self {
            config: config.clone(),
            base_gru,
            extra_grus,
            scale_paths,
            out,
        })
    }

    /// (L, D) features -> (L, K+1) logits.
    pub fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        features: &Array2<T>,
    ) -> crate::Result<(Array2<T>, HeadCache<T>)> {
        let l = features.nrows();
        let mut base_cache = None;
        let mut extra_caches = Vec::new();
        let mut scale_caches = Vec::new();

        let hidden_out: Array2<T> = match self.config.kind {
            HeadKind::Linear => features.clone(),
            HeadKind::Bigru | HeadKind::BigruDeep3 => {
                let gru = self.base_gru.as_ref().unwrap();
                let (mut hseq, c0) = gru.forward(store, features);
                base_cache = Some(c0);
                for g in &self.extra_grus {
                    let (next, c) = g.forward(store, &hseq);
                    extra_caches.push(c);
                    hseq = next;
                }
                hseq
            }
            HeadKind::Grustar => {
                let gru = self.base_gru.as_ref().unwrap();
                let (base, c0) = gru.forward(store, features);
                base_cache = Some(c0);
                let mut parts = vec![base];
                for path in &self.scale_paths {
                    let (mut a, pc) = path.proj.forward(store, features);
                    let mut mask = vec![false; a.len()];
                    for (v, m) in a.as_slice_mut().unwrap().iter_mut().zip(mask.iter_mut()) {
                        if *v > T::zero() {
                            *m = true;
                        } else {
                            *v = T::zero();
                        }
                    }
                    let (pooled, idx) = max_pool_time(&a, path.scale);
                    let pooled_len = pooled.nrows();
                    let (g, gc) = path.gru.forward(store, &pooled);
                    let up = upsample_repeat(&g, path.scale, l);
                    parts.push(up);
                    scale_caches.push(ScalePathCache {
                        proj: pc,
                        relu_mask: mask,
                        pool_idx: idx,
                        gru: gc,
                        pooled_len,
                    });
                }
                let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
                concatenate(Axis(1), &views).unwrap()
            }
        };
        let (logits, out_cache) = self.out.forward(store, &hidden_out);
        Ok((
            logits,
            HeadCache {
                base: base_cache,
                extra: extra_caches,
                scales: scale_caches,
                out: out_cache,
                seq_len: l,
            },
        ))
    }

    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        cache: &HeadCache<T>,
        dlogits: &Array2<T>,
    ) -> Array2<T> {
        let dhidden = self.out.backward(store, &cache.out, dlogits);
        match self.config.kind {
            HeadKind::Linear => dhidden,
            HeadKind::Bigru | HeadKind::BigruDeep3 => {
                let mut d = dhidden;
                for (g, c) in self.extra_grus.iter().zip(cache.extra.iter()).rev() {
                    d = g.backward(store, c, &d);
                }
                self.base_gru
                    .as_ref()
                    .unwrap()
                    .backward(store, cache.base.as_ref().unwrap(), &d)
            }
            HeadKind::Grustar => {
                let h2 = 2 * self.config.hidden;
                let d_base = dhidden.slice(s![.., ..h2]).to_owned();
                let mut dfeat = self
                    .base_gru
                    .as_ref()
                    .unwrap()
                    .backward(store, cache.base.as_ref().unwrap(), &d_base);
                for (i, (path, pc)) in self.scale_paths.iter().zip(cache.scales.iter()).enumerate() {
                    let lo = h2 * (i + 1);
                    let d_up = dhidden.slice(s![.., lo..lo + h2]).to_owned();
                    let d_g = upsample_repeat_backward(&d_up, path.scale, pc.pooled_len);
                    let d_pooled = path.gru.backward(store, &pc.gru, &d_g);
                    let mut d_a = max_pool_time_backward(&d_pooled, &pc.pool_idx, cache.seq_len);
                    for (v, &m) in d_a.as_slice_mut().unwrap().iter_mut().zip(pc.relu_mask.iter()) {
                        if !m {
                            *v = T::zero();
                        }
                    }
                    dfeat += &path.proj.backward(store, &pc.proj, &d_a);
                }
                dfeat
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(kind: HeadKind, d: usize, k: usize) -> (ParamStore<f64>, Head) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = HeadConfig::new(kind, d, k);
        let head = Head::new(&mut store, &mut rng, d, &cfg).unwrap();
        (store, head)
    }

    fn rand_feats(l: usize, d: usize, seed: u64) -> Array2<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((l, d), |_| rng.gen::<f64>() - 0.5)
    }

    #[test]
    fn bigru_shape_contract() {
        let (store, head) = build(HeadKind::Bigru, 6, 3);
        let x = rand_feats(100, 6, 1);
        let (y, _) = head.forward(&store, &x).unwrap();
        assert_eq!(y.dim(), (100, 4));
    }

    #[test]
    fn linear_head_is_per_frame_pure() {
        let (store, head) = build(HeadKind::Linear, 5, 2);
        let x = rand_feats(10, 5, 2);
        let (y, _) = head.forward(&store, &x).unwrap();
        let mut xp = x.clone();
        xp[[3, 1]] += 1.0;
        let (yp, _) = head.forward(&store, &xp).unwrap();
        for t in 0..10 {
            let changed = (0..3).any(|j| (y[[t, j]] - yp[[t, j]]).abs() > 1e-12);
            assert_eq!(changed, t == 3, "t={}", t);
        }
    }

    #[test]
    fn bigru_propagates_information_end_to_end() {
        let (store, head) = build(HeadKind::Bigru, 5, 2);
        let l = 20;
        let x = rand_feats(l, 5, 3);
        let (y, _) = head.forward(&store, &x).unwrap();
        let mut xp = x.clone();
        xp[[0, 0]] += 0.5;
        let (yp, _) = head.forward(&store, &xp).unwrap();
        let delta: f64 = (0..3).map(|j| (y[[l - 1, j]] - yp[[l - 1, j]]).abs()).sum();
        assert!(delta > 1e-9, "perturbing frame 0 should reach the last row");
    }

    #[test]
    fn grustar_pooling_counts() {
        let (store, head) = build(HeadKind::Grustar, 4, 2);
        let x = rand_feats(100, 4, 4);
        let (y, cache) = head.forward(&store, &x).unwrap();
        assert_eq!(y.dim(), (100, 3));
        assert_eq!(cache.scales[0].pooled_len, 25); // ceil(100/4)
        assert_eq!(cache.scales[1].pooled_len, 7); // ceil(100/16)
    }

    #[test]
    fn grustar_empty_scales_reduces_to_bigru_shape() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut cfg = HeadConfig::new(HeadKind::Grustar, 4, 2);
        cfg.grustar_scales = vec![];
        let head = Head::new(&mut store, &mut rng, 4, &cfg).unwrap();
        let x = rand_feats(12, 4, 5);
        let (y, _) = head.forward(&store, &x).unwrap();
        assert_eq!(y.dim(), (12, 3));
    }

    #[test]
    fn head_backward_matches_finite_differences() {
        for kind in [HeadKind::Bigru, HeadKind::BigruDeep3, HeadKind::Grustar, HeadKind::Linear] {
            let (mut store, head) = build(kind, 4, 2);
            let x = rand_feats(9, 4, 6);
            let (y, cache) = head.forward(&store, &x).unwrap();
            let dy = y.mapv(|v| 2.0 * v);
            store.zero_grads();
            let dx = head.backward(&mut store, &cache, &dy);
            let eps = 1e-6;
            for idx in [(0usize, 0usize), (4, 3), (8, 1)] {
                let mut xp = x.clone();
                xp[idx] += eps;
                let mut xm = x.clone();
                xm[idx] -= eps;
                let (yp, _) = head.forward(&store, &xp).unwrap();
                let (ym, _) = head.forward(&store, &xm).unwrap();
                let num = (yp.mapv(|v| v * v).sum() - ym.mapv(|v| v * v).sum()) / (2.0 * eps);
                assert!(
                    (dx[idx] - num).abs() < 1e-5,
                    "{:?} dx {:?}: {} vs {}",
                    kind,
                    idx,
                    dx[idx],
                    num
                );
            }
        }
    }

    #[test]
    fn grustar_scale_validation() {
        let mut cfg = HeadConfig::new(HeadKind::Grustar, 4, 2);
        cfg.grustar_scales = vec![4, 4];
        assert!(cfg.validate().is_err());
        cfg.grustar_scales = vec![1];
        assert!(cfg.validate().is_err());
        cfg.grustar_scales = vec![2, 8];
        assert!(cfg.validate().is_ok());
    }
}
