//! Minimal neural-network plumbing: a float scalar abstraction, a flat
//! parameter store addressed by id, and weight initializers.
//!
//! Training runs in f32; gradient verification runs the same code in f64.

use ndarray::{Array2, ArrayD, ArrayViewD, ArrayViewMutD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Element type for all network math.
pub trait Scalar:
    ndarray::LinalgScalar
    + num_traits::Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    const DTYPE_TAG: u8;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_f32(v: f32) -> Self {
        Self::from_f64(v as f64)
    }
    fn to_f32(self) -> f32 {
        self.to_f64() as f32
    }
    fn from_le_slice(bytes: &[u8]) -> Vec<Self>;
    fn to_le_bytes_vec(vals: &[Self]) -> Vec<u8>;
}

impl Scalar for f32 {
    const DTYPE_TAG: u8 = 4;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_le_slice(bytes: &[u8]) -> Vec<Self> {
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    }
    fn to_le_bytes_vec(vals: &[Self]) -> Vec<u8> {
        let mut out = Vec::with_capacity(vals.len() * 4);
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

impl Scalar for f64 {
    const DTYPE_TAG: u8 = 8;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn from_le_slice(bytes: &[u8]) -> Vec<Self> {
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect()
    }
    fn to_le_bytes_vec(vals: &[Self]) -> Vec<u8> {
        let mut out = Vec::with_capacity(vals.len() * 8);
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

/// Handle to one named parameter array in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

pub(crate) struct ParamEntry<T> {
    pub name: String,
    pub value: ArrayD<T>,
    pub grad: ArrayD<T>,
    /// Whether decoupled weight decay applies (false for biases, gains,
    /// and recurrent matrices).
    pub decay: bool,
}

/// Flat registry of all learnable arrays of a model, with parallel
/// gradient buffers. Layers hold [`ParamId`]s into this store.
pub struct ParamStore<T> {
    pub(crate) entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<T>, decay: bool) -> ParamId {
        let grad = ArrayD::zeros(value.raw_dim());
        self.entries.push(ParamEntry {
            name: name.into(),
            value,
            grad,
            decay,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> ArrayViewD<'_, T> {
        self.entries[id.0].value.view()
    }

    pub fn value_mut(&mut self, id: ParamId) -> ArrayViewMutD<'_, T> {
        self.entries[id.0].value.view_mut()
    }

    pub fn grad(&self, id: ParamId) -> ArrayViewD<'_, T> {
        self.entries[id.0].grad.view()
    }

    pub fn grad_mut(&mut self, id: ParamId) -> ArrayViewMutD<'_, T> {
        self.entries[id.0].grad.view_mut()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(T::zero());
        }
    }

    /// Total scalar parameter count.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn value_2d(&self, id: ParamId) -> ndarray::ArrayView2<'_, T> {
        self.entries[id.0]
            .value
            .view()
            .into_dimensionality()
            .expect("parameter is not 2-d")
    }

    pub fn value_1d(&self, id: ParamId) -> ndarray::ArrayView1<'_, T> {
        self.entries[id.0]
            .value
            .view()
            .into_dimensionality()
            .expect("parameter is not 1-d")
    }
}

/// Rectifier-aware fan-in normal initialization.
pub fn kaiming<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, gain: f64) -> ArrayD<T> {
    let std = gain * (2.0 / fan_in as f64).sqrt();
    let normal = StandardNormal;
    ArrayD::from_shape_simple_fn(IxDyn(shape), || {
        let z: f64 = normal.sample(rng);
        T::from_f64(z * std)
    })
}

/// Orthogonal initialization for square recurrent matrices, via
/// Gram-Schmidt on a random normal matrix.
pub fn orthogonal<T: Scalar, R: Rng>(rng: &mut R, n: usize) -> Array2<T> {
    let normal = StandardNormal;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
        for u in &rows {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= dot * ui;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            for vi in &mut v {
                *vi /= norm;
            }
            rows.push(v);
        }
    }
    Array2::from_shape_fn((n, n), |(i, j)| T::from_f64(rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q: Array2<f64> = orthogonal(&mut rng, 16);
        let qt = q.t();
        let prod = q.dot(&qt);
        for i in 0..16 {
            for j in 0..16 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((prod[[i, j]] - expect).abs() < 1e-10, "({},{})", i, j);
            }
        }
    }

    #[test]
    fn store_roundtrip_and_grads() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("w", ArrayD::zeros(IxDyn(&[2, 3])), true);
        assert_eq!(store.name(id), "w");
        assert_eq!(store.num_scalars(), 6);
        store.grad_mut(id).fill(1.0);
        store.zero_grads();
        assert!(store.grad(id).iter().all(|&g| g == 0.0));
    }
}
