//! Gated recurrent units (single direction and bidirectional), linear
//! layers, and the small sequence ops used by the multi-scale head.
//!
//! Gate layout in the stacked weight matrices is (reset, update, new),
//! with the candidate computed as n = tanh(Wn x + bn + r .* (Un h + un)).

use super::nn::{kaiming, orthogonal, ParamId, ParamStore, Scalar};
use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

#[derive(Debug, Clone)]
pub struct GruDirection {
    pub w_ih: ParamId, // (3H, D)
    pub w_hh: ParamId, // (3H, H)
    pub b_ih: ParamId, // (3H)
    pub b_hh: ParamId, // (3H)
    pub input_dim: usize,
    pub hidden: usize,
    pub reverse: bool,
}

pub struct GruCache<T> {
    input: Array2<T>,
    r: Array2<T>,
    z: Array2<T>,
    n: Array2<T>,
    /// Un h_prev + un, the recurrent candidate pre-activation.
    m: Array2<T>,
    /// Hidden states in iteration order, h[t] is the state *after* step t.
    h: Array2<T>,
}

impl GruDirection {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        input_dim: usize,
        hidden: usize,
        reverse: bool,
    ) -> Self {
        let w_ih = store.add(
            format!("{name}.w_ih"),
            kaiming(rng, &[3 * hidden, input_dim], input_dim, 1.0),
            true,
        );
        // Orthogonal blocks per gate.
        let mut u = Array2::<T>::zeros((3 * hidden, hidden));
        for g in 0..3 {
            u.slice_mut(s![g * hidden..(g + 1) * hidden, ..])
                .assign(&orthogonal::<T, _>(rng, hidden));
        }
        let w_hh = store.add(format!("{name}.w_hh"), u.into_dyn(), false);
        let b_ih = store.add(
            format!("{name}.b_ih"),
            ndarray::ArrayD::zeros(ndarray::IxDyn(&[3 * hidden])),
            false,
        );
        let b_hh = store.add(
            format!("{name}.b_hh"),
            ndarray::ArrayD::zeros(ndarray::IxDyn(&[3 * hidden])),
            false,
        );
        Self {
            w_ih,
            w_hh,
            b_ih,
            b_hh,
            input_dim,
            hidden,
            reverse,
        }
    }

    /// Returns hidden states in *original* time order, (L, H).
    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Array2<T>) -> (Array2<T>, GruCache<T>) {
        let (l, d) = x.dim();
        assert_eq!(d, self.input_dim, "gru input dim mismatch");
        let hdim = self.hidden;
        let w_ih = store.value_2d(self.w_ih);
        let w_hh = store.value_2d(self.w_hh).to_owned();
        let b_ih = store.value_1d(self.b_ih);
        let b_hh = store.value_1d(self.b_hh);

        // Input projections for all steps at once: (L, 3H).
        let mut pre_i = x.dot(&w_ih.t());
        for mut row in pre_i.rows_mut() {
            row += &b_ih;
        }

        let mut r_s = Array2::<T>::zeros((l, hdim));
        let mut z_s = Array2::<T>::zeros((l, hdim));
        let mut n_s = Array2::<T>::zeros((l, hdim));
        let mut m_s = Array2::<T>::zeros((l, hdim));
        let mut h_s = Array2::<T>::zeros((l, hdim));
        let mut out = Array2::<T>::zeros((l, hdim));

        let mut h_prev = Array1::<T>::zeros(hdim);
        for step in 0..l {
            let t = if self.reverse { l - 1 - step } else { step };
            let mut pre_h = w_hh.dot(&h_prev);
            pre_h += &b_hh;
            let pi = pre_i.row(t);
            let mut h_t = Array1::<T>::zeros(hdim);
            for j in 0..hdim {
                let r = sigmoid(pi[j] + pre_h[j]);
                let z = sigmoid(pi[hdim + j] + pre_h[hdim + j]);
                let m = pre_h[2 * hdim + j];
                let n = (pi[2 * hdim + j] + r * m).tanh();
                let h = (T::one() - z) * n + z * h_prev[j];
                r_s[[step, j]] = r;
                z_s[[step, j]] = z;
                n_s[[step, j]] = n;
                m_s[[step, j]] = m;
                h_t[j] = h;
            }
            h_s.row_mut(step).assign(&h_t);
            out.row_mut(t).assign(&h_t);
            h_prev = h_t;
        }
        (
            out,
            GruCache {
                input: x.clone(),
                r: r_s,
                z: z_s,
                n: n_s,
                m: m_s,
                h: h_s,
            },
        )
    }

    /// BPTT. `dout` is the gradient w.r.t. the output in original time
    /// order; returns the gradient w.r.t. the layer input.
    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        cache: &GruCache<T>,
        dout: &Array2<T>,
    ) -> Array2<T> {
        let (l, _) = cache.input.dim();
        let hdim = self.hidden;
        let w_hh = store.value_2d(self.w_hh).to_owned();

        let mut d_pre_i = Array2::<T>::zeros((l, 3 * hdim)); // indexed by original t
        let mut d_w_hh = Array2::<T>::zeros((3 * hdim, hdim));
        let mut d_b_hh = Array1::<T>::zeros(3 * hdim);
        let mut dh_next = Array1::<T>::zeros(hdim);

        for step in (0..l).rev() {
            let t = if self.reverse { l - 1 - step } else { step };
            let h_prev: Array1<T> = if step == 0 {
                Array1::zeros(hdim)
            } else {
                cache.h.row(step - 1).to_owned()
            };
            let mut dh = dout.row(t).to_owned();
            dh += &dh_next;

            let mut d_pre_h = Array1::<T>::zeros(3 * hdim);
            let mut dh_prev = Array1::<T>::zeros(hdim);
            for j in 0..hdim {
                let r = cache.r[[step, j]];
                let z = cache.z[[step, j]];
                let n = cache.n[[step, j]];
                let m = cache.m[[step, j]];
                let dhj = dh[j];
                let dz = dhj * (h_prev[j] - n) * z * (T::one() - z);
                let dn = dhj * (T::one() - z) * (T::one() - n * n);
                let dr = dn * m;
                let dm = dn * r;
                let dr_pre = dr * r * (T::one() - r);
                d_pre_i[[t, j]] += dr_pre;
                d_pre_i[[t, hdim + j]] += dz;
                d_pre_i[[t, 2 * hdim + j]] += dn;
                d_pre_h[j] = dr_pre;
                d_pre_h[hdim + j] = dz;
                d_pre_h[2 * hdim + j] = dm;
                dh_prev[j] = dhj * z;
            }
            // dh_prev += W_hh^T d_pre_h; dW_hh += outer(d_pre_h, h_prev)
            dh_prev += &w_hh.t().dot(&d_pre_h);
            for g in 0..3 * hdim {
                let dp = d_pre_h[g];
                if dp != T::zero() {
                    for j in 0..hdim {
                        d_w_hh[[g, j]] += dp * h_prev[j];
                    }
                }
            }
            d_b_hh += &d_pre_h;
            dh_next = dh_prev;
        }

        let w_ih = store.value_2d(self.w_ih).to_owned();
        let dx = d_pre_i.dot(&w_ih);
        let d_w_ih = d_pre_i.t().dot(&cache.input);
        {
            let mut g = store.grad_mut(self.w_ih);
            let g2 = g.view_mut().into_dimensionality::<ndarray::Ix2>().unwrap();
            ndarray::Zip::from(g2).and(&d_w_ih).for_each(|a, &b| *a += b);
        }
        {
            let mut g = store.grad_mut(self.w_hh);
            let g2 = g.view_mut().into_dimensionality::<ndarray::Ix2>().unwrap();
            ndarray::Zip::from(g2).and(&d_w_hh).for_each(|a, &b| *a += b);
        }
        {
            let db = d_pre_i.sum_axis(Axis(0));
            let mut g = store.grad_mut(self.b_ih);
            let g1 = g.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            ndarray::Zip::from(g1).and(&db).for_each(|a, &b| *a += b);
        }
        {
            let mut g = store.grad_mut(self.b_hh);
            let g1 = g.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            ndarray::Zip::from(g1).and(&d_b_hh).for_each(|a, &b| *a += b);
        }
        dx
    }
}

/// One bidirectional GRU layer; output is the (L, 2H) concatenation of the
/// forward and backward passes.
#[derive(Debug, Clone)]
pub struct BiGru {
    pub fwd: GruDirection,
    pub bwd: GruDirection,
}

pub struct BiGruCache<T> {
    fwd: GruCache<T>,
    bwd: GruCache<T>,
}

impl BiGru {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        input_dim: usize,
        hidden: usize,
    ) -> Self {
        Self {
            fwd: GruDirection::new(store, rng, &format!("{name}.fwd"), input_dim, hidden, false),
            bwd: GruDirection::new(store, rng, &format!("{name}.bwd"), input_dim, hidden, true),
        }
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Array2<T>) -> (Array2<T>, BiGruCache<T>) {
        let (hf, cf) = self.fwd.forward(store, x);
        let (hb, cb) = self.bwd.forward(store, x);
        let out = ndarray::concatenate![Axis(1), hf, hb];
        (out, BiGruCache { fwd: cf, bwd: cb })
    }

    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        cache: &BiGruCache<T>,
        dout: &Array2<T>,
    ) -> Array2<T> {
        let h = self.fwd.hidden;
        let d_f = dout.slice(s![.., ..h]).to_owned();
        let d_b = dout.slice(s![.., h..]).to_owned();
        let dx_f = self.fwd.backward(store, &cache.fwd, &d_f);
        let dx_b = self.bwd.backward(store, &cache.bwd, &d_b);
        dx_f + dx_b
    }
}

/// Per-frame affine map y = x W^T + b.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId, // (Out, In)
    pub bias: ParamId,   // (Out)
}

pub struct LinearCache<T> {
    input: Array2<T>,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            kaiming(rng, &[out_dim, in_dim], in_dim, 1.0),
            true,
        );
        let bias = store.add(
            format!("{name}.bias"),
            ndarray::ArrayD::zeros(ndarray::IxDyn(&[out_dim])),
            false,
        );
        Self { weight, bias }
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Array2<T>) -> (Array2<T>, LinearCache<T>) {
        let w = store.value_2d(self.weight);
        let b = store.value_1d(self.bias);
        let mut y = x.dot(&w.t());
        for mut row in y.rows_mut() {
            row += &b;
        }
        (y, LinearCache { input: x.clone() })
    }

    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        cache: &LinearCache<T>,
        dy: &Array2<T>,
    ) -> Array2<T> {
        let dw = dy.t().dot(&cache.input);
        {
            let mut g = store.grad_mut(self.weight);
            let g2 = g.view_mut().into_dimensionality::<ndarray::Ix2>().unwrap();
            ndarray::Zip::from(g2).and(&dw).for_each(|a, &b| *a += b);
        }
        {
            let db = dy.sum_axis(Axis(0));
            let mut g = store.grad_mut(self.bias);
            let g1 = g.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            ndarray::Zip::from(g1).and(&db).for_each(|a, &b| *a += b);
        }
        let w = store.value_2d(self.weight);
        dy.dot(&w)
    }
}

/// Non-overlapping temporal max-pool: (L, H) -> (ceil(L/S), H), plus the
/// argmax indices for backward.
pub fn max_pool_time<T: Scalar>(x: &Array2<T>, window: usize) -> (Array2<T>, Array2<usize>) {
    let (l, h) = x.dim();
    let lp = l.div_ceil(window);
    let mut y = Array2::<T>::zeros((lp, h));
    let mut idx = Array2::<usize>::zeros((lp, h));
    for p in 0..lp {
        let lo = p * window;
        let hi = ((p + 1) * window).min(l);
        for j in 0..h {
            let mut best = x[[lo, j]];
            let mut bi = lo;
            for t in lo + 1..hi {
                if x[[t, j]] > best {
                    best = x[[t, j]];
                    bi = t;
                }
            }
            y[[p, j]] = best;
            idx[[p, j]] = bi;
        }
    }
    (y, idx)
}

pub fn max_pool_time_backward<T: Scalar>(dy: &Array2<T>, idx: &Array2<usize>, l: usize) -> Array2<T> {
    let (lp, h) = dy.dim();
    let mut dx = Array2::<T>::zeros((l, h));
    for p in 0..lp {
        for j in 0..h {
            dx[[idx[[p, j]], j]] += dy[[p, j]];
        }
    }
    dx
}

/// Repeat each pooled row `window` times back up to length `l`.
pub fn upsample_repeat<T: Scalar>(x: &Array2<T>, window: usize, l: usize) -> Array2<T> {
    let (_lp, h) = x.dim();
    let mut y = Array2::<T>::zeros((l, h));
    for t in 0..l {
        y.row_mut(t).assign(&x.row(t / window));
    }
    y
}

pub fn upsample_repeat_backward<T: Scalar>(dy: &Array2<T>, window: usize, lp: usize) -> Array2<T> {
    let (l, h) = dy.dim();
    let mut dx = Array2::<T>::zeros((lp, h));
    for t in 0..l {
        let mut row = dx.row_mut(t / window);
        row += &dy.row(t);
    }
    dx
}
