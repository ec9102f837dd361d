//! 2D convolution via im2col + GEMM, with explicit backward passes.
//!
//! Activations are laid out as (L, C, H, W) where L is the clip length;
//! the convolution is purely spatial and treats L as a batch axis.

use super::nn::{kaiming, ParamId, ParamStore, Scalar};
use ndarray::{Array1, Array2, Array4, ArrayView4};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Backward needs only the layer input; patch columns are recomputed.
pub struct Conv2dCache<T> {
    pub input: Array4<T>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        gain: f64,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            kaiming(rng, &[out_channels, in_channels, kernel, kernel], fan_in, gain),
            true,
        );
        let bias = store.add(
            format!("{name}.bias"),
            ndarray::ArrayD::zeros(ndarray::IxDyn(&[out_channels])),
            false,
        );
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    /// Gather k*k patches: output (C*k*k, L*Ho*Wo), column-major over
    /// (l, ho, wo) in row-major order.
    fn im2col<T: Scalar>(&self, x: &ArrayView4<T>) -> Array2<T> {
        let (l, c, h, w) = x.dim();
        let (ho, wo) = self.out_spatial(h, w);
        let k = self.kernel;
        let cols_n = l * ho * wo;
        let mut cols = Array2::<T>::zeros((c * k * k, cols_n));
        let xs = x.as_slice().expect("input must be contiguous");
        {
            let cs = cols.as_slice_mut().unwrap();
            for ci in 0..c {
                for ki in 0..k {
                    for kj in 0..k {
                        let row = (ci * k + ki) * k + kj;
                        let row_base = row * cols_n;
                        for li in 0..l {
                            let x_base = (li * c + ci) * h * w;
                            for oi in 0..ho {
                                let ii = oi * self.stride + ki;
                                if ii < self.pad || ii >= h + self.pad {
                                    continue;
                                }
                                let ii = ii - self.pad;
                                let col_base = row_base + (li * ho + oi) * wo;
                                let x_row = x_base + ii * w;
                                for oj in 0..wo {
                                    let jj = oj * self.stride + kj;
                                    if jj < self.pad || jj >= w + self.pad {
                                        continue;
                                    }
                                    cs[col_base + oj] = xs[x_row + jj - self.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Scatter-add of column gradients back to input layout.
    fn col2im<T: Scalar>(&self, dcols: &Array2<T>, l: usize, h: usize, w: usize) -> Array4<T> {
        let c = self.in_channels;
        let k = self.kernel;
        let (ho, wo) = self.out_spatial(h, w);
        let cols_n = l * ho * wo;
        let mut dx = Array4::<T>::zeros((l, c, h, w));
        let ds = dcols.as_slice().expect("dcols contiguous");
        let xs = dx.as_slice_mut().unwrap();
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let row_base = row * cols_n;
                    for li in 0..l {
                        let x_base = (li * c + ci) * h * w;
                        for oi in 0..ho {
                            let ii = oi * self.stride + ki;
                            if ii < self.pad || ii >= h + self.pad {
                                continue;
                            }
                            let ii = ii - self.pad;
                            let col_base = row_base + (li * ho + oi) * wo;
                            let x_row = x_base + ii * w;
                            for oj in 0..wo {
                                let jj = oj * self.stride + kj;
                                if jj < self.pad || jj >= w + self.pad {
                                    continue;
                                }
                                xs[x_row + jj - self.pad] += ds[col_base + oj];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Array4<T>) -> (Array4<T>, Conv2dCache<T>) {
        let (l, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channel mismatch");
        let (ho, wo) = self.out_spatial(h, w);
        let cols = self.im2col(&x.view());
        let wmat = store
            .value(self.weight)
            .into_shape_with_order((self.out_channels, self.in_channels * self.kernel * self.kernel))
            .unwrap();
        let mut y_mat = wmat.dot(&cols); // (C_out, L*Ho*Wo)
        let bias = store.value_1d(self.bias);
        for (mut row, &b) in y_mat.rows_mut().into_iter().zip(bias.iter()) {
            row.mapv_inplace(|v| v + b);
        }
        // (C_out, L, Ho, Wo) -> (L, C_out, Ho, Wo)
        let y = y_mat
            .into_shape_with_order((self.out_channels, l, ho, wo))
            .unwrap()
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .to_owned();
        (y, Conv2dCache { input: x.clone() })
    }

    /// Accumulates weight/bias grads into the store, returns dx.
    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        cache: &Conv2dCache<T>,
        dy: &Array4<T>,
    ) -> Array4<T> {
        let (l, _c, h, w) = cache.input.dim();
        let (ho, wo) = self.out_spatial(h, w);
        let cols = self.im2col(&cache.input.view());
        // dy (L, C_out, Ho, Wo) -> (C_out, L*Ho*Wo)
        let dy_mat = dy
            .view()
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .into_shape_with_order((self.out_channels, l * ho * wo))
            .unwrap()
            .to_owned();
        let dw = dy_mat.dot(&cols.t()); // (C_out, C*k*k)
        {
            let mut g = store.grad_mut(self.weight);
            let g2 = g
                .view_mut()
                .into_shape_with_order((self.out_channels, self.in_channels * self.kernel * self.kernel))
                .unwrap();
            ndarray::Zip::from(g2).and(&dw).for_each(|a, &b| *a += b);
        }
        {
            let db: Array1<T> = dy_mat.sum_axis(ndarray::Axis(1));
            let mut g = store.grad_mut(self.bias);
            let g1 = g.view_mut().into_shape_with_order(self.out_channels).unwrap();
            ndarray::Zip::from(g1).and(&db).for_each(|a, &b| *a += b);
        }
        let wmat = store
            .value(self.weight)
            .into_shape_with_order((self.out_channels, self.in_channels * self.kernel * self.kernel))
            .unwrap()
            .to_owned();
        let dcols = wmat.t().dot(&dy_mat); // (C*k*k, L*Ho*Wo)
        self.col2im(&dcols, l, h, w)
    }
}

/// In-place ReLU returning the activation mask for backward.
pub fn relu_forward<T: Scalar>(x: &mut Array4<T>) -> Vec<bool> {
    let s = x.as_slice_mut().unwrap();
    let mut mask = vec![false; s.len()];
    for (v, m) in s.iter_mut().zip(mask.iter_mut()) {
        if *v > T::zero() {
            *m = true;
        } else {
            *v = T::zero();
        }
    }
    mask
}

pub fn relu_backward<T: Scalar>(dy: &mut Array4<T>, mask: &[bool]) {
    let s = dy.as_slice_mut().unwrap();
    for (v, &m) in s.iter_mut().zip(mask.iter()) {
        if !m {
            *v = T::zero();
        }
    }
}

/// Global spatial average pool: (L, C, H, W) -> (L, C).
pub fn global_avg_pool<T: Scalar>(x: &Array4<T>) -> Array2<T> {
    let (l, c, h, w) = x.dim();
    let scale = T::from_f64(1.0 / (h * w) as f64);
    let mut y = Array2::<T>::zeros((l, c));
    for li in 0..l {
        for ci in 0..c {
            let mut acc = T::zero();
            for v in x.slice(ndarray::s![li, ci, .., ..]).iter() {
                acc += *v;
            }
            y[[li, ci]] = acc * scale;
        }
    }
    y
}

pub fn global_avg_pool_backward<T: Scalar>(dy: &Array2<T>, h: usize, w: usize) -> Array4<T> {
    let (l, c) = dy.dim();
    let scale = T::from_f64(1.0 / (h * w) as f64);
    let mut dx = Array4::<T>::zeros((l, c, h, w));
    for li in 0..l {
        for ci in 0..c {
            let g = dy[[li, ci]] * scale;
            dx.slice_mut(ndarray::s![li, ci, .., ..]).fill(g);
        }
    }
    dx
}
