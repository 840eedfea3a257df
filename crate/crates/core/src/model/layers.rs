//! Forward/backward kernels. Feature maps are `[channels, voxels]` matrices
//! with voxels in row-major order over a `Shape3`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};

use crate::volume::{voxel_count, Shape3};

pub const KERNEL: usize = 3;
pub const KERNEL_VOL: usize = KERNEL * KERNEL * KERNEL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => 0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
                let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                cdf + x * pdf
            }
        }
    }

    pub fn map(self, pre: &Array2<f64>) -> Array2<f64> {
        pre.mapv(|v| self.apply(v))
    }

    pub fn map1(self, pre: &Array1<f64>) -> Array1<f64> {
        pre.mapv(|v| self.apply(v))
    }

    /// `grad ⊙ act'(pre)`, in place on `grad`.
    pub fn backprop<D: ndarray::Dimension>(
        self,
        grad: &mut ndarray::Array<f64, D>,
        pre: &ndarray::Array<f64, D>,
    ) {
        grad.zip_mut_with(pre, |g, &p| *g *= self.derivative(p));
    }
}

/// Patches for a 3×3×3, stride-1, zero-padded convolution:
/// row `c·27 + (kd·9 + kh·3 + kw)` holds channel `c` shifted by `(kd−1, kh−1, kw−1)`.
pub fn im2col(x: &Array2<f64>, shape: Shape3) -> Array2<f64> {
    let [d0, d1, d2] = shape;
    let channels = x.nrows();
    let v = voxel_count(shape);
    let mut col = Array2::<f64>::zeros((channels * KERNEL_VOL, v));
    for c in 0..channels {
        let src = x.row(c);
        let src = src.as_slice().expect("feature maps are contiguous");
        for kd in 0..KERNEL {
            for kh in 0..KERNEL {
                for kw in 0..KERNEL {
                    let row = c * KERNEL_VOL + (kd * 9 + kh * 3 + kw);
                    let mut dst = col.row_mut(row);
                    let dst = dst.as_slice_mut().expect("contiguous");
                    let (lo, hi) = valid_range(kw, d2);
                    for i in 0..d0 {
                        let si = i as isize + kd as isize - 1;
                        if si < 0 || si >= d0 as isize {
                            continue;
                        }
                        for j in 0..d1 {
                            let sj = j as isize + kh as isize - 1;
                            if sj < 0 || sj >= d1 as isize {
                                continue;
                            }
                            let out_base = (i * d1 + j) * d2;
                            let in_base = (si as usize * d1 + sj as usize) * d2;
                            let shift = kw as isize - 1;
                            for l in lo..hi {
                                dst[out_base + l] = src[(in_base as isize + l as isize + shift) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`].
pub fn col2im(col: &Array2<f64>, channels: usize, shape: Shape3) -> Array2<f64> {
    let [d0, d1, d2] = shape;
    let v = voxel_count(shape);
    let mut x = Array2::<f64>::zeros((channels, v));
    for c in 0..channels {
        let mut dst = x.row_mut(c);
        let dst = dst.as_slice_mut().expect("contiguous");
        for kd in 0..KERNEL {
            for kh in 0..KERNEL {
                for kw in 0..KERNEL {
                    let row = c * KERNEL_VOL + (kd * 9 + kh * 3 + kw);
                    let src = col.row(row);
                    let src = src.as_slice().expect("contiguous");
                    let (lo, hi) = valid_range(kw, d2);
                    for i in 0..d0 {
                        let si = i as isize + kd as isize - 1;
                        if si < 0 || si >= d0 as isize {
                            continue;
                        }
                        for j in 0..d1 {
                            let sj = j as isize + kh as isize - 1;
                            if sj < 0 || sj >= d1 as isize {
                                continue;
                            }
                            let out_base = (i * d1 + j) * d2;
                            let in_base = (si as usize * d1 + sj as usize) * d2;
                            let shift = kw as isize - 1;
                            for l in lo..hi {
                                dst[(in_base as isize + l as isize + shift) as usize] += src[out_base + l];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// Output positions along the fastest axis whose shifted source is in bounds.
#[inline]
fn valid_range(kw: usize, d2: usize) -> (usize, usize) {
    match kw {
        0 => (1, d2),
        1 => (0, d2),
        _ => (0, d2.saturating_sub(1)),
    }
}

/// `weight · col + bias`.
pub fn conv_forward(weight: ArrayView2<f64>, bias: ArrayView1<f64>, col: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((weight.nrows(), col.ncols()));
    general_mat_mul(1.0, &weight, col, 0.0, &mut out);
    for (mut row, &b) in out.axis_iter_mut(Axis(0)).zip(bias.iter()) {
        row += b;
    }
    out
}

/// Accumulates weight/bias gradients and returns the gradient w.r.t. `col`.
pub fn conv_backward(
    weight: ArrayView2<f64>,
    col: &Array2<f64>,
    dout: &Array2<f64>,
    mut dweight: ArrayViewMut2<f64>,
    dbias: Option<ArrayViewMut1<f64>>,
) -> Array2<f64> {
    general_mat_mul(1.0, dout, &col.t(), 1.0, &mut dweight);
    if let Some(mut db) = dbias {
        db += &dout.sum_axis(Axis(1));
    }
    let mut dcol = Array2::<f64>::zeros((weight.ncols(), dout.ncols()));
    general_mat_mul(1.0, &weight.t(), dout, 0.0, &mut dcol);
    dcol
}

pub fn pooled_shape(shape: Shape3) -> Shape3 {
    [shape[0] / 2, shape[1] / 2, shape[2] / 2]
}

/// 2×2×2 max pooling, stride 2, trailing odd planes dropped. Returns the
/// pooled map and, per output element, the flat input index that won.
pub fn maxpool_forward(x: &Array2<f64>, shape: Shape3) -> (Array2<f64>, Vec<usize>) {
    let [_, d1, d2] = shape;
    let out_shape = pooled_shape(shape);
    let [o0, o1, o2] = out_shape;
    let nv = voxel_count(out_shape);
    let mut out = Array2::<f64>::zeros((x.nrows(), nv));
    let mut arg = vec![0usize; x.nrows() * nv];
    for c in 0..x.nrows() {
        let src = x.row(c);
        let src = src.as_slice().expect("contiguous");
        for i in 0..o0 {
            for j in 0..o1 {
                for l in 0..o2 {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for a in 0..2 {
                        for b in 0..2 {
                            for e in 0..2 {
                                let idx = ((2 * i + a) * d1 + 2 * j + b) * d2 + 2 * l + e;
                                if src[idx] > best {
                                    best = src[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    let o = (i * o1 + j) * o2 + l;
                    out[[c, o]] = best;
                    arg[c * nv + o] = best_idx;
                }
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward(dout: &Array2<f64>, argmax: &[usize], in_voxels: usize) -> Array2<f64> {
    let nv = dout.ncols();
    let mut dx = Array2::<f64>::zeros((dout.nrows(), in_voxels));
    for c in 0..dout.nrows() {
        for o in 0..nv {
            dx[[c, argmax[c * nv + o]]] += dout[[c, o]];
        }
    }
    dx
}

pub fn global_avg_pool(x: &Array2<f64>) -> Array1<f64> {
    x.mean_axis(Axis(1)).expect("non-empty feature map")
}

pub fn global_avg_pool_backward(dout: &Array1<f64>, voxels: usize) -> Array2<f64> {
    let scale = 1.0 / voxels as f64;
    let mut dx = Array2::<f64>::zeros((dout.len(), voxels));
    for (mut row, &g) in dx.axis_iter_mut(Axis(0)).zip(dout.iter()) {
        row.fill(g * scale);
    }
    dx
}

pub fn dense_forward(weight: ArrayView2<f64>, bias: ArrayView1<f64>, x: &Array1<f64>) -> Array1<f64> {
    weight.dot(x) + bias
}

/// Accumulates `dW += dy ⊗ x`, `db += dy`; returns `Wᵀ dy`.
pub fn dense_backward(
    weight: ArrayView2<f64>,
    x: &Array1<f64>,
    dy: &Array1<f64>,
    mut dweight: ArrayViewMut2<f64>,
    mut dbias: ArrayViewMut1<f64>,
) -> Array1<f64> {
    for (r, &g) in dy.iter().enumerate() {
        if g != 0.0 {
            dweight.row_mut(r).scaled_add(g, x);
        }
    }
    dbias += dy;
    weight.t().dot(dy)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 3×3×3 zero-padded convolution for checking the im2col path.
    fn naive_conv(x: &Array2<f64>, shape: Shape3, w: &Array2<f64>) -> Array2<f64> {
        let [d0, d1, d2] = shape;
        let mut out = Array2::<f64>::zeros((w.nrows(), voxel_count(shape)));
        for co in 0..w.nrows() {
            for i in 0..d0 as isize {
                for j in 0..d1 as isize {
                    for l in 0..d2 as isize {
                        let mut s = 0.0;
                        for ci in 0..x.nrows() {
                            for kd in 0..3isize {
                                for kh in 0..3isize {
                                    for kw in 0..3isize {
                                        let (a, b, c) = (i + kd - 1, j + kh - 1, l + kw - 1);
                                        if a < 0 || b < 0 || c < 0 || a >= d0 as isize || b >= d1 as isize || c >= d2 as isize {
                                            continue;
                                        }
                                        let src = (a as usize * d1 + b as usize) * d2 + c as usize;
                                        let k = (kd * 9 + kh * 3 + kw) as usize;
                                        s += w[[co, ci * 27 + k]] * x[[ci, src]];
                                    }
                                }
                            }
                        }
                        out[[co, (i as usize * d1 + j as usize) * d2 + l as usize]] = s;
                    }
                }
            }
        }
        out
    }

    fn pseudo(n: usize, salt: u64) -> Vec<f64> {
        (0..n)
            .map(|i| (((i as u64 * 2654435761 + salt * 97) % 1000) as f64 / 500.0) - 1.0)
            .collect()
    }

    #[test]
    fn im2col_matches_direct_convolution() {
        let shape = [3, 4, 5];
        let x = Array2::from_shape_vec((2, 60), pseudo(120, 1)).unwrap();
        let w = Array2::from_shape_vec((3, 54), pseudo(162, 2)).unwrap();
        let col = im2col(&x, shape);
        let fast = conv_forward(w.view(), Array1::zeros(3).view(), &col);
        let slow = naive_conv(&x, shape, &w);
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        let shape = [3, 3, 4];
        let x = Array2::from_shape_vec((2, 36), pseudo(72, 3)).unwrap();
        let y = Array2::from_shape_vec((54, 36), pseudo(54 * 36, 4)).unwrap();
        let lhs: f64 = (&im2col(&x, shape) * &y).sum();
        let rhs: f64 = (&x * &col2im(&y, 2, shape)).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn maxpool_drops_odd_planes() {
        let shape = [3, 2, 2];
        let x = Array2::from_shape_vec((1, 12), (0..12).map(|v| v as f64).collect()).unwrap();
        let (out, arg) = maxpool_forward(&x, shape);
        assert_eq!(out.shape(), &[1, 1]);
        assert_eq!(out[[0, 0]], 7.0);
        assert_eq!(arg, vec![7]);
        let dx = maxpool_backward(&Array2::from_elem((1, 1), 2.0), &arg, 12);
        assert_eq!(dx.sum(), 2.0);
        assert_eq!(dx[[0, 7]], 2.0);
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (Activation::Gelu.apply(x + h) - Activation::Gelu.apply(x - h)) / (2.0 * h);
            assert!((fd - Activation::Gelu.derivative(x)).abs() < 1e-8);
        }
    }
}
