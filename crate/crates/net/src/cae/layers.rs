//! Layer primitives for the image compressor: strided convolution, transposed
//! convolution and fully connected layers, all lowered to GEMM via im2col.
//!
//! Geometry is fixed across the stack: 6x6 kernel, stride 2, padding 2, so
//! every convolution stage exactly halves the spatial side and every
//! transposed stage doubles it.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3};

use super::Real;

pub const KERNEL: usize = 6;
pub const STRIDE: usize = 2;
pub const PAD: usize = 2;
const KK: usize = KERNEL * KERNEL;

pub fn conv_out_side(side: usize) -> usize {
    (side + 2 * PAD - KERNEL) / STRIDE + 1
}

/// Gather patches of `src` (C, Hs, Ws) into a (C*36, Ho*Wo) matrix with
/// Ho = Hs/2. Out-of-bounds taps read as zero.
pub fn im2col<F: Real>(src: &ArrayView3<'_, F>) -> Array2<F> {
    let (c, hs, ws) = src.dim();
    let (ho, wo) = (conv_out_side(hs), conv_out_side(ws));
    let mut cols = Array2::<F>::zeros((c * KK, ho * wo));
    let s = src.as_slice().expect("im2col: src must be contiguous");
    let cs = cols.as_slice_mut().unwrap();
    for ci in 0..c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ci * KERNEL + ky) * KERNEL + kx;
                let row_off = row * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                    if iy < 0 || iy >= hs as isize {
                        continue;
                    }
                    let src_off = (ci * hs + iy as usize) * ws;
                    let dst_off = row_off + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                        if ix < 0 || ix >= ws as isize {
                            continue;
                        }
                        cs[dst_off + ox] = s[src_off + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add a (C*36, Ho*Wo) matrix back onto the
/// (C, Hs, Ws) source grid.
pub fn col2im_add<F: Real>(cols: &ArrayView2<'_, F>, c: usize, hs: usize, ws: usize) -> Array3<F> {
    let (ho, wo) = (conv_out_side(hs), conv_out_side(ws));
    debug_assert_eq!(cols.dim(), (c * KK, ho * wo));
    let mut out = Array3::<F>::zeros((c, hs, ws));
    let o = out.as_slice_mut().unwrap();
    let cs = cols.as_slice().expect("col2im: cols must be contiguous");
    for ci in 0..c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ci * KERNEL + ky) * KERNEL + kx;
                let row_off = row * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                    if iy < 0 || iy >= hs as isize {
                        continue;
                    }
                    let dst_off = (ci * hs + iy as usize) * ws;
                    let src_off = row_off + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                        if ix < 0 || ix >= ws as isize {
                            continue;
                        }
                        o[dst_off + ix as usize] = o[dst_off + ix as usize] + cs[src_off + ox];
                    }
                }
            }
        }
    }
    out
}

/// Convolution forward. `w` is (Cout, Cin*36). Returns (pre-activation out,
/// cached input columns for the backward pass).
pub fn conv_forward<F: Real>(
    x: &ArrayView3<'_, F>,
    w: &ArrayView2<'_, F>,
    b: &ArrayView1<'_, F>,
) -> (Array3<F>, Array2<F>) {
    let (_, h, wd) = x.dim();
    let (ho, wo) = (conv_out_side(h), conv_out_side(wd));
    let cout = w.dim().0;
    let cols = im2col(x);
    let mut out_mat = w.dot(&cols);
    for (mut row, &bias) in out_mat.rows_mut().into_iter().zip(b.iter()) {
        row.mapv_inplace(|v| v + bias);
    }
    let out = out_mat.into_shape_with_order((cout, ho, wo)).unwrap();
    (out, cols)
}

/// Convolution backward: gradients w.r.t. weights, bias and input.
pub fn conv_backward<F: Real>(
    dout: &ArrayView3<'_, F>,
    cols: &ArrayView2<'_, F>,
    w: &ArrayView2<'_, F>,
    in_dims: (usize, usize, usize),
) -> (Array2<F>, Array1<F>, Array3<F>) {
    let (cout, ho, wo) = dout.dim();
    let dout_mat = dout.to_shape((cout, ho * wo)).unwrap();
    let dw = dout_mat.dot(&cols.t());
    let db = dout_mat.sum_axis(ndarray::Axis(1));
    let dcols = w.t().dot(&dout_mat);
    let (ci, h, wd) = in_dims;
    let dx = col2im_add(&dcols.view(), ci, h, wd);
    (dw, db, dx)
}

/// Transposed convolution forward. `w` is (Cin, Cout*36); output side doubles.
pub fn deconv_forward<F: Real>(
    x: &ArrayView3<'_, F>,
    w: &ArrayView2<'_, F>,
    b: &ArrayView1<'_, F>,
    cout: usize,
) -> Array3<F> {
    let (ci, h, wd) = x.dim();
    let (hs, ws) = (h * STRIDE, wd * STRIDE);
    let x_mat = x.to_shape((ci, h * wd)).unwrap();
    let cols = w.t().dot(&x_mat);
    let mut out = col2im_add(&cols.view(), cout, hs, ws);
    for (mut plane, &bias) in out.outer_iter_mut().zip(b.iter()) {
        plane.mapv_inplace(|v| v + bias);
    }
    out
}

/// Transposed convolution backward.
pub fn deconv_backward<F: Real>(
    dout: &ArrayView3<'_, F>,
    x: &ArrayView3<'_, F>,
    w: &ArrayView2<'_, F>,
) -> (Array2<F>, Array1<F>, Array3<F>) {
    let (ci, h, wd) = x.dim();
    let dcols = im2col(dout);
    let x_mat = x.to_shape((ci, h * wd)).unwrap();
    let dw = x_mat.dot(&dcols.t());
    let db = dout
        .outer_iter()
        .map(|plane| plane.iter().copied().fold(F::zero(), |a, v| a + v))
        .collect::<Array1<F>>();
    let dx_mat = w.dot(&dcols);
    let dx = dx_mat.into_shape_with_order((ci, h, wd)).unwrap();
    (dw, db, dx)
}

pub fn fc_forward<F: Real>(
    x: &ArrayView1<'_, F>,
    w: &ArrayView2<'_, F>,
    b: &ArrayView1<'_, F>,
) -> Array1<F> {
    w.dot(x) + b
}

/// Fully connected backward: (dw, db, dx).
pub fn fc_backward<F: Real>(
    dout: &ArrayView1<'_, F>,
    x: &ArrayView1<'_, F>,
    w: &ArrayView2<'_, F>,
) -> (Array2<F>, Array1<F>, Array1<F>) {
    let n_out = dout.len();
    let n_in = x.len();
    let mut dw = Array2::<F>::zeros((n_out, n_in));
    for (mut row, &d) in dw.rows_mut().into_iter().zip(dout.iter()) {
        row.assign(&x.mapv(|v| v * d));
    }
    let db = dout.to_owned();
    let dx = w.t().dot(dout);
    (dw, db, dx)
}

pub fn relu<F: Real>(v: F) -> F {
    if v > F::zero() {
        v
    } else {
        F::zero()
    }
}

pub fn relu_grad<F: Real>(pre: F) -> F {
    if pre > F::zero() {
        F::one()
    } else {
        F::zero()
    }
}

pub fn sigmoid<F: Real>(v: F) -> F {
    F::one() / (F::one() + (-v).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    /// Naive nested-loop convolution used as an independent oracle.
    fn conv_oracle(x: &Array3<f64>, w: &Array2<f64>, b: &Array1<f64>, cout: usize) -> Array3<f64> {
        let (ci, h, wd) = x.dim();
        let (ho, wo) = (conv_out_side(h), conv_out_side(wd));
        let mut out = Array3::<f64>::zeros((cout, ho, wo));
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[co];
                    for c in 0..ci {
                        for ky in 0..KERNEL {
                            for kx in 0..KERNEL {
                                let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                                let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let wi = (c * KERNEL + ky) * KERNEL + kx;
                                acc += w[[co, wi]] * x[[c, iy as usize, ix as usize]];
                            }
                        }
                    }
                    out[[co, oy, ox]] = acc;
                }
            }
        }
        out
    }

    fn pseudo(seed: u64, n: usize) -> Vec<f64> {
        // splitmix64-based filler, independent of the production RNG
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_add(0x9e3779b97f4a7c15);
                let mut z = s;
                z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
                z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
                z = z ^ (z >> 31);
                (z as f64 / u64::MAX as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn conv_matches_nested_loop_oracle() {
        let (ci, h, cout) = (3, 8, 4);
        let x = Array::from_shape_vec((ci, h, h), pseudo(1, ci * h * h)).unwrap();
        let w = Array::from_shape_vec((cout, ci * KK), pseudo(2, cout * ci * KK)).unwrap();
        let b = Array1::from_vec(pseudo(3, cout));
        let (got, _) = conv_forward(&x.view(), &w.view(), &b.view());
        let want = conv_oracle(&x, &w, &b, cout);
        let max_err = got
            .iter()
            .zip(want.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        assert!(max_err < 1e-10, "max abs err {max_err}");
    }

    #[test]
    fn conv_output_halves_spatial_side() {
        assert_eq!(conv_out_side(128), 64);
        assert_eq!(conv_out_side(64), 32);
        assert_eq!(conv_out_side(32), 16);
        assert_eq!(conv_out_side(8), 4);
    }

    #[test]
    fn deconv_doubles_and_is_adjoint_of_conv() {
        // <conv(x), y> == <x, deconv-ish(y)> with shared weights verifies the
        // im2col/col2im pair is a true adjoint.
        let (ci, h, cout) = (2, 8, 3);
        let x = Array::from_shape_vec((ci, h, h), pseudo(5, ci * h * h)).unwrap();
        let w = Array::from_shape_vec((cout, ci * KK), pseudo(6, cout * ci * KK)).unwrap();
        let zero_b = Array1::<f64>::zeros(cout);
        let (cx, _) = conv_forward(&x.view(), &w.view(), &zero_b.view());
        let y = Array::from_shape_vec(cx.dim(), pseudo(7, cx.len())).unwrap();
        let cols = im2col(&x.view());
        let (_, _, dx) = conv_backward(&y.view(), &cols.view(), &w.view(), (ci, h, h));
        let lhs: f64 = cx.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(dx.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "adjoint mismatch {lhs} vs {rhs}");

        let wt = Array::from_shape_vec((ci, cout * KK), pseudo(8, ci * cout * KK)).unwrap();
        let up = deconv_forward(&x.view(), &wt.view(), &zero_b.view(), cout);
        assert_eq!(up.dim(), (cout, h * 2, h * 2));
    }
}
