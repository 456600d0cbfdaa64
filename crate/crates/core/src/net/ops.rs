//! Tensor primitives: convolution, transposed convolution, PReLU, and their
//! exact reverse-mode gradients.
//!
//! Tensors are `(batch, channel, angular, spatial)` f64 arrays. Both
//! convolution directions are lowered to `im2col`/`col2im` plus one GEMM, so
//! the hot path runs through `matrixmultiply`. All loops are sequential and
//! order-stable: identical inputs give bit-identical outputs.
//!
//! Output-size conventions:
//! - `conv2d` is a cross-correlation with zero padding `(k-1)/2` per axis
//!   ("same" at stride 1).
//! - `deconv2d` produces the full transposed-convolution output
//!   `s*(n-1)+k`, then crops `(k-1)/2` per axis, leaving `s*(n-1)+1`; on a
//!   stride-1 axis that reduces to "same".

use ndarray::{Array1, Array2, Array4};

use crate::error::{Error, Result};

/// Activation / data tensor layout `(batch, channel, angular, spatial)`.
pub type Tensor4 = Array4<f64>;

fn ensure_finite_shape(kh: usize, kw: usize) -> Result<()> {
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::BadConfig(format!("kernel {kh}x{kw} must be odd")));
    }
    Ok(())
}

/// Gather sliding windows into a `(C*kh*kw, N*OH*OW)` matrix. Out-of-range
/// taps read as zero.
fn im2col(
    x: &Tensor4,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    sh: usize,
    sw: usize,
) -> (Array2<f64>, usize, usize) {
    let (n, c, h, w) = x.dim();
    let oh = (h + 2 * ph - kh) / sh + 1;
    let ow = (w + 2 * pw - kw) / sw + 1;
    let np = n * oh * ow;
    let mut cols = Array2::<f64>::zeros((c * kh * kw, np));
    let x_std;
    let xs = match x.as_slice() {
        Some(s) => s,
        None => {
            x_std = x.as_standard_layout().into_owned();
            x_std.as_slice().expect("standard layout")
        }
    };
    let cs = cols.as_slice_mut().expect("standard layout");
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row_base = ((ci * kh + ki) * kw + kj) * np;
                for ni in 0..n {
                    let x_nc = (ni * c + ci) * h * w;
                    for ohi in 0..oh {
                        let hi = (ohi * sh + ki) as isize - ph as isize;
                        if hi < 0 || hi >= h as isize {
                            continue;
                        }
                        let x_row = x_nc + hi as usize * w;
                        let col_base = row_base + (ni * oh + ohi) * ow;
                        if sw == 1 {
                            let wj0 = kj as isize - pw as isize;
                            let ow_start = if wj0 < 0 { (-wj0) as usize } else { 0 };
                            let w_start = (wj0 + ow_start as isize) as usize;
                            if w_start >= w {
                                continue;
                            }
                            let span = (w - w_start).min(ow - ow_start);
                            cs[col_base + ow_start..col_base + ow_start + span]
                                .copy_from_slice(&xs[x_row + w_start..x_row + w_start + span]);
                        } else {
                            for owi in 0..ow {
                                let wi = (owi * sw + kj) as isize - pw as isize;
                                if wi >= 0 && wi < w as isize {
                                    cs[col_base + owi] = xs[x_row + wi as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (cols, oh, ow)
}

/// Adjoint of [`im2col`]: scatter-add columns back into a `(N, C, H, W)`
/// tensor.
fn col2im(
    cols: &Array2<f64>,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    sh: usize,
    sw: usize,
) -> Tensor4 {
    let oh = (h + 2 * ph - kh) / sh + 1;
    let ow = (w + 2 * pw - kw) / sw + 1;
    let np = n * oh * ow;
    debug_assert_eq!(cols.dim(), (c * kh * kw, np));
    let mut x = Tensor4::zeros((n, c, h, w));
    let xs = x.as_slice_mut().expect("standard layout");
    let cs = cols.as_slice().expect("standard layout");
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row_base = ((ci * kh + ki) * kw + kj) * np;
                for ni in 0..n {
                    let x_nc = (ni * c + ci) * h * w;
                    for ohi in 0..oh {
                        let hi = (ohi * sh + ki) as isize - ph as isize;
                        if hi < 0 || hi >= h as isize {
                            continue;
                        }
                        let x_row = x_nc + hi as usize * w;
                        let col_base = row_base + (ni * oh + ohi) * ow;
                        for owi in 0..ow {
                            let wi = (owi * sw + kj) as isize - pw as isize;
                            if wi >= 0 && wi < w as isize {
                                xs[x_row + wi as usize] += cs[col_base + owi];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

fn gemm(a: &ndarray::ArrayView2<f64>, b: &ndarray::ArrayView2<f64>, out: &mut Array2<f64>) {
    ndarray::linalg::general_mat_mul(1.0, a, b, 0.0, out);
}

/// `(N, O, NP)`-ordered flattening of a `(N, O, OH, OW)` gradient into the
/// `(O, N*OH*OW)` matrix the GEMMs want.
fn grad_to_mat(g: &Tensor4) -> Array2<f64> {
    let (n, o, oh, ow) = g.dim();
    let mut m = Array2::zeros((o, n * oh * ow));
    let g_std;
    let gs = match g.as_slice() {
        Some(s) => s,
        None => {
            g_std = g.as_standard_layout().into_owned();
            g_std.as_slice().expect("standard layout")
        }
    };
    let ms = m.as_slice_mut().expect("standard layout");
    let p = oh * ow;
    for ni in 0..n {
        for oi in 0..o {
            let src = (ni * o + oi) * p;
            let dst = oi * (n * p) + ni * p;
            ms[dst..dst + p].copy_from_slice(&gs[src..src + p]);
        }
    }
    m
}

fn mat_to_out(m: &Array2<f64>, n: usize, o: usize, oh: usize, ow: usize, bias: &Array1<f64>) -> Tensor4 {
    let mut out = Tensor4::zeros((n, o, oh, ow));
    let ms = m.as_slice().expect("standard layout");
    let os = out.as_slice_mut().expect("standard layout");
    let p = oh * ow;
    for ni in 0..n {
        for oi in 0..o {
            let src = oi * (n * p) + ni * p;
            let dst = (ni * o + oi) * p;
            let b = bias[oi];
            for k in 0..p {
                os[dst + k] = ms[src + k] + b;
            }
        }
    }
    out
}

/// (I, N*H*W) flattening of `(N, I, H, W)`.
fn input_to_mat(x: &Tensor4) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let mut m = Array2::zeros((c, n * h * w));
    let x_std;
    let xs = match x.as_slice() {
        Some(s) => s,
        None => {
            x_std = x.as_standard_layout().into_owned();
            x_std.as_slice().expect("standard layout")
        }
    };
    let ms = m.as_slice_mut().expect("standard layout");
    let p = h * w;
    for ni in 0..n {
        for ci in 0..c {
            let src = (ni * c + ci) * p;
            let dst = ci * (n * p) + ni * p;
            ms[dst..dst + p].copy_from_slice(&xs[src..src + p]);
        }
    }
    m
}

fn mat_to_input(m: &Array2<f64>, n: usize, c: usize, h: usize, w: usize) -> Tensor4 {
    let mut x = Tensor4::zeros((n, c, h, w));
    let xs = x.as_slice_mut().expect("standard layout");
    let ms = m.as_slice().expect("standard layout");
    let p = h * w;
    for ni in 0..n {
        for ci in 0..c {
            let dst = (ni * c + ci) * p;
            let src = ci * (n * p) + ni * p;
            xs[dst..dst + p].copy_from_slice(&ms[src..src + p]);
        }
    }
    x
}

/// Deconvolution weight `(O, I, kh, kw)` as an `(O*kh*kw, I)` matrix.
fn deconv_weight_mat(w: &Array4<f64>) -> Array2<f64> {
    let (o, i, kh, kw) = w.dim();
    let mut m = Array2::zeros((o * kh * kw, i));
    for oi in 0..o {
        for ii in 0..i {
            for ki in 0..kh {
                for kj in 0..kw {
                    m[[(oi * kh + ki) * kw + kj, ii]] = w[[oi, ii, ki, kj]];
                }
            }
        }
    }
    m
}

/// Cross-correlation with zero padding `(k-1)/2` per axis.
pub fn conv2d(x: &Tensor4, w: &Array4<f64>, b: &Array1<f64>, stride: (usize, usize)) -> Result<Tensor4> {
    let (o, i, kh, kw) = w.dim();
    ensure_finite_shape(kh, kw)?;
    let (n, c, _, _) = x.dim();
    if c != i {
        return Err(Error::ShapeMismatch(format!("conv input has {c} channels, weight expects {i}")));
    }
    if b.len() != o {
        return Err(Error::ShapeMismatch("bias length != out channels".into()));
    }
    let (sh, sw) = stride;
    if sh == 0 || sw == 0 {
        return Err(Error::BadConfig("stride must be >= 1".into()));
    }
    let (cols, oh, ow) = im2col(x, kh, kw, (kh - 1) / 2, (kw - 1) / 2, sh, sw);
    let w2 = w.view().into_shape((o, i * kh * kw)).expect("standard layout");
    let mut out2 = Array2::zeros((o, n * oh * ow));
    gemm(&w2, &cols.view(), &mut out2);
    Ok(mat_to_out(&out2, n, o, oh, ow, b))
}

/// Gradients of [`conv2d`] w.r.t. input, weights, and bias.
pub fn conv2d_backward(
    x: &Tensor4,
    w: &Array4<f64>,
    grad_y: &Tensor4,
    stride: (usize, usize),
) -> (Tensor4, Array4<f64>, Array1<f64>) {
    let (o, i, kh, kw) = w.dim();
    let (n, c, h, wd) = x.dim();
    let (sh, sw) = stride;
    let g2 = grad_to_mat(grad_y);

    let mut gb = Array1::zeros(o);
    for oi in 0..o {
        gb[oi] = g2.row(oi).sum();
    }

    let (cols, _, _) = im2col(x, kh, kw, (kh - 1) / 2, (kw - 1) / 2, sh, sw);
    let mut gw2 = Array2::zeros((o, i * kh * kw));
    gemm(&g2.view(), &cols.t(), &mut gw2);
    let gw = gw2.into_shape((o, i, kh, kw)).expect("contiguous");

    let w2 = w.view().into_shape((o, i * kh * kw)).expect("standard layout");
    let mut gcols = Array2::zeros((i * kh * kw, g2.ncols()));
    gemm(&w2.t(), &g2.view(), &mut gcols);
    let gx = col2im(&gcols, n, c, h, wd, kh, kw, (kh - 1) / 2, (kw - 1) / 2, sh, sw);

    (gx, gw, gb)
}

fn deconv_geometry(x: &Tensor4, w: &Array4<f64>, stride: (usize, usize)) -> Result<(usize, usize, usize, usize)> {
    let (_, i, kh, kw) = w.dim();
    ensure_finite_shape(kh, kw)?;
    let (_, c, h, wd) = x.dim();
    if c != i {
        return Err(Error::ShapeMismatch(format!("deconv input has {c} channels, weight expects {i}")));
    }
    let (sh, sw) = stride;
    if sh == 0 || sw == 0 {
        return Err(Error::BadConfig("stride must be >= 1".into()));
    }
    if sh > 1 && h < 2 {
        return Err(Error::ShapeMismatch("strided angular axis needs length >= 2".into()));
    }
    if sw > 1 && wd < 2 {
        return Err(Error::ShapeMismatch("strided spatial axis needs length >= 2".into()));
    }
    // A kernel narrower than the stride would leave unreached output samples.
    if kh < sh || kw < sw {
        return Err(Error::BadConfig(format!(
            "deconv kernel {kh}x{kw} smaller than stride {sh}x{sw}"
        )));
    }
    Ok((sh * (h - 1) + kh, sw * (wd - 1) + kw, sh, sw))
}

/// Transposed convolution: full output `s*(n-1)+k`, cropped by `(k-1)/2` per
/// axis to `s*(n-1)+1`.
pub fn deconv2d(x: &Tensor4, w: &Array4<f64>, b: &Array1<f64>, stride: (usize, usize)) -> Result<Tensor4> {
    let (o, _, kh, kw) = w.dim();
    if b.len() != o {
        return Err(Error::ShapeMismatch("bias length != out channels".into()));
    }
    let (hf, wf, sh, sw) = deconv_geometry(x, w, stride)?;
    let (n, _, h, wd) = x.dim();

    let w2d = deconv_weight_mat(w);
    let x2 = input_to_mat(x);
    let mut cols = Array2::zeros((o * kh * kw, n * h * wd));
    gemm(&w2d.view(), &x2.view(), &mut cols);
    let full = col2im(&cols, n, o, hf, wf, kh, kw, 0, 0, sh, sw);

    let (ch, cw) = ((kh - 1) / 2, (kw - 1) / 2);
    let (ho, wo) = (hf - kh + 1, wf - kw + 1);
    let mut out = Tensor4::zeros((n, o, ho, wo));
    for ni in 0..n {
        for oi in 0..o {
            for hh in 0..ho {
                for ww in 0..wo {
                    out[[ni, oi, hh, ww]] = full[[ni, oi, hh + ch, ww + cw]] + b[oi];
                }
            }
        }
    }
    debug_assert_eq!(ho, sh * (h - 1) + 1);
    debug_assert_eq!(wo, sw * (wd - 1) + 1);
    Ok(out)
}

/// Gradients of [`deconv2d`] w.r.t. input, weights, and bias.
pub fn deconv2d_backward(
    x: &Tensor4,
    w: &Array4<f64>,
    grad_y: &Tensor4,
    stride: (usize, usize),
) -> (Tensor4, Array4<f64>, Array1<f64>) {
    let (o, i, kh, kw) = w.dim();
    let (n, c, h, wd) = x.dim();
    let (hf, wf, sh, sw) = deconv_geometry(x, w, stride).expect("validated in forward");
    let (ch, cw) = ((kh - 1) / 2, (kw - 1) / 2);
    let (_, _, ho, wo) = grad_y.dim();

    // Adjoint of the crop: zero-embed the gradient into the full output.
    let mut g_full = Tensor4::zeros((n, o, hf, wf));
    for ni in 0..n {
        for oi in 0..o {
            for hh in 0..ho {
                for ww in 0..wo {
                    g_full[[ni, oi, hh + ch, ww + cw]] = grad_y[[ni, oi, hh, ww]];
                }
            }
        }
    }

    let (cols_g, goh, gow) = im2col(&g_full, kh, kw, 0, 0, sh, sw);
    debug_assert_eq!((goh, gow), (h, wd));

    let w2d = deconv_weight_mat(w);
    let mut gx2 = Array2::zeros((i, n * h * wd));
    gemm(&w2d.t(), &cols_g.view(), &mut gx2);
    let gx = mat_to_input(&gx2, n, c, h, wd);

    let x2 = input_to_mat(x);
    let mut gw2 = Array2::zeros((o * kh * kw, i));
    gemm(&cols_g.view(), &x2.t(), &mut gw2);
    let mut gw = Array4::zeros((o, i, kh, kw));
    for oi in 0..o {
        for ii in 0..i {
            for ki in 0..kh {
                for kj in 0..kw {
                    gw[[oi, ii, ki, kj]] = gw2[[(oi * kh + ki) * kw + kj, ii]];
                }
            }
        }
    }

    let mut gb = Array1::zeros(o);
    for ni in 0..n {
        for oi in 0..o {
            for hh in 0..ho {
                for ww in 0..wo {
                    gb[oi] += grad_y[[ni, oi, hh, ww]];
                }
            }
        }
    }

    (gx, gw, gb)
}

/// Parametric ReLU with one slope per channel: `y = x` for `x >= 0`, else
/// `slope[c] * x`.
pub fn prelu(x: &Tensor4, slope: &Array1<f64>) -> Result<Tensor4> {
    let (_, c, _, _) = x.dim();
    if slope.len() != c {
        return Err(Error::ShapeMismatch("PReLU slope length != channels".into()));
    }
    let mut y = x.clone();
    for (ci, mut plane) in y.axis_iter_mut(ndarray::Axis(1)).enumerate() {
        let a = slope[ci];
        plane.mapv_inplace(|v| if v >= 0.0 { v } else { a * v });
    }
    Ok(y)
}

/// Gradients of [`prelu`] w.r.t. input and slope; `x` is the pre-activation.
pub fn prelu_backward(x: &Tensor4, slope: &Array1<f64>, grad_y: &Tensor4) -> (Tensor4, Array1<f64>) {
    let (_, c, _, _) = x.dim();
    let mut gx = grad_y.clone();
    let mut gs = Array1::zeros(c);
    for ci in 0..c {
        let a = slope[ci];
        let xp = x.index_axis(ndarray::Axis(1), ci);
        let gp = grad_y.index_axis(ndarray::Axis(1), ci);
        let mut acc = 0.0;
        ndarray::Zip::from(gx.index_axis_mut(ndarray::Axis(1), ci))
            .and(&xp)
            .and(&gp)
            .for_each(|g_out, &xv, &gv| {
                if xv >= 0.0 {
                    *g_out = gv;
                } else {
                    *g_out = a * gv;
                    acc += gv * xv;
                }
            });
        gs[ci] = acc;
    }
    (gx, gs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn conv_1x1_identity() {
        let x = Tensor4::from_shape_fn((1, 1, 3, 4), |(_, _, a, w)| (a * 4 + w) as f64);
        let w = Array4::from_elem((1, 1, 1, 1), 1.0);
        let b = Array1::zeros(1);
        let y = conv2d(&x, &w, &b, (1, 1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_sum_filter_interior() {
        let x = Tensor4::from_elem((1, 1, 5, 5), 2.0);
        let w = Array4::from_elem((1, 1, 3, 3), 1.0);
        let b = Array1::zeros(1);
        let y = conv2d(&x, &w, &b, (1, 1)).unwrap();
        assert_eq!(y[[0, 0, 2, 2]], 18.0); // 9 taps * 2
        assert_eq!(y[[0, 0, 0, 0]], 8.0); // corner: 4 taps inside
    }

    #[test]
    fn conv_rejects_even_kernel_and_channel_mismatch() {
        let x = Tensor4::zeros((1, 2, 4, 4));
        let b = Array1::zeros(1);
        assert!(conv2d(&x, &Array4::zeros((1, 2, 2, 3)), &b, (1, 1)).is_err());
        assert!(conv2d(&x, &Array4::zeros((1, 3, 3, 3)), &b, (1, 1)).is_err());
    }

    #[test]
    fn deconv_output_lengths() {
        // stride (3,1), kernel 9x9, 11 angular rows -> 31
        let x = Tensor4::zeros((1, 2, 11, 8));
        let w = Array4::zeros((1, 2, 9, 9));
        let b = Array1::zeros(1);
        let y = deconv2d(&x, &w, &b, (3, 1)).unwrap();
        assert_eq!(y.dim(), (1, 1, 31, 8));
        // stride (1,4), spatial 11 -> 41
        let x = Tensor4::zeros((1, 1, 3, 11));
        let w = Array4::zeros((2, 1, 5, 5));
        let b = Array1::zeros(2);
        let y = deconv2d(&x, &w, &b, (1, 4)).unwrap();
        assert_eq!(y.dim(), (1, 2, 3, 41));
    }

    #[test]
    fn deconv_kernel_must_cover_stride() {
        let x = Tensor4::zeros((1, 1, 4, 4));
        let w = Array4::zeros((1, 1, 3, 3));
        let b = Array1::zeros(1);
        assert!(deconv2d(&x, &w, &b, (5, 1)).is_err());
    }

    #[test]
    fn prelu_slopes() {
        let x = array![[-2.0, 3.0]].into_shape((1, 1, 1, 2)).unwrap();
        let y = prelu(&x, &array![0.1]).unwrap();
        assert!((y[[0, 0, 0, 0]] + 0.2).abs() < 1e-15);
        assert_eq!(y[[0, 0, 0, 1]], 3.0);
        let id = prelu(&x, &array![1.0]).unwrap();
        assert_eq!(id, x);
        let relu = prelu(&x, &array![0.0]).unwrap();
        assert_eq!(relu[[0, 0, 0, 0]], 0.0);
    }
}
