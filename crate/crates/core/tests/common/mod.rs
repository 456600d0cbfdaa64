//! Shared test oracles: independent reference implementations used to verify
//! the optimized paths, plus scene builders. Everything here is deliberately
//! naive (nested loops, O(N^2) DFTs) and must stay independent of the code
//! under test.

#![allow(dead_code)]

use lfdense::lightfield::{Epi, EpiAxis};
use lfdense::net::{self, NetworkParams, Tensor4};
use lfdense::scene::{Coverage, Layer, SceneSpec, Texture};
use ndarray::{Array1, Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// --- random helpers ----------------------------------------------------------

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_epi(rng: &mut ChaCha8Rng, n_a: usize, n_w: usize) -> Epi {
    let data = Array2::from_shape_fn((n_a, n_w), |_| rng.gen_range(0.0..1.0));
    Epi::new(data, EpiAxis::US).unwrap()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, dims: (usize, usize, usize, usize), scale: f64) -> Tensor4 {
    Tensor4::from_shape_fn(dims, |_| rng.gen_range(-scale..scale))
}

// --- naive 2D DFT oracle -----------------------------------------------------

/// O(N^2 M^2) centered amplitude spectrum, independent of the FFT path.
pub fn naive_dft2_amplitude(data: &Array2<f64>) -> Array2<f64> {
    let (n_a, n_w) = data.dim();
    let mut out = Array2::zeros((n_a, n_w));
    for ka in 0..n_a {
        for kw in 0..n_w {
            // centered frequency indices
            let fa = ka as isize - (n_a / 2) as isize;
            let fw = kw as isize - (n_w / 2) as isize;
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for a in 0..n_a {
                for w in 0..n_w {
                    let phase = -std::f64::consts::TAU
                        * (fa as f64 * a as f64 / n_a as f64 + fw as f64 * w as f64 / n_w as f64);
                    re += data[[a, w]] * phase.cos();
                    im += data[[a, w]] * phase.sin();
                }
            }
            out[[ka, kw]] = (re * re + im * im).sqrt();
        }
    }
    out
}

// --- naive convolution oracles -------------------------------------------------

/// Direct 6-loop same-padded cross-correlation.
pub fn conv2d_oracle(x: &Tensor4, w: &Array4<f64>, b: &Array1<f64>) -> Tensor4 {
    let (n, c, h, wd) = x.dim();
    let (o, _, kh, kw) = w.dim();
    let (ph, pw) = ((kh as isize - 1) / 2, (kw as isize - 1) / 2);
    let mut out = Tensor4::zeros((n, o, h, wd));
    for ni in 0..n {
        for oi in 0..o {
            for hh in 0..h {
                for ww in 0..wd {
                    let mut acc = b[oi];
                    for ci in 0..c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let hi = hh as isize + ki as isize - ph;
                                let wi = ww as isize + kj as isize - pw;
                                if hi >= 0 && hi < h as isize && wi >= 0 && wi < wd as isize {
                                    acc += x[[ni, ci, hi as usize, wi as usize]]
                                        * w[[oi, ci, ki, kj]];
                                }
                            }
                        }
                    }
                    out[[ni, oi, hh, ww]] = acc;
                }
            }
        }
    }
    out
}

/// Strided same-padded cross-correlation sampled at multiples of the stride;
/// the adjoint of the transposed convolution under test.
pub fn conv2d_strided_oracle(
    x: &Tensor4,
    w: &Array4<f64>,
    stride: (usize, usize),
) -> Tensor4 {
    let (n, c, h, wd) = x.dim();
    let (o, _, kh, kw) = w.dim();
    let (sh, sw) = stride;
    let (ph, pw) = ((kh as isize - 1) / 2, (kw as isize - 1) / 2);
    let oh = (h - 1) / sh + 1;
    let ow = (wd - 1) / sw + 1;
    let mut out = Tensor4::zeros((n, o, oh, ow));
    for ni in 0..n {
        for oi in 0..o {
            for hh in 0..oh {
                for ww in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let hi = (hh * sh) as isize + ki as isize - ph;
                                let wi = (ww * sw) as isize + kj as isize - pw;
                                if hi >= 0 && hi < h as isize && wi >= 0 && wi < wd as isize {
                                    acc += x[[ni, ci, hi as usize, wi as usize]]
                                        * w[[oi, ci, ki, kj]];
                                }
                            }
                        }
                    }
                    out[[ni, oi, hh, ww]] = acc;
                }
            }
        }
    }
    out
}

pub fn dot4(a: &Tensor4, b: &Tensor4) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

// --- EPI slope oracle ----------------------------------------------------------

/// Fit the slope (pixels per view step) of a bright structure on a dark
/// background by circular-centroid tracking plus least squares. Constant
/// per-row centroid offsets cancel in the slope, so textured stripes fit
/// their true disparity.
pub fn fit_epi_slope(data: &Array2<f64>) -> f64 {
    let (n_a, n_w) = data.dim();
    assert!(n_a >= 2);
    let w = n_w as f64;
    let mut positions = Vec::with_capacity(n_a);
    for a in 0..n_a {
        let (mut sx, mut cx, mut mass) = (0.0, 0.0, 0.0);
        for u in 0..n_w {
            let v = data[[a, u]];
            let ang = std::f64::consts::TAU * u as f64 / w;
            sx += v * ang.sin();
            cx += v * ang.cos();
            mass += v;
        }
        assert!(mass > 1e-9, "row {a} has no mass for centroid fitting");
        let mut pos = sx.atan2(cx) / std::f64::consts::TAU * w;
        if let Some(&prev) = positions.last() {
            // unwrap to the continuation nearest the previous row
            while pos - prev > w / 2.0 {
                pos -= w;
            }
            while pos - prev < -w / 2.0 {
                pos += w;
            }
        }
        positions.push(pos);
    }
    // least squares slope over (row index, position)
    let n = n_a as f64;
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = positions.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &p) in positions.iter().enumerate() {
        let dx = i as f64 - mean_x;
        num += dx * (p - mean_y);
        den += dx * dx;
    }
    num / den
}

/// Single thin textured stripe at the given disparity, centered so it never
/// wraps across the border for the given view count.
pub fn stripe_scene(disparity: f64, n_views: usize, width: usize) -> SceneSpec {
    let span_len = 14.0;
    let travel = disparity.abs() * (n_views - 1) as f64;
    let start = (width as f64 - travel - span_len) / 2.0;
    SceneSpec {
        layers: vec![Layer {
            disparity_px: disparity,
            texture: Texture {
                bias: 0.55,
                harmonics: vec![(5, 0.25, 0.3), (11, 0.15, 1.2)],
                period: width as f64,
            },
            vertical: None,
            coverage: Coverage::Span { start, len: span_len },
        }],
        n_views_t: 1,
        n_views_s: n_views,
        height: 2,
        width,
        background: 0.0,
    }
}

// --- toy aliasing scene ----------------------------------------------------------

/// Render the aliasing demonstration scene and extract its EPI.
pub fn toy_alias_epi() -> Epi {
    let lf = lfdense::scene::synth_lightfield(&lfdense::scene::alias_demo_scene()).unwrap();
    lf.extract_epi(EpiAxis::US, 0, 0, 0).unwrap()
}

// --- finite differences over network parameters ----------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slot {
    Weight,
    Bias,
    Slope,
}

pub fn get_param(params: &NetworkParams, layer: usize, slot: Slot, idx: usize) -> f64 {
    let l = &params.layers[layer];
    match slot {
        Slot::Weight => *l.weights.iter().nth(idx).unwrap(),
        Slot::Bias => l.bias[idx],
        Slot::Slope => l.prelu_slope.as_ref().unwrap()[idx],
    }
}

pub fn set_param(params: &mut NetworkParams, layer: usize, slot: Slot, idx: usize, v: f64) {
    let l = &mut params.layers[layer];
    match slot {
        Slot::Weight => *l.weights.iter_mut().nth(idx).unwrap() = v,
        Slot::Bias => l.bias[idx] = v,
        Slot::Slope => l.prelu_slope.as_mut().unwrap()[idx] = v,
    }
}

pub fn get_grad(grads: &net::Gradients, layer: usize, slot: Slot, idx: usize) -> f64 {
    let l = &grads.layers[layer];
    match slot {
        Slot::Weight => *l.weights.iter().nth(idx).unwrap(),
        Slot::Bias => l.bias[idx],
        Slot::Slope => l.prelu_slope.as_ref().unwrap()[idx],
    }
}

/// Central finite difference of a scalar loss w.r.t. one parameter.
pub fn central_diff(
    params: &NetworkParams,
    layer: usize,
    slot: Slot,
    idx: usize,
    h: f64,
    loss_of: &dyn Fn(&NetworkParams) -> f64,
) -> f64 {
    let mut p = params.clone();
    let v = get_param(&p, layer, slot, idx);
    set_param(&mut p, layer, slot, idx, v + h);
    let lp = loss_of(&p);
    set_param(&mut p, layer, slot, idx, v - h);
    let lm = loss_of(&p);
    (lp - lm) / (2.0 * h)
}

/// Relative error with an absolute floor for near-zero gradients.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom < 1e-8 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

// --- reference SSIM ---------------------------------------------------------------

/// Direct sliding-window SSIM with reflected boundaries; no separable
/// filtering tricks.
pub fn ssim_reference(a: &Array2<f64>, b: &Array2<f64>, peak: f64) -> f64 {
    let (h, w) = a.dim();
    let win = 11usize;
    let half = (win / 2) as isize;
    let sigma = 1.5f64;
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let mut taps = Vec::new();
    for i in 0..win {
        for j in 0..win {
            let di = i as f64 - half as f64;
            let dj = j as f64 - half as f64;
            taps.push((-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp());
        }
    }
    let tsum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= tsum;
    }
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut m = i.rem_euclid(2 * n);
        if m >= n {
            m = 2 * n - 1 - m;
        }
        m as usize
    };
    let mut total = 0.0;
    for r in 0..h {
        for c in 0..w {
            let (mut ma, mut mb, mut maa, mut mbb, mut mab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            let mut k = 0;
            for i in 0..win {
                for j in 0..win {
                    let rr = reflect(r as isize + i as isize - half, h);
                    let cc = reflect(c as isize + j as isize - half, w);
                    let (x, y) = (a[[rr, cc]], b[[rr, cc]]);
                    let t = taps[k];
                    ma += t * x;
                    mb += t * y;
                    maa += t * x * x;
                    mbb += t * y * y;
                    mab += t * x * y;
                    k += 1;
                }
            }
            let va = maa - ma * ma;
            let vb = mbb - mb * mb;
            let cov = mab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    total / (h * w) as f64
}
