//! PSNR / SSIM and per-view evaluation reports.
//!
//! Both metrics run on luma at peak 1.0. SSIM uses the standard 11x11
//! Gaussian window (sigma 1.5, K1 = 0.01, K2 = 0.03) evaluated at every
//! pixel with reflected boundaries, then averaged.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::io::fmt_g12;
use crate::lightfield::{rgb_pixel_luma, Colorspace, LightField4D};
use crate::par::Pool;

/// PSNR is undefined for identical images; keep the flag explicit instead of
/// inventing a cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PsnrResult {
    Identical,
    Db(f64),
}

impl PsnrResult {
    pub fn db(&self) -> Option<f64> {
        match self {
            PsnrResult::Identical => None,
            PsnrResult::Db(v) => Some(*v),
        }
    }
}

/// Peak signal-to-noise ratio: `10*log10(peak^2 / MSE)`.
pub fn psnr(a: &Array2<f64>, b: &Array2<f64>, peak: f64) -> Result<PsnrResult> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!("psnr shapes {:?} vs {:?}", a.dim(), b.dim())));
    }
    if peak <= 0.0 {
        return Err(Error::InvalidValue("peak must be positive".into()));
    }
    let mse = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PsnrResult::Identical);
    }
    Ok(PsnrResult::Db(10.0 * (peak * peak / mse).log10()))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn ssim_window_taps() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut taps: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut m = i.rem_euclid(2 * n);
    if m >= n {
        m = 2 * n - 1 - m;
    }
    m as usize
}

/// Separable Gaussian filtering with reflected boundaries (full-size output).
fn gauss_filter(x: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = x.dim();
    let half = (taps.len() / 2) as isize;
    let mut tmp = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * x[[r, reflect(c as isize + k as isize - half, w)]];
            }
            tmp[[r, c]] = acc;
        }
    }
    let mut out = Array2::zeros((h, w));
    for c in 0..w {
        for r in 0..h {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * tmp[[reflect(r as isize + k as isize - half, h), c]];
            }
            out[[r, c]] = acc;
        }
    }
    out
}

/// Mean structural similarity over the full-size local map.
pub fn ssim(a: &Array2<f64>, b: &Array2<f64>, peak: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!("ssim shapes {:?} vs {:?}", a.dim(), b.dim())));
    }
    let (h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::ShapeMismatch(format!(
            "image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let c1 = (SSIM_K1 * peak) * (SSIM_K1 * peak);
    let c2 = (SSIM_K2 * peak) * (SSIM_K2 * peak);
    let taps = ssim_window_taps();

    let mu_a = gauss_filter(a, &taps);
    let mu_b = gauss_filter(b, &taps);
    let aa = gauss_filter(&(a * a), &taps);
    let bb = gauss_filter(&(b * b), &taps);
    let ab = gauss_filter(&(a * b), &taps);

    let mut total = 0.0;
    for r in 0..h {
        for c in 0..w {
            let (ma, mb) = (mu_a[[r, c]], mu_b[[r, c]]);
            let va = aa[[r, c]] - ma * ma;
            let vb = bb[[r, c]] - mb * mb;
            let cov = ab[[r, c]] - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / (h * w) as f64)
}

/// Per-view metric row.
#[derive(Debug, Clone)]
pub struct ViewEval {
    pub t: usize,
    pub s: usize,
    pub psnr: PsnrResult,
    pub ssim: f64,
}

/// Evaluation over the synthesized views of a reconstruction.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<ViewEval>,
    /// Mean PSNR over non-identical views (None when every view matched
    /// exactly).
    pub avg_psnr_db: Option<f64>,
    pub n_identical: usize,
    pub avg_ssim: f64,
    pub scene: String,
    pub alpha_a: usize,
    pub checkpoint: String,
}

impl EvalReport {
    /// `view_t,view_s,psnr,ssim` rows plus one `average` summary line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("view_t,view_s,psnr,ssim\n");
        for r in &self.rows {
            let p = match r.psnr {
                PsnrResult::Identical => "identical".to_string(),
                PsnrResult::Db(v) => fmt_g12(v),
            };
            out.push_str(&format!("{},{},{},{}\n", r.t, r.s, p, fmt_g12(r.ssim)));
        }
        let avg = self
            .avg_psnr_db
            .map(fmt_g12)
            .unwrap_or_else(|| "identical".to_string());
        out.push_str(&format!("average,,{},{}\n", avg, fmt_g12(self.avg_ssim)));
        out
    }
}

/// Luma plane of one view.
pub fn view_luma(lf: &LightField4D, t: usize, s: usize) -> Array2<f64> {
    let mut out = Array2::zeros((lf.n_v(), lf.n_u()));
    for v in 0..lf.n_v() {
        for u in 0..lf.n_u() {
            out[[v, u]] = match lf.colorspace() {
                Colorspace::Luma | Colorspace::YCbCr => lf.get(t, s, v, u, 0),
                Colorspace::Rgb => rgb_pixel_luma(
                    lf.get(t, s, v, u, 0),
                    lf.get(t, s, v, u, 1),
                    lf.get(t, s, v, u, 2),
                ),
            };
        }
    }
    out
}

/// Compare a reconstruction against ground truth on the masked (synthesized)
/// view positions only; input positions never enter the averages.
pub fn evaluate(
    recon: &LightField4D,
    truth: &LightField4D,
    mask: &[(usize, usize)],
    pool: &Pool,
) -> Result<EvalReport> {
    if recon.n_t() != truth.n_t()
        || recon.n_s() != truth.n_s()
        || recon.n_v() != truth.n_v()
        || recon.n_u() != truth.n_u()
    {
        return Err(Error::ShapeMismatch("reconstruction and truth grids differ".into()));
    }
    for &(t, s) in mask {
        if t >= recon.n_t() || s >= recon.n_s() {
            return Err(Error::IndexOutOfRange(format!("mask view ({t},{s})")));
        }
    }
    let rows: Vec<ViewEval> = pool
        .map(mask, |&(t, s)| {
            let a = view_luma(recon, t, s);
            let b = view_luma(truth, t, s);
            let psnr = psnr(&a, &b, 1.0).expect("shapes equal");
            let ssim = ssim(&a, &b, 1.0).expect("shapes equal");
            ViewEval { t, s, psnr, ssim }
        });
    let finite: Vec<f64> = rows.iter().filter_map(|r| r.psnr.db()).collect();
    let n_identical = rows.len() - finite.len();
    let avg_psnr_db = if finite.is_empty() {
        None
    } else {
        Some(finite.iter().sum::<f64>() / finite.len() as f64)
    };
    let avg_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / rows.len().max(1) as f64;
    Ok(EvalReport {
        rows,
        avg_psnr_db,
        n_identical,
        avg_ssim,
        scene: String::new(),
        alpha_a: 0,
        checkpoint: String::new(),
    })
}

/// All grid positions not on the sparse input lattice `(alpha*t, alpha*s)`.
pub fn synthesized_mask(n_t_out: usize, n_s_out: usize, alpha_a: usize) -> Vec<(usize, usize)> {
    let mut mask = Vec::new();
    for t in 0..n_t_out {
        for s in 0..n_s_out {
            if t % alpha_a != 0 || s % alpha_a != 0 {
                mask.push((t, s));
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_flagged() {
        let a = Array2::from_shape_fn((16, 16), |(r, c)| ((r + c) % 7) as f64 / 7.0);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PsnrResult::Identical);
        assert_eq!(ssim(&a, &a, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn uniform_difference_closed_form() {
        let a = Array2::from_elem((8, 8), 0.6);
        let b = Array2::from_elem((8, 8), 0.5);
        match psnr(&a, &b, 1.0).unwrap() {
            PsnrResult::Db(v) => assert!((v - 20.0).abs() < 1e-12),
            _ => panic!("expected finite PSNR"),
        }
    }

    #[test]
    fn ssim_detects_inversion() {
        let a = Array2::from_shape_fn((20, 20), |(r, c)| ((r * 3 + c) % 13) as f64 / 13.0);
        let b = a.mapv(|x| 1.0 - x);
        assert!(ssim(&a, &b, 1.0).unwrap() < 1.0);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Array2::zeros((8, 20));
        assert!(ssim(&a, &a, 1.0).is_err());
    }

    #[test]
    fn psnr_shape_mismatch() {
        let a = Array2::zeros((4, 4));
        let b = Array2::zeros((4, 5));
        assert!(psnr(&a, &b, 1.0).is_err());
    }

    #[test]
    fn mask_excludes_input_lattice() {
        let mask = synthesized_mask(7, 7, 3);
        assert_eq!(mask.len(), 49 - 9);
        assert!(!mask.contains(&(0, 0)));
        assert!(!mask.contains(&(3, 6)));
        assert!(mask.contains(&(1, 0)));
    }
}
