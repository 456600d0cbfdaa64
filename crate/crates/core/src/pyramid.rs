//! Multi-scale EPI decomposition and its exact inverse.
//!
//! An EPI is decomposed along the spatial axis only; the angular axis is
//! untouched at every level. The structure holds one low-spatial-scale image
//! (level 1) plus, for each finer level `p = 2..=P`, a residual and a blurred
//! copy of that residual:
//!
//! ```text
//! level1 = E  downsampled by alpha_s^(P-1)
//! R_p    = (E downsampled by alpha_s^(P-p)) - upsample(E downsampled by alpha_s^(P-p+1))
//! ```
//!
//! Because the residuals are defined as exactly those differences,
//! [`collapse`] (upsample level 1 octave by octave, adding the unblurred
//! residuals) reconstructs the input to floating-point rounding. That
//! identity is the main correctness lever for everything downstream.
//!
//! Conventions, fixed here and relied on elsewhere:
//! - decimation filter: 5-tap Gaussian per octave (sigma from the size rule
//!   below), reflect padding, then keep every `alpha_s`-th column;
//! - upsampling: linear interpolation, endpoints clamped;
//! - `gaussian_kernel_1d(size)` uses `sigma = (size - 1) / 8`, i.e. the
//!   window covers +-4 sigma.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::lightfield::Epi;

/// Decomposition parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidConfig {
    /// Number of levels `P`.
    pub levels: usize,
    /// Spatial scale gap between neighboring levels.
    pub alpha_s: usize,
    /// Blur kernel size per residual level `p = 2..=P` (so `levels - 1`
    /// entries, odd, nondecreasing).
    pub level_kernel_sizes: Vec<usize>,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig { levels: 3, alpha_s: 2, level_kernel_sizes: vec![5, 13] }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::BadConfig("pyramid needs at least 2 levels".into()));
        }
        if self.alpha_s < 2 {
            return Err(Error::BadConfig("alpha_s must be >= 2".into()));
        }
        if self.level_kernel_sizes.len() != self.levels - 1 {
            return Err(Error::BadConfig(format!(
                "need {} residual kernel sizes, got {}",
                self.levels - 1,
                self.level_kernel_sizes.len()
            )));
        }
        let mut prev = 3;
        for &k in &self.level_kernel_sizes {
            if k % 2 == 0 || k < 3 {
                return Err(Error::BadConfig(format!("kernel size {k} must be odd and >= 3")));
            }
            if k < prev {
                return Err(Error::BadConfig("kernel sizes must be nondecreasing".into()));
            }
            prev = k;
        }
        Ok(())
    }

    /// Total spatial downsampling factor of level 1: `alpha_s^(P-1)`.
    pub fn scale_factor(&self) -> usize {
        self.alpha_s.pow(self.levels as u32 - 1)
    }
}

/// The decomposition: level-1 image plus `(residual, blurred residual)`
/// pairs for levels `2..=P`, all sharing the input's angular size.
#[derive(Debug, Clone)]
pub struct LapEpiPyramid {
    pub level1: Epi,
    /// `residuals[p - 2]` is the pair for level `p`.
    pub residuals: Vec<(Epi, Epi)>,
    pub config: PyramidConfig,
}

impl LapEpiPyramid {
    pub fn n_a(&self) -> usize {
        self.level1.n_a()
    }

    /// Spatial width at full resolution (level P).
    pub fn full_width(&self) -> usize {
        self.residuals
            .last()
            .map(|(r, _)| r.n_w())
            .unwrap_or_else(|| self.level1.n_w())
    }
}

/// Normalized Gaussian taps for an odd window, `sigma = (size - 1) / 8`
/// (half-width of the window is 4 sigma). `size == 1` is the identity filter.
pub fn gaussian_kernel_1d(size: usize) -> Result<Vec<f64>> {
    if size % 2 == 0 {
        return Err(Error::EvenKernel(size));
    }
    if size == 1 {
        return Ok(vec![1.0]);
    }
    let sigma = (size - 1) as f64 / 8.0;
    let c = (size / 2) as f64;
    let mut taps: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    Ok(taps)
}

/// Half-sample reflection: ...2,1,0 | 0,1,2,... at each border.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Convolve every row (spatial axis) with `kernel`, reflect padding.
pub fn blur_rows_reflect(data: &Array2<f64>, kernel: &[f64]) -> Array2<f64> {
    let (n_a, n_w) = data.dim();
    let half = (kernel.len() / 2) as isize;
    let mut out = Array2::zeros((n_a, n_w));
    for a in 0..n_a {
        let row = data.row(a);
        for w in 0..n_w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let idx = reflect(w as isize + k as isize - half, n_w);
                acc += kv * row[idx];
            }
            out[[a, w]] = acc;
        }
    }
    out
}

fn one_octave_down(data: &Array2<f64>, base: usize) -> Array2<f64> {
    let kernel = gaussian_kernel_1d(5).expect("odd");
    let blurred = blur_rows_reflect(data, &kernel);
    let (n_a, n_w) = blurred.dim();
    let out_w = n_w / base;
    Array2::from_shape_fn((n_a, out_w), |(a, w)| blurred[[a, w * base]])
}

/// Downsample the spatial axis by `factor` (a power of `base`), one octave at
/// a time: 5-tap Gaussian blur then keep every `base`-th column. The angular
/// axis is untouched. Width must be divisible by `factor` (pad first).
pub fn spatial_downsample(epi: &Epi, factor: usize, base: usize) -> Result<Epi> {
    if factor == 0 || base < 2 {
        return Err(Error::BadConfig("factor >= 1 and base >= 2 required".into()));
    }
    if factor == 1 {
        return Ok(epi.clone());
    }
    let mut f = factor;
    let mut octaves = 0;
    while f > 1 {
        if f % base != 0 {
            return Err(Error::BadConfig(format!("factor {factor} is not a power of {base}")));
        }
        f /= base;
        octaves += 1;
    }
    if epi.n_w() % factor != 0 {
        return Err(Error::WidthNotDivisible { width: epi.n_w(), factor });
    }
    let mut data = epi.data().clone();
    for _ in 0..octaves {
        data = one_octave_down(&data, base);
    }
    Epi::new(data, epi.axis_tag())
}

/// Upsample the spatial axis by `factor` with linear interpolation (endpoints
/// clamped). Output width is `n_w * factor`; original samples are hit
/// exactly at positions `factor * i`.
pub fn spatial_upsample(epi: &Epi, factor: usize) -> Epi {
    if factor == 1 {
        return epi.clone();
    }
    let (n_a, n_w) = epi.data().dim();
    let out_w = n_w * factor;
    let mut out = Array2::zeros((n_a, out_w));
    for a in 0..n_a {
        for j in 0..out_w {
            let pos = j as f64 / factor as f64;
            let i0 = pos.floor() as usize;
            let frac = pos - i0 as f64;
            let i1 = (i0 + 1).min(n_w - 1);
            out[[a, j]] = (1.0 - frac) * epi.data()[[a, i0]] + frac * epi.data()[[a, i1]];
        }
    }
    Epi::new(out, epi.axis_tag()).expect("finite")
}

/// Build the decomposition. The input width must already be a multiple of
/// `alpha_s^(P-1)` (see [`pad_width_reflect`]).
pub fn build_lapepi(epi: &Epi, cfg: &PyramidConfig) -> Result<LapEpiPyramid> {
    cfg.validate()?;
    let factor = cfg.scale_factor();
    if epi.n_w() % factor != 0 {
        return Err(Error::WidthNotDivisible { width: epi.n_w(), factor });
    }
    // gauss[p - 1] holds the level-p image of the smoothing stack:
    // gauss[P - 1] is the input itself, gauss[0] the coarsest.
    let mut gauss: Vec<Epi> = Vec::with_capacity(cfg.levels);
    gauss.push(epi.clone());
    for _ in 1..cfg.levels {
        let prev = gauss.last().unwrap();
        let down = Epi::new(one_octave_down(prev.data(), cfg.alpha_s), epi.axis_tag())?;
        gauss.push(down);
    }
    gauss.reverse();

    let mut residuals = Vec::with_capacity(cfg.levels - 1);
    for p in 2..=cfg.levels {
        let fine = &gauss[p - 1];
        let coarse_up = spatial_upsample(&gauss[p - 2], cfg.alpha_s);
        let r = Epi::new(fine.data() - coarse_up.data(), epi.axis_tag())?;
        let kernel = gaussian_kernel_1d(cfg.level_kernel_sizes[p - 2])?;
        let blurred = Epi::new(blur_rows_reflect(r.data(), &kernel), epi.axis_tag())?;
        residuals.push((r, blurred));
    }
    Ok(LapEpiPyramid { level1: gauss.swap_remove(0), residuals, config: cfg.clone() })
}

/// Invert [`build_lapepi`] using the unblurred residuals. This is a test and
/// verification tool; inference consumes the pyramid directly.
pub fn collapse(pyr: &LapEpiPyramid) -> Epi {
    let mut acc = pyr.level1.clone();
    for (r, _) in &pyr.residuals {
        let up = spatial_upsample(&acc, pyr.config.alpha_s);
        acc = Epi::new(up.data() + r.data(), acc.axis_tag()).expect("finite");
    }
    acc
}

/// Reflection-pad the spatial axis so the width becomes a multiple of
/// `multiple`. Returns the padded EPI and the `(left, right)` pad widths so
/// callers can crop results back.
pub fn pad_width_reflect(epi: &Epi, multiple: usize) -> (Epi, usize, usize) {
    let w = epi.n_w();
    let total = (multiple - w % multiple) % multiple;
    if total == 0 {
        return (epi.clone(), 0, 0);
    }
    let left = total / 2;
    let right = total - left;
    let (n_a, _) = epi.data().dim();
    let mut out = Array2::zeros((n_a, w + total));
    for a in 0..n_a {
        for j in 0..w + total {
            let src = reflect(j as isize - left as isize, w);
            out[[a, j]] = epi.data()[[a, src]];
        }
    }
    (Epi::new(out, epi.axis_tag()).expect("finite"), left, right)
}
