//! Fourier-domain aliasing analysis and Gaussian pre-filter design.
//!
//! An EPI whose per-view disparity exceeds one pixel is angularly
//! undersampled: spectral copies of its line spectrum wrap into the band. A
//! spatial-axis Gaussian pre-filter can suppress the copies; this module
//! quantifies how strong it has to be.
//!
//! The designed filter reduces the amplitude at the lowest-frequency point of
//! the first spectral copy (`P_b`) to `1/beta` of the center amplitude
//! (`P_a`). Writing the filter's frequency response as
//! `F(omega) = exp(-(omega - c)^2 * 2 * pi^2 * sigma^2)` and solving that
//! condition gives the shape parameter
//!
//! ```text
//! sigma = sqrt( -ln(amp_a / (beta * amp_b)) / (2 * pi^2 * (omega_u(P_b) - c)^2) )
//! ```
//!
//! Unit conventions, fixed here: spectral coordinates are stored normalized
//! to cycles/sample in `[-0.5, 0.5)` with the center `c` at 0; inside
//! [`shape_param`] the offset is converted to DFT bins (`omega * width`), so
//! `sigma` comes out in units of the image width. The image-domain kernel
//! size is then `16 * sigma * c_u + 1` rounded up to odd, with `c_u` the
//! spatial half-width in pixels — i.e. a window of +-4 standard deviations of
//! the pixel-domain Gaussian (`sigma_px = 2 * sigma * c_u`).
//!
//! Sweeping the analysis over spatial downsampling scales shows the point of
//! the exercise: the required kernel size falls off faster than the linear
//! scale prediction, so shrinking the spatial scale beats enlarging the
//! pre-filter.

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::io::fmt_g12;
use crate::lightfield::Epi;
use crate::pyramid::spatial_downsample;

/// Spectrum center and first-replica sample located by [`locate_points`].
///
/// Coordinates are `(omega_s, omega_u)` in cycles/sample, DC-centered.
#[derive(Debug, Clone)]
pub struct SpectralPoints {
    pub p_a: (f64, f64),
    pub p_b: (f64, f64),
    pub amp_a: f64,
    pub amp_b: f64,
    /// Spatial half-width in pixels (center coordinate of the image axis).
    pub c_u: usize,
    /// Spectrum dimensions the coordinates refer to.
    pub n_a: usize,
    pub n_w: usize,
}

impl SpectralPoints {
    /// `P_b` spatial offset from the center, in DFT bins.
    pub fn p_b_bin_offset(&self) -> f64 {
        self.p_b.1 * self.n_w as f64
    }
}

/// One row of the scale/beta sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct AliasRow {
    pub scale: usize,
    pub beta: f64,
    pub sigma: f64,
    pub kernel_size: usize,
}

/// Sweep result reproducing the sigma-vs-scale and kernel-size-vs-scale
/// curves.
#[derive(Debug, Clone)]
pub struct AliasReport {
    pub rows: Vec<AliasRow>,
    pub d_max: f64,
    pub angular_rate: usize,
    /// Whether a Hann window was applied along the spatial axis before the
    /// DFT (recommended for non-periodic real images).
    pub hann_window: bool,
}

impl AliasReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scale,beta,sigma,kernel_size\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.scale,
                fmt_g12(r.beta),
                fmt_g12(r.sigma),
                r.kernel_size
            ));
        }
        out
    }
}

fn fft_1d_rows(data: &mut Array2<Complex<f64>>, planner: &mut FftPlanner<f64>) {
    let n = data.ncols();
    let fft = planner.plan_fft_forward(n);
    for mut row in data.rows_mut() {
        let mut buf: Vec<Complex<f64>> = row.iter().cloned().collect();
        fft.process(&mut buf);
        for (dst, src) in row.iter_mut().zip(buf) {
            *dst = src;
        }
    }
}

fn fftshift_index(j: usize, n: usize) -> usize {
    (j + n - n / 2) % n
}

/// Centered amplitude spectrum of an EPI: `|DFT2|` with the zero frequency
/// at array index `(n_a/2, n_w/2)`. Optionally applies a Hann window along
/// the spatial axis first.
pub fn dft2_amplitude(epi: &Epi, hann_window: bool) -> Array2<f64> {
    let (n_a, n_w) = epi.data().dim();
    let mut cx = Array2::from_shape_fn((n_a, n_w), |(a, w)| {
        let mut v = epi.data()[[a, w]];
        if hann_window && n_w > 1 {
            let x = std::f64::consts::TAU * w as f64 / (n_w - 1) as f64;
            v *= 0.5 * (1.0 - x.cos());
        }
        Complex::new(v, 0.0)
    });
    let mut planner = FftPlanner::new();
    fft_1d_rows(&mut cx, &mut planner);
    let mut cx_t = cx.t().to_owned();
    fft_1d_rows(&mut cx_t, &mut planner);
    let spec = cx_t.t().to_owned();
    Array2::from_shape_fn((n_a, n_w), |(a, w)| {
        spec[[fftshift_index(a, n_a), fftshift_index(w, n_w)]].norm()
    })
}

/// Locate the spectrum center `P_a` and the lowest-frequency sample of the
/// first spectral copy `P_b`.
///
/// `d_max` is the largest per-view-step disparity of the EPI the spectrum was
/// computed from; the first replica crosses the spatial-frequency axis at
/// `omega_u = 1/d_max` cycles/sample (one angular replica period per view
/// sample). The seed is refined to the strongest bin within a +-2-bin window
/// clipped to the band. `angular_rate` records the decimation that produced
/// the EPI; it does not move the crossing, which depends only on the EPI's
/// own disparities.
pub fn locate_points(
    spectrum: &Array2<f64>,
    angular_rate: usize,
    d_max: f64,
    c_u: usize,
) -> Result<SpectralPoints> {
    let (n_a, n_w) = spectrum.dim();
    if n_a < 2 || n_w < 2 {
        return Err(Error::BadConfig("spectrum must be at least 2x2".into()));
    }
    if angular_rate < 1 {
        return Err(Error::BadConfig("angular_rate must be >= 1".into()));
    }
    if d_max <= 0.0 {
        return Err(Error::BadConfig("d_max must be positive".into()));
    }
    if c_u != n_w / 2 {
        return Err(Error::BadConfig(format!(
            "c_u = {c_u} does not match spectrum half-width {}",
            n_w / 2
        )));
    }
    let (ca, cw) = (n_a / 2, n_w / 2);
    let amp_a = spectrum[[ca, cw]];
    if amp_a <= 0.0 {
        return Err(Error::InvalidValue("center amplitude is zero".into()));
    }

    // Replica crossing in bins; at or beyond Nyquist there is nothing to
    // suppress (the EPI is densely sampled for its content).
    let seed = (n_w as f64 / d_max).round() as usize;
    let max_off = cw.saturating_sub(1).min(n_w - 1 - cw);
    if seed >= n_w / 2 || seed.saturating_sub(2) > max_off {
        return Err(Error::NoAliasing { d_max });
    }

    let lo = seed.saturating_sub(2).max(1);
    let hi = (seed + 2).min(max_off);
    let s_lo = -(2isize.min(ca as isize));
    let s_hi = 2isize.min((n_a - 1 - ca) as isize);
    let mut best = (0isize, lo, f64::NEG_INFINITY);
    for ds in s_lo..=s_hi {
        for du in lo..=hi {
            let val = spectrum[[(ca as isize + ds) as usize, cw + du]];
            if val > best.2 {
                best = (ds, du, val);
            }
        }
    }
    let (ds, du, amp_b) = best;
    if !(amp_b > 0.0) {
        return Err(Error::InvalidValue("replica amplitude is zero".into()));
    }
    Ok(SpectralPoints {
        p_a: (0.0, 0.0),
        p_b: (ds as f64 / n_a as f64, du as f64 / n_w as f64),
        amp_a,
        amp_b,
        c_u,
        n_a,
        n_w,
    })
}

/// Shape parameter of the pre-filter Gaussian (in image-width units).
///
/// Errors with [`Error::FilterUnnecessary`] when the replica is already at or
/// below the target amplitude (`amp_a / (beta * amp_b) >= 1`).
pub fn shape_param(points: &SpectralPoints, beta: f64) -> Result<f64> {
    if !(10.0..=300.0).contains(&beta) {
        return Err(Error::BadConfig(format!("beta {beta} outside the analysis range [10, 300]")));
    }
    let ratio = points.amp_a / (beta * points.amp_b);
    if ratio >= 1.0 {
        return Err(Error::FilterUnnecessary { beta });
    }
    let delta_bins = points.p_b_bin_offset();
    if delta_bins == 0.0 {
        return Err(Error::InvalidValue("P_b coincides with the center".into()));
    }
    let radicand = -ratio.ln() / (2.0 * std::f64::consts::PI.powi(2) * delta_bins * delta_bins);
    Ok(radicand.sqrt())
}

/// Image-domain kernel size for a shape parameter: `16 * sigma * c_u + 1`
/// equivalent, rounded and forced up to the nearest odd integer. `sigma == 0`
/// gives the identity filter (size 1).
pub fn kernel_size_px(sigma: f64, c_u: usize) -> Result<usize> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidValue(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    if c_u < 1 {
        return Err(Error::BadConfig("c_u must be >= 1".into()));
    }
    let size = (16.0 * sigma * c_u as f64).round() as usize;
    Ok(if size % 2 == 0 { size + 1 } else { size })
}

/// Pixel-domain standard deviation corresponding to a width-unit sigma.
pub fn sigma_px(sigma: f64, c_u: usize) -> f64 {
    2.0 * sigma * c_u as f64
}

/// Apply the designed pre-filter along the spatial axis with circular
/// wrap-around, so the operation is exactly a Hadamard product in the
/// frequency domain. Used to verify the attenuation contract and to
/// reproduce the filtered-spectrum picture.
pub fn apply_prefilter(epi: &Epi, sigma: f64, c_u: usize) -> Result<Epi> {
    let size = kernel_size_px(sigma, c_u)?;
    if size == 1 {
        return Ok(epi.clone());
    }
    let s_px = sigma_px(sigma, c_u);
    let half = (size / 2) as isize;
    let mut taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half as f64;
            (-d * d / (2.0 * s_px * s_px)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    let (n_a, n_w) = epi.data().dim();
    let mut out = Array2::zeros((n_a, n_w));
    for a in 0..n_a {
        for w in 0..n_w {
            let mut acc = 0.0;
            for (k, &kv) in taps.iter().enumerate() {
                let idx = (w as isize + k as isize - half).rem_euclid(n_w as isize) as usize;
                acc += kv * epi.data()[[a, idx]];
            }
            out[[a, w]] = acc;
        }
    }
    Epi::new(out, epi.axis_tag())
}

/// Run the full analysis over a grid of spatial downsampling scales and
/// amplitude scales.
///
/// At scale `a` the EPI is spatially downsampled by `a` (disparities shrink
/// to `d_max / a`), the spectrum and points recomputed, and a row emitted per
/// beta. Scales must be powers of two starting at 1.
pub fn sweep(
    epi: &Epi,
    scales: &[usize],
    betas: &[f64],
    angular_rate: usize,
    d_max: f64,
    hann_window: bool,
) -> Result<AliasReport> {
    if scales.is_empty() || scales[0] != 1 {
        return Err(Error::BadConfig("scales must start at 1".into()));
    }
    for &s in scales {
        if !s.is_power_of_two() {
            return Err(Error::BadConfig(format!("scale {s} is not a power of two")));
        }
    }
    let mut rows = Vec::with_capacity(scales.len() * betas.len());
    for &scale in scales {
        let scaled = spatial_downsample(epi, scale, 2)?;
        let spec = dft2_amplitude(&scaled, hann_window);
        let points = locate_points(&spec, angular_rate, d_max / scale as f64, scaled.n_w() / 2)?;
        for &beta in betas {
            let sigma = shape_param(&points, beta)?;
            let kernel_size = kernel_size_px(sigma, points.c_u)?;
            rows.push(AliasRow { scale, beta, sigma, kernel_size });
        }
    }
    Ok(AliasReport { rows, d_max, angular_rate, hann_window })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lightfield::EpiAxis;

    fn epi_from_fn(n_a: usize, n_w: usize, f: impl Fn(usize, usize) -> f64) -> Epi {
        Epi::new(Array2::from_shape_fn((n_a, n_w), |(a, w)| f(a, w)), EpiAxis::US).unwrap()
    }

    #[test]
    fn constant_epi_is_dc_only() {
        let c = 0.4;
        let epi = epi_from_fn(8, 16, |_, _| c);
        let amp = dft2_amplitude(&epi, false);
        assert!((amp[[4, 8]] - c * 8.0 * 16.0).abs() < 1e-9);
        let off_dc: f64 = amp
            .indexed_iter()
            .filter(|((a, w), _)| !(*a == 4 && *w == 8))
            .map(|(_, v)| *v)
            .fold(0.0, f64::max);
        assert!(off_dc < 1e-9);
    }

    #[test]
    fn dense_epi_reports_no_aliasing() {
        let epi = epi_from_fn(8, 32, |a, w| {
            0.5 + 0.4 * (std::f64::consts::TAU * (w as f64 - 0.5 * a as f64) / 8.0).cos()
        });
        let spec = dft2_amplitude(&epi, false);
        // disparity <= 1: replica crossing is at or beyond Nyquist
        assert!(matches!(
            locate_points(&spec, 1, 1.0, 16),
            Err(Error::NoAliasing { .. })
        ));
    }

    #[test]
    fn boundary_beta_is_filter_unnecessary() {
        let pts = SpectralPoints {
            p_a: (0.0, 0.0),
            p_b: (0.0, 0.25),
            amp_a: 100.0,
            amp_b: 10.0,
            c_u: 16,
            n_a: 8,
            n_w: 32,
        };
        assert!(matches!(shape_param(&pts, 10.0), Err(Error::FilterUnnecessary { .. })));
        // Just past the boundary the parameter exists and is tiny.
        let s = shape_param(&pts, 10.1).unwrap();
        assert!(s > 0.0 && s < 0.01);
    }

    #[test]
    fn sigma_monotone_in_beta_and_offset() {
        let mut pts = SpectralPoints {
            p_a: (0.0, 0.0),
            p_b: (0.0, 0.125),
            amp_a: 50.0,
            amp_b: 10.0,
            c_u: 32,
            n_a: 16,
            n_w: 64,
        };
        let s10 = shape_param(&pts, 10.0).unwrap();
        let s300 = shape_param(&pts, 300.0).unwrap();
        assert!(s300 > s10, "sigma must grow with beta: {s10} vs {s300}");
        pts.p_b.1 = 0.25;
        let s_far = shape_param(&pts, 10.0).unwrap();
        assert!(s_far < s10, "sigma must shrink with replica distance");
    }

    #[test]
    fn kernel_size_rules() {
        assert_eq!(kernel_size_px(0.0, 16).unwrap(), 1);
        let k = kernel_size_px(0.02, 64).unwrap();
        assert_eq!(k % 2, 1);
        // halving c_u halves the size-1 term (up to odd rounding)
        let k_half = kernel_size_px(0.02, 32).unwrap();
        assert!((k as f64 - 1.0) / (k_half as f64 - 1.0) <= 2.4);
        assert!(kernel_size_px(-0.1, 16).is_err());
    }

    #[test]
    fn sweep_validates_scales() {
        let epi = epi_from_fn(8, 32, |_, _| 0.5);
        assert!(sweep(&epi, &[2, 4], &[100.0], 3, 4.0, false).is_err());
        assert!(sweep(&epi, &[1, 3], &[100.0], 3, 4.0, false).is_err());
    }
}
