//! 4D light-field container, EPI slicing, and color conversion.
//!
//! A light field is stored as `L(t, s, v, u, c)`: two angular axes `(t, s)`
//! (camera grid row/column), two spatial axes `(v, u)` (pixel row/column) and
//! a channel axis. A 3D light field is the `n_t == 1` case. All samples are
//! `f64` in `[0, 1]`.
//!
//! An [`Epi`] is a 2D slice with one angular and one spatial axis. Scene
//! points trace lines in an EPI whose slope (pixels per view step) equals
//! their disparity.

use ndarray::{Array2, Array5, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Color interpretation of the channel axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Colorspace {
    Rgb,
    YCbCr,
    Luma,
}

impl Colorspace {
    pub fn channels(self) -> usize {
        match self {
            Colorspace::Rgb | Colorspace::YCbCr => 3,
            Colorspace::Luma => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Colorspace::Rgb => "rgb",
            Colorspace::YCbCr => "ycbcr",
            Colorspace::Luma => "luma",
        }
    }
}

/// Which light-field slice produced an EPI.
///
/// `US`: fixed `(v*, t*)`, axes `(s, u)` — densifies the `s` grid axis.
/// `VT`: fixed `(u*, s*)`, axes `(t, v)` — densifies the `t` grid axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpiAxis {
    US,
    VT,
}

/// 2D epipolar plane image: rows are views (angular), columns are pixels
/// (spatial).
#[derive(Debug, Clone, PartialEq)]
pub struct Epi {
    data: Array2<f64>,
    axis: EpiAxis,
}

impl Epi {
    pub fn new(data: Array2<f64>, axis: EpiAxis) -> Result<Self> {
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidValue("EPI contains non-finite samples".into()));
        }
        Ok(Epi { data, axis })
    }

    /// Angular size (number of views).
    pub fn n_a(&self) -> usize {
        self.data.nrows()
    }

    /// Spatial size (pixels).
    pub fn n_w(&self) -> usize {
        self.data.ncols()
    }

    pub fn axis_tag(&self) -> EpiAxis {
        self.axis
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    /// Same data under a different axis tag (used when synthesized EPIs are
    /// re-sliced in the orthogonal direction).
    pub fn with_axis(mut self, axis: EpiAxis) -> Self {
        self.axis = axis;
        self
    }

    /// Keep rows `0, rate, 2*rate, ...`. Requires `(n_a - 1) % rate == 0` so
    /// the last view is kept and the output has `(n_a - 1)/rate + 1` rows.
    pub fn angular_decimate(&self, rate: usize) -> Result<Epi> {
        if rate == 0 {
            return Err(Error::InvalidValue("decimation rate must be >= 1".into()));
        }
        let n_a = self.n_a();
        if (n_a - 1) % rate != 0 {
            return Err(Error::BadDecimation { n_a, rate });
        }
        if rate == 1 {
            return Ok(self.clone());
        }
        let kept = (n_a - 1) / rate + 1;
        let mut out = Array2::zeros((kept, self.n_w()));
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            row.assign(&self.data.row(i * rate));
        }
        Ok(Epi { data: out, axis: self.axis })
    }
}

/// 4D radiance sample array with axis metadata.
#[derive(Debug, Clone)]
pub struct LightField4D {
    /// Samples indexed `(t, s, v, u, c)`.
    samples: Array5<f64>,
    colorspace: Colorspace,
}

impl LightField4D {
    /// All-zero light field of the given extents.
    pub fn zeros(n_t: usize, n_s: usize, n_v: usize, n_u: usize, colorspace: Colorspace) -> Result<Self> {
        if n_t == 0 || n_s == 0 || n_v == 0 || n_u == 0 {
            return Err(Error::BadConfig("light-field extents must be >= 1".into()));
        }
        Ok(LightField4D {
            samples: Array5::zeros((n_t, n_s, n_v, n_u, colorspace.channels())),
            colorspace,
        })
    }

    /// Wrap an existing sample array, validating range and finiteness.
    pub fn from_samples(samples: Array5<f64>, colorspace: Colorspace) -> Result<Self> {
        let (n_t, n_s, n_v, n_u, c) = samples.dim();
        if n_t == 0 || n_s == 0 || n_v == 0 || n_u == 0 {
            return Err(Error::BadConfig("light-field extents must be >= 1".into()));
        }
        if c != colorspace.channels() {
            return Err(Error::ShapeMismatch(format!(
                "channel axis is {c}, colorspace {} needs {}",
                colorspace.name(),
                colorspace.channels()
            )));
        }
        if !samples.iter().all(|x| x.is_finite() && (0.0..=1.0).contains(x)) {
            return Err(Error::InvalidValue(
                "light-field samples must be finite and in [0,1]".into(),
            ));
        }
        Ok(LightField4D { samples, colorspace })
    }

    pub fn n_t(&self) -> usize {
        self.samples.dim().0
    }
    pub fn n_s(&self) -> usize {
        self.samples.dim().1
    }
    pub fn n_v(&self) -> usize {
        self.samples.dim().2
    }
    pub fn n_u(&self) -> usize {
        self.samples.dim().3
    }
    pub fn channels(&self) -> usize {
        self.samples.dim().4
    }
    pub fn colorspace(&self) -> Colorspace {
        self.colorspace
    }
    pub fn samples(&self) -> &Array5<f64> {
        &self.samples
    }

    /// Direct sample access (bounds-checked by ndarray).
    pub fn get(&self, t: usize, s: usize, v: usize, u: usize, c: usize) -> f64 {
        self.samples[[t, s, v, u, c]]
    }

    pub fn set(&mut self, t: usize, s: usize, v: usize, u: usize, c: usize, value: f64) {
        self.samples[[t, s, v, u, c]] = value;
    }

    /// One view image `(v, u)` of one channel.
    pub fn view_channel(&self, t: usize, s: usize, c: usize) -> ArrayView2<'_, f64> {
        self.samples.slice(ndarray::s![t, s, .., .., c])
    }

    fn check_epi_indices(
        &self,
        axis: EpiAxis,
        fixed_spatial: usize,
        fixed_angular: usize,
        channel: usize,
    ) -> Result<()> {
        let (sp_max, an_max) = match axis {
            EpiAxis::US => (self.n_v(), self.n_t()),
            EpiAxis::VT => (self.n_u(), self.n_s()),
        };
        if fixed_spatial >= sp_max || fixed_angular >= an_max || channel >= self.channels() {
            return Err(Error::IndexOutOfRange(format!(
                "EPI slice ({axis:?}, spatial {fixed_spatial}, angular {fixed_angular}, channel {channel}) \
                 outside light field {}x{}x{}x{}x{}",
                self.n_t(),
                self.n_s(),
                self.n_v(),
                self.n_u(),
                self.channels()
            )));
        }
        Ok(())
    }

    /// Extract an EPI.
    ///
    /// `US`: `data[s, u] = L(t = fixed_angular, s, v = fixed_spatial, u, c)`.
    /// `VT`: `data[t, v] = L(t, s = fixed_angular, v, u = fixed_spatial, c)`.
    pub fn extract_epi(
        &self,
        axis: EpiAxis,
        fixed_spatial: usize,
        fixed_angular: usize,
        channel: usize,
    ) -> Result<Epi> {
        self.check_epi_indices(axis, fixed_spatial, fixed_angular, channel)?;
        let data = match axis {
            EpiAxis::US => {
                let mut d = Array2::zeros((self.n_s(), self.n_u()));
                for s in 0..self.n_s() {
                    for u in 0..self.n_u() {
                        d[[s, u]] = self.samples[[fixed_angular, s, fixed_spatial, u, channel]];
                    }
                }
                d
            }
            EpiAxis::VT => {
                let mut d = Array2::zeros((self.n_t(), self.n_v()));
                for t in 0..self.n_t() {
                    for v in 0..self.n_v() {
                        d[[t, v]] = self.samples[[t, fixed_angular, v, fixed_spatial, channel]];
                    }
                }
                d
            }
        };
        Ok(Epi { data, axis })
    }

    /// Write an EPI back into the addressed slice; only that slice changes.
    pub fn insert_epi(
        &mut self,
        epi: &Epi,
        axis: EpiAxis,
        fixed_spatial: usize,
        fixed_angular: usize,
        channel: usize,
    ) -> Result<()> {
        self.check_epi_indices(axis, fixed_spatial, fixed_angular, channel)?;
        let (want_a, want_w) = match axis {
            EpiAxis::US => (self.n_s(), self.n_u()),
            EpiAxis::VT => (self.n_t(), self.n_v()),
        };
        if epi.n_a() != want_a || epi.n_w() != want_w {
            return Err(Error::ShapeMismatch(format!(
                "EPI is {}x{}, slice needs {}x{}",
                epi.n_a(),
                epi.n_w(),
                want_a,
                want_w
            )));
        }
        match axis {
            EpiAxis::US => {
                for s in 0..want_a {
                    for u in 0..want_w {
                        self.samples[[fixed_angular, s, fixed_spatial, u, channel]] = epi.data[[s, u]];
                    }
                }
            }
            EpiAxis::VT => {
                for t in 0..want_a {
                    for v in 0..want_w {
                        self.samples[[t, fixed_angular, v, fixed_spatial, channel]] = epi.data[[t, v]];
                    }
                }
            }
        }
        Ok(())
    }
}

// --- Color conversion -------------------------------------------------------
//
// BT.601 full-range, written from the exact Kr/Kg/Kb definition rather than
// rounded literature constants so the round trip closes to f64 rounding.

const KR: f64 = 0.299;
const KB: f64 = 0.114;
const KG: f64 = 1.0 - KR - KB;

/// One RGB pixel to full-range YCbCr (all components in [0,1], neutral chroma
/// at 0.5).
#[inline]
pub fn rgb_pixel_to_ycbcr(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let y = KR * r + KG * g + KB * b;
    let cb = (b - y) / (2.0 * (1.0 - KB)) + 0.5;
    let cr = (r - y) / (2.0 * (1.0 - KR)) + 0.5;
    (y, cb, cr)
}

/// Inverse of [`rgb_pixel_to_ycbcr`], clamped to [0,1].
#[inline]
pub fn ycbcr_pixel_to_rgb(y: f64, cb: f64, cr: f64) -> (f64, f64, f64) {
    let r = y + 2.0 * (1.0 - KR) * (cr - 0.5);
    let b = y + 2.0 * (1.0 - KB) * (cb - 0.5);
    let g = (y - KR * r - KB * b) / KG;
    (r.clamp(0.0, 1.0), g.clamp(0.0, 1.0), b.clamp(0.0, 1.0))
}

/// Luma of an RGB pixel.
#[inline]
pub fn rgb_pixel_luma(r: f64, g: f64, b: f64) -> f64 {
    KR * r + KG * g + KB * b
}

/// Convert a whole RGB light field to YCbCr.
pub fn rgb_to_ycbcr(lf: &LightField4D) -> Result<LightField4D> {
    if lf.colorspace != Colorspace::Rgb {
        return Err(Error::WrongColorspace {
            expected: "rgb".into(),
            got: lf.colorspace.name().into(),
        });
    }
    let mut out = lf.samples.clone();
    for mut px in out.rows_mut() {
        let (y, cb, cr) = rgb_pixel_to_ycbcr(px[0], px[1], px[2]);
        px[0] = y.clamp(0.0, 1.0);
        px[1] = cb.clamp(0.0, 1.0);
        px[2] = cr.clamp(0.0, 1.0);
    }
    Ok(LightField4D { samples: out, colorspace: Colorspace::YCbCr })
}

/// Convert a YCbCr light field back to RGB (clamping out-of-gamut values).
pub fn ycbcr_to_rgb(lf: &LightField4D) -> Result<LightField4D> {
    if lf.colorspace != Colorspace::YCbCr {
        return Err(Error::WrongColorspace {
            expected: "ycbcr".into(),
            got: lf.colorspace.name().into(),
        });
    }
    let mut out = lf.samples.clone();
    for mut px in out.rows_mut() {
        let (r, g, b) = ycbcr_pixel_to_rgb(px[0], px[1], px[2]);
        px[0] = r;
        px[1] = g;
        px[2] = b;
    }
    Ok(LightField4D { samples: out, colorspace: Colorspace::Rgb })
}
