//! On-disk formats: PNG view directories with a JSON manifest, EPI PNGs,
//! atomic file writes, and stable CSV number formatting.
//!
//! A light field on disk is a directory containing `manifest.json` plus one
//! 8-bit PNG per view. The manifest declares the grid shape and a filename
//! pattern with `{t}` / `{s}` placeholders:
//!
//! ```json
//! { "rows": 3, "cols": 3, "pattern": "view_{t}_{s}.png", "colorspace": "rgb" }
//! ```
//!
//! Internal arithmetic is f64 in [0,1]; quantization to 8 bits happens only
//! here.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lightfield::{ycbcr_to_rgb, Colorspace, Epi, EpiAxis, LightField4D};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    /// Angular rows (`n_t`).
    pub rows: usize,
    /// Angular columns (`n_s`).
    pub cols: usize,
    /// Filename pattern with `{t}` and `{s}` placeholders.
    pub pattern: String,
    /// One of `rgb`, `ycbcr`, `luma`.
    pub colorspace: String,
}

impl Manifest {
    pub fn colorspace(&self) -> Result<Colorspace> {
        match self.colorspace.as_str() {
            "rgb" => Ok(Colorspace::Rgb),
            "ycbcr" => Ok(Colorspace::YCbCr),
            "luma" => Ok(Colorspace::Luma),
            other => Err(Error::Manifest(format!("unknown colorspace {other:?}"))),
        }
    }

    pub fn view_filename(&self, t: usize, s: usize) -> String {
        self.pattern
            .replace("{t}", &t.to_string())
            .replace("{s}", &s.to_string())
    }
}

/// Write bytes atomically: temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidValue(format!("not a file path: {}", path.display())))?;
    let tmp: PathBuf = dir.join(format!(
        ".{}.tmp-{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Format with 12 significant digits, `%g`-style. Deterministic, so CSV
/// outputs are byte-stable across runs.
pub fn fmt_g12(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let s = if (-4..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        format!("{:.*}", decimals, x)
    } else {
        format!("{:.11e}", x)
    };
    // Trim trailing zeros in the fractional part (stable canonical form).
    if s.contains('.') && !s.contains('e') {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        t.to_string()
    } else {
        s
    }
}

fn quantize(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_png(img: &DynamicImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

fn view_to_image(lf: &LightField4D, t: usize, s: usize) -> DynamicImage {
    let (h, w) = (lf.n_v() as u32, lf.n_u() as u32);
    if lf.channels() == 1 {
        let img = image::GrayImage::from_fn(w, h, |x, y| {
            image::Luma([quantize(lf.get(t, s, y as usize, x as usize, 0))])
        });
        DynamicImage::ImageLuma8(img)
    } else {
        let img = image::RgbImage::from_fn(w, h, |x, y| {
            image::Rgb([
                quantize(lf.get(t, s, y as usize, x as usize, 0)),
                quantize(lf.get(t, s, y as usize, x as usize, 1)),
                quantize(lf.get(t, s, y as usize, x as usize, 2)),
            ])
        });
        DynamicImage::ImageRgb8(img)
    }
}

/// Save a light field as a manifest-rooted directory of PNG views.
///
/// YCbCr fields are converted to RGB before quantization.
pub fn save_lightfield(lf: &LightField4D, dir: &Path) -> Result<()> {
    let lf_rgb;
    let lf = if lf.colorspace() == Colorspace::YCbCr {
        lf_rgb = ycbcr_to_rgb(lf)?;
        &lf_rgb
    } else {
        lf
    };
    std::fs::create_dir_all(dir)?;
    let manifest = Manifest {
        rows: lf.n_t(),
        cols: lf.n_s(),
        pattern: "view_{t}_{s}.png".to_string(),
        colorspace: lf.colorspace().name().to_string(),
    };
    for t in 0..lf.n_t() {
        for s in 0..lf.n_s() {
            let png = encode_png(&view_to_image(lf, t, s))?;
            atomic_write(&dir.join(manifest.view_filename(t, s)), &png)?;
        }
    }
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Manifest(e.to_string()))?;
    atomic_write(&dir.join(MANIFEST_NAME), json.as_bytes())?;
    Ok(())
}

/// Load a manifest-rooted view directory into a light field.
pub fn load_lightfield(dir: &Path) -> Result<LightField4D> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| {
        Error::Manifest(format!("cannot read {}: {e}", manifest_path.display()))
    })?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
    if manifest.rows == 0 || manifest.cols == 0 {
        return Err(Error::Manifest("grid shape must be at least 1x1".into()));
    }
    let colorspace = manifest.colorspace()?;

    let mut lf: Option<LightField4D> = None;
    for t in 0..manifest.rows {
        for s in 0..manifest.cols {
            let path = dir.join(manifest.view_filename(t, s));
            if !path.exists() {
                return Err(Error::MissingView { t, s, path: path.display().to_string() });
            }
            let img = image::open(&path)?;
            let (w, h) = (img.width() as usize, img.height() as usize);
            let lf = lf.get_or_insert_with(|| {
                LightField4D::zeros(manifest.rows, manifest.cols, h, w, colorspace)
                    .expect("nonzero extents")
            });
            if w != lf.n_u() || h != lf.n_v() {
                return Err(Error::InconsistentViewSize {
                    t,
                    s,
                    got_w: w,
                    got_h: h,
                    want_w: lf.n_u(),
                    want_h: lf.n_v(),
                });
            }
            match colorspace {
                Colorspace::Luma => {
                    let gray = img.to_luma8();
                    for (x, y, p) in gray.enumerate_pixels() {
                        lf.set(t, s, y as usize, x as usize, 0, p.0[0] as f64 / 255.0);
                    }
                }
                Colorspace::Rgb | Colorspace::YCbCr => {
                    let rgb = img.to_rgb8();
                    for (x, y, p) in rgb.enumerate_pixels() {
                        for c in 0..3 {
                            lf.set(t, s, y as usize, x as usize, c, p.0[c] as f64 / 255.0);
                        }
                    }
                }
            }
        }
    }
    Ok(lf.expect("grid is at least 1x1"))
}

/// Load a grayscale PNG as an EPI (rows = angular).
pub fn load_epi_png(path: &Path, axis: EpiAxis) -> Result<Epi> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = Array2::zeros((h, w));
    for (x, y, p) in img.enumerate_pixels() {
        data[[y as usize, x as usize]] = p.0[0] as f64 / 255.0;
    }
    Epi::new(data, axis)
}

/// Save an EPI as a grayscale PNG, clamping to [0,1].
pub fn save_epi_png(epi: &Epi, path: &Path) -> Result<()> {
    let img = image::GrayImage::from_fn(epi.n_w() as u32, epi.n_a() as u32, |x, y| {
        image::Luma([quantize(epi.data()[[y as usize, x as usize]])])
    });
    atomic_write(path, &encode_png(&DynamicImage::ImageLuma8(img))?)
}

/// Save a signed-value image (residual levels) by mapping [-1,1] to [0,1].
pub fn save_signed_png(data: &Array2<f64>, path: &Path) -> Result<()> {
    let img = image::GrayImage::from_fn(data.ncols() as u32, data.nrows() as u32, |x, y| {
        image::Luma([quantize(0.5 + 0.5 * data[[y as usize, x as usize]])])
    });
    atomic_write(path, &encode_png(&DynamicImage::ImageLuma8(img))?)
}
