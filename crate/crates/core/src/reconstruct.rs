//! End-to-end densification: per-EPI inference, 3D reconstruction, and the
//! hierarchical two-pass 4D strategy.
//!
//! 3D light fields (`n_t == 1`) densify every `(v*, channel)` EPI
//! independently. 4D grids run two passes: pass 1 densifies the `s` axis
//! from the input rows and the `t` axis from the input columns; pass 2
//! extracts the orthogonal EPIs from the views synthesized in pass 1 and
//! fills the remaining holes. Views reachable from both pass-1 directions
//! keep the `s`-direction result, and the write bookkeeping guarantees every
//! output view is written exactly once.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::lightfield::{rgb_to_ycbcr, ycbcr_to_rgb, Colorspace, Epi, EpiAxis, LightField4D};
use crate::net::{forward_epi, NetworkParams};
use crate::par::Pool;
use crate::pyramid::{build_lapepi, pad_width_reflect, PyramidConfig};

/// How color channels travel through the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelPolicy {
    /// Luma through the network; chroma by linear angular interpolation.
    LumaOnly,
    /// Every channel through the network (ablation mode).
    FullRgb,
}

/// Reconstruction settings.
#[derive(Debug, Clone)]
pub struct ReconConfig {
    pub alpha_a: usize,
    pub pyramid: PyramidConfig,
    pub policy: ChannelPolicy,
    /// Copy the sparse input views verbatim into their output positions
    /// instead of keeping the network output there.
    pub copy_input_views: bool,
}

impl ReconConfig {
    pub fn new(alpha_a: usize) -> Self {
        ReconConfig {
            alpha_a,
            pyramid: PyramidConfig::default(),
            policy: ChannelPolicy::LumaOnly,
            copy_input_views: false,
        }
    }
}

/// Output angular size for one densified axis.
pub fn output_views(n_in: usize, alpha_a: usize) -> usize {
    alpha_a * (n_in - 1) + 1
}

/// Reconstruct one EPI: reflection-pad the width to the pyramid multiple,
/// decompose, run the network at `cfg.alpha_a`, crop the padding, and clamp
/// to [0,1].
pub fn reconstruct_epi(epi: &Epi, params: &NetworkParams, cfg: &ReconConfig) -> Result<Epi> {
    if epi.n_a() < 2 {
        return Err(Error::ShapeMismatch(format!(
            "EPI needs at least 2 views, got {}",
            epi.n_a()
        )));
    }
    if cfg.alpha_a < 2 {
        return Err(Error::BadConfig("alpha_a must be >= 2".into()));
    }
    let (padded, left, _right) = pad_width_reflect(epi, cfg.pyramid.scale_factor());
    let pyr = build_lapepi(&padded, &cfg.pyramid)?;
    let out = forward_epi(params, &pyr, cfg.alpha_a)?;
    let n_w = epi.n_w();
    let cropped = out.data().slice(ndarray::s![.., left..left + n_w]).to_owned();
    Epi::new(cropped.mapv(|x| x.clamp(0.0, 1.0)), epi.axis_tag())
}

/// Angular upsampling by Catmull-Rom interpolation, the comparison baseline
/// for the network. Input rows are reproduced exactly at their lattice
/// positions.
pub fn bicubic_angular(epi: &Epi, rate: usize) -> Epi {
    let (n_a, n_w) = (epi.n_a(), epi.n_w());
    let n_out = output_views(n_a, rate);
    let data = epi.data();
    let mut out = Array2::zeros((n_out, n_w));
    let clamp = |i: isize| -> usize { i.clamp(0, n_a as isize - 1) as usize };
    for j in 0..n_out {
        let pos = j as f64 / rate as f64;
        let i1 = pos.floor() as isize;
        let t = pos - i1 as f64;
        let (i0, i2, i3) = (clamp(i1 - 1), clamp(i1 + 1), clamp(i1 + 2));
        let i1 = clamp(i1);
        // Catmull-Rom weights
        let w0 = 0.5 * (-t * t * t + 2.0 * t * t - t);
        let w1 = 0.5 * (3.0 * t * t * t - 5.0 * t * t + 2.0);
        let w2 = 0.5 * (-3.0 * t * t * t + 4.0 * t * t + t);
        let w3 = 0.5 * (t * t * t - t * t);
        for w in 0..n_w {
            out[[j, w]] = (w0 * data[[i0, w]]
                + w1 * data[[i1, w]]
                + w2 * data[[i2, w]]
                + w3 * data[[i3, w]])
                .clamp(0.0, 1.0);
        }
    }
    Epi::new(out, epi.axis_tag()).expect("finite")
}

/// Angular upsampling by linear interpolation (chroma path).
pub fn linear_angular(epi: &Epi, rate: usize) -> Epi {
    let (n_a, n_w) = (epi.n_a(), epi.n_w());
    let n_out = output_views(n_a, rate);
    let mut out = Array2::zeros((n_out, n_w));
    for j in 0..n_out {
        let pos = j as f64 / rate as f64;
        let i0 = (pos.floor() as usize).min(n_a - 1);
        let i1 = (i0 + 1).min(n_a - 1);
        let t = pos - i0 as f64;
        for w in 0..n_w {
            out[[j, w]] = (1.0 - t) * epi.data()[[i0, w]] + t * epi.data()[[i1, w]];
        }
    }
    Epi::new(out, epi.axis_tag()).expect("finite")
}

/// Whether a channel runs through the network or the linear chroma path.
fn channel_uses_net(policy: ChannelPolicy, colorspace: Colorspace, channel: usize) -> bool {
    match policy {
        ChannelPolicy::FullRgb => true,
        ChannelPolicy::LumaOnly => match colorspace {
            Colorspace::Luma => true,
            Colorspace::YCbCr => channel == 0,
            // RGB inputs are converted to YCbCr before reconstruction.
            Colorspace::Rgb => true,
        },
    }
}

/// Densify a 3D light field (`n_t == 1`) along `s`.
pub fn reconstruct_lf3d(
    lf: &LightField4D,
    params: &NetworkParams,
    cfg: &ReconConfig,
    pool: &Pool,
) -> Result<LightField4D> {
    if lf.n_t() != 1 {
        return Err(Error::ShapeMismatch(format!("3D reconstruction expects n_t = 1, got {}", lf.n_t())));
    }
    if lf.n_s() < 2 {
        return Err(Error::ShapeMismatch("need at least 2 views".into()));
    }
    // Luma policy on RGB input works in YCbCr space end to end.
    let work_rgb;
    let (work, convert_back) =
        if lf.colorspace() == Colorspace::Rgb && cfg.policy == ChannelPolicy::LumaOnly {
            work_rgb = rgb_to_ycbcr(lf)?;
            (&work_rgb, true)
        } else {
            (lf, false)
        };

    let n_s_out = output_views(work.n_s(), cfg.alpha_a);
    let mut out = LightField4D::zeros(1, n_s_out, work.n_v(), work.n_u(), work.colorspace())?;

    let jobs: Vec<(usize, usize)> = (0..work.n_v())
        .flat_map(|v| (0..work.channels()).map(move |c| (v, c)))
        .collect();
    let epis: Vec<Result<Epi>> = pool.map(&jobs, |&(v, c)| {
        let epi = work.extract_epi(EpiAxis::US, v, 0, c)?;
        if channel_uses_net(cfg.policy, work.colorspace(), c) {
            reconstruct_epi(&epi, params, cfg)
        } else {
            Ok(linear_angular(&epi, cfg.alpha_a))
        }
    });
    for ((v, c), epi) in jobs.into_iter().zip(epis) {
        out.insert_epi(&epi?, EpiAxis::US, v, 0, c)?;
    }
    if cfg.copy_input_views {
        for s_in in 0..work.n_s() {
            for v in 0..work.n_v() {
                for u in 0..work.n_u() {
                    for c in 0..work.channels() {
                        out.set(0, cfg.alpha_a * s_in, v, u, c, work.get(0, s_in, v, u, c));
                    }
                }
            }
        }
    }
    if convert_back {
        ycbcr_to_rgb(&out)
    } else {
        Ok(out)
    }
}

/// Densify one channel of a 4D grid with the two-pass strategy, writing into
/// `out` and incrementing `written` per view it fills.
#[allow(clippy::too_many_arguments)]
fn reconstruct_channel_4d(
    work: &LightField4D,
    out: &mut LightField4D,
    written: &mut Array2<u32>,
    params: &NetworkParams,
    cfg: &ReconConfig,
    pool: &Pool,
    channel: usize,
    use_net: bool,
) -> Result<()> {
    let alpha = cfg.alpha_a;
    let (n_t_in, n_s_in) = (work.n_t(), work.n_s());
    let n_s_out = output_views(n_s_in, alpha);
    let n_t_out = output_views(n_t_in, alpha);

    let densify = |epi: &Epi| -> Result<Epi> {
        if use_net {
            reconstruct_epi(epi, params, cfg)
        } else {
            Ok(linear_angular(epi, alpha))
        }
    };

    // Pass 1a: densify s along every input row t_in; writes (alpha*t_in, s').
    let jobs_s: Vec<(usize, usize)> = (0..n_t_in)
        .flat_map(|t| (0..work.n_v()).map(move |v| (t, v)))
        .collect();
    let rows: Vec<Result<Epi>> = pool.map(&jobs_s, |&(t_in, v)| {
        densify(&work.extract_epi(EpiAxis::US, v, t_in, channel)?)
    });
    for (&(t_in, v), epi) in jobs_s.iter().zip(rows) {
        let epi = epi?;
        let t_out = alpha * t_in;
        for s in 0..n_s_out {
            for u in 0..work.n_u() {
                out.set(t_out, s, v, u, channel, epi.data()[[s, u]]);
            }
        }
        if v == 0 && channel == 0 {
            for s in 0..n_s_out {
                written[[t_out, s]] += 1;
            }
        }
    }

    // Pass 1b: densify t along every input column s_in; writes
    // (t', alpha*s_in) for t' off the input lattice (lattice rows keep the
    // s-direction result from pass 1a).
    let jobs_t: Vec<(usize, usize)> = (0..n_s_in)
        .flat_map(|s| (0..work.n_u()).map(move |u| (s, u)))
        .collect();
    let cols: Vec<Result<Epi>> = pool.map(&jobs_t, |&(s_in, u)| {
        densify(&work.extract_epi(EpiAxis::VT, u, s_in, channel)?)
    });
    for (&(s_in, u), epi) in jobs_t.iter().zip(cols) {
        let epi = epi?;
        let s_out = alpha * s_in;
        for t in 0..n_t_out {
            if t % alpha == 0 {
                continue;
            }
            for v in 0..work.n_v() {
                out.set(t, s_out, v, u, channel, epi.data()[[t, v]]);
            }
        }
        if u == 0 && channel == 0 {
            for t in 0..n_t_out {
                if t % alpha != 0 {
                    written[[t, s_out]] += 1;
                }
            }
        }
    }

    // Pass 2: for every off-lattice s', the lattice rows written in pass 1a
    // form a t-direction EPI; densify it and fill the holes (t', s') with
    // t' off the lattice.
    let off_lattice_s: Vec<usize> = (0..n_s_out).filter(|s| s % alpha != 0).collect();
    let jobs_2: Vec<(usize, usize)> = off_lattice_s
        .iter()
        .flat_map(|&s| (0..work.n_u()).map(move |u| (s, u)))
        .collect();
    let pass2: Vec<Result<Epi>> = pool.map(&jobs_2, |&(s_out, u)| {
        let mut data = Array2::zeros((n_t_in, work.n_v()));
        for t_in in 0..n_t_in {
            for v in 0..work.n_v() {
                data[[t_in, v]] = out.get(alpha * t_in, s_out, v, u, channel);
            }
        }
        densify(&Epi::new(data, EpiAxis::VT)?)
    });
    for (&(s_out, u), epi) in jobs_2.iter().zip(pass2) {
        let epi = epi?;
        for t in 0..n_t_out {
            if t % alpha == 0 {
                continue;
            }
            for v in 0..work.n_v() {
                out.set(t, s_out, v, u, channel, epi.data()[[t, v]]);
            }
        }
        if u == 0 && channel == 0 {
            for t in 0..n_t_out {
                if t % alpha != 0 {
                    written[[t, s_out]] += 1;
                }
            }
        }
    }
    Ok(())
}

/// Hierarchical 4D densification; returns the dense grid
/// `(alpha*(n_t-1)+1) x (alpha*(n_s-1)+1)`.
pub fn reconstruct_lf4d(
    lf: &LightField4D,
    params: &NetworkParams,
    cfg: &ReconConfig,
    pool: &Pool,
) -> Result<LightField4D> {
    if lf.n_t() < 2 || lf.n_s() < 2 {
        return Err(Error::ShapeMismatch("4D reconstruction needs at least a 2x2 grid".into()));
    }
    let work_rgb;
    let (work, convert_back) =
        if lf.colorspace() == Colorspace::Rgb && cfg.policy == ChannelPolicy::LumaOnly {
            work_rgb = rgb_to_ycbcr(lf)?;
            (&work_rgb, true)
        } else {
            (lf, false)
        };
    let n_s_out = output_views(work.n_s(), cfg.alpha_a);
    let n_t_out = output_views(work.n_t(), cfg.alpha_a);
    let mut out = LightField4D::zeros(n_t_out, n_s_out, work.n_v(), work.n_u(), work.colorspace())?;
    let mut written = Array2::<u32>::zeros((n_t_out, n_s_out));
    for c in 0..work.channels() {
        let use_net = channel_uses_net(cfg.policy, work.colorspace(), c);
        reconstruct_channel_4d(work, &mut out, &mut written, params, cfg, pool, c, use_net)?;
    }
    debug_assert!(
        written.iter().all(|&n| n == 1),
        "every output view must be written exactly once"
    );
    if cfg.copy_input_views {
        for t_in in 0..work.n_t() {
            for s_in in 0..work.n_s() {
                for v in 0..work.n_v() {
                    for u in 0..work.n_u() {
                        for c in 0..work.channels() {
                            out.set(
                                cfg.alpha_a * t_in,
                                cfg.alpha_a * s_in,
                                v,
                                u,
                                c,
                                work.get(t_in, s_in, v, u, c),
                            );
                        }
                    }
                }
            }
        }
    }
    if convert_back {
        ycbcr_to_rgb(&out)
    } else {
        Ok(out)
    }
}

/// Per-view write counts of a dry-run of the 4D pass structure (test hook
/// for the exactly-once coverage property).
pub fn coverage_counts(n_t_in: usize, n_s_in: usize, alpha: usize) -> Array2<u32> {
    let n_t_out = output_views(n_t_in, alpha);
    let n_s_out = output_views(n_s_in, alpha);
    let mut written = Array2::<u32>::zeros((n_t_out, n_s_out));
    for t_in in 0..n_t_in {
        for s in 0..n_s_out {
            written[[alpha * t_in, s]] += 1;
        }
    }
    for s_in in 0..n_s_in {
        for t in 0..n_t_out {
            if t % alpha != 0 {
                written[[t, alpha * s_in]] += 1;
            }
        }
    }
    for s in 0..n_s_out {
        if s % alpha == 0 {
            continue;
        }
        for t in 0..n_t_out {
            if t % alpha != 0 {
                written[[t, s]] += 1;
            }
        }
    }
    written
}

/// Factor a target rate into supported single-pass strides (largest first).
fn factor_rate(target: usize) -> Option<Vec<usize>> {
    if target < 2 {
        return None;
    }
    const SUPPORTED: [usize; 4] = [8, 4, 3, 2];
    if SUPPORTED.contains(&target) {
        return Some(vec![target]);
    }
    for &f in &SUPPORTED {
        if target % f == 0 {
            if let Some(mut rest) = factor_rate(target / f) {
                let mut passes = vec![f];
                passes.append(&mut rest);
                return Some(passes);
            }
        }
    }
    None
}

/// Multi-pass angular upscaling. Composed passes multiply:
/// `alpha_2*(alpha_1*(n-1)+1-1)+1 = alpha_1*alpha_2*(n-1)+1`. Returns the
/// reconstructed EPI and the pass strides used.
pub fn upscale_multi(
    epi: &Epi,
    params: &NetworkParams,
    target_rate: usize,
    cfg: &ReconConfig,
) -> Result<(Epi, Vec<usize>)> {
    let passes = factor_rate(target_rate).ok_or(Error::UnsupportedRate(target_rate))?;
    let mut cur = epi.clone();
    for &alpha in &passes {
        let pass_cfg = ReconConfig { alpha_a: alpha, ..cfg.clone() };
        cur = reconstruct_epi(&cur, params, &pass_cfg)?;
    }
    Ok((cur, passes))
}
