//! Versioned binary checkpoints.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! magic  b"LFDN"
//! u32    format version (1)
//! u32    pyramid levels P
//! u32    alpha_s
//! u32    alpha_a (trained angular factor)
//! u32    P-1 residual kernel sizes, then that many u32
//! u32    layer count
//! per layer, in declaration order:
//!   u16 name length + UTF-8 name
//!   4 x u32 weight dims, then f64 data row-major
//!   u32 bias length, then f64 data
//!   u8 PReLU flag; if 1: u32 length, then f64 data
//! ```
//!
//! A human-readable sidecar (`<path>.txt`) lists layer shapes and the total
//! parameter count. Loading rebuilds the architecture from the header and
//! rejects any name/shape disagreement, truncation, or trailing bytes, so a
//! load never returns partially-filled parameters.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array4};

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::pyramid::PyramidConfig;

use super::{architecture, LayerParams, NetworkParams};

const MAGIC: &[u8; 4] = b"LFDN";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vals: impl Iterator<Item = f64>) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CheckpointFormat(format!(
                "truncated file: needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".txt");
    PathBuf::from(s)
}

/// Serialize and write the checkpoint plus its sidecar, atomically.
pub fn save_checkpoint(params: &NetworkParams, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, params.pyramid.levels as u32);
    put_u32(&mut out, params.pyramid.alpha_s as u32);
    put_u32(&mut out, params.alpha_a as u32);
    put_u32(&mut out, params.pyramid.level_kernel_sizes.len() as u32);
    for &k in &params.pyramid.level_kernel_sizes {
        put_u32(&mut out, k as u32);
    }
    put_u32(&mut out, params.layers.len() as u32);
    for layer in &params.layers {
        let name = layer.spec.id.name();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let (o, i, ka, kw) = layer.weights.dim();
        for d in [o, i, ka, kw] {
            put_u32(&mut out, d as u32);
        }
        put_f64s(&mut out, layer.weights.iter().cloned());
        put_u32(&mut out, layer.bias.len() as u32);
        put_f64s(&mut out, layer.bias.iter().cloned());
        match &layer.prelu_slope {
            Some(s) => {
                out.push(1);
                put_u32(&mut out, s.len() as u32);
                put_f64s(&mut out, s.iter().cloned());
            }
            None => out.push(0),
        }
    }
    atomic_write(path, &out)?;

    let mut sidecar = format!(
        "levels={} alpha_s={} alpha_a={} layers={}\n",
        params.pyramid.levels,
        params.pyramid.alpha_s,
        params.alpha_a,
        params.layers.len()
    );
    for layer in &params.layers {
        let (o, i, ka, kw) = layer.weights.dim();
        sidecar.push_str(&format!(
            "{:<10} weights {o}x{i}x{ka}x{kw}  bias {}  prelu {}  params {}\n",
            layer.spec.id.name(),
            layer.bias.len(),
            layer.prelu_slope.as_ref().map_or(0, |s| s.len()),
            layer.num_params()
        ));
    }
    sidecar.push_str(&format!("total_params={}\n", params.num_params()));
    atomic_write(&sidecar_path(path), sidecar.as_bytes())
}

/// Load and fully validate a checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::CheckpointFormat("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CheckpointVersion { found: version, expected: VERSION });
    }
    let levels = r.u32()? as usize;
    let alpha_s = r.u32()? as usize;
    let alpha_a = r.u32()? as usize;
    let n_kernels = r.u32()? as usize;
    let mut level_kernel_sizes = Vec::with_capacity(n_kernels);
    for _ in 0..n_kernels {
        level_kernel_sizes.push(r.u32()? as usize);
    }
    let pyramid = PyramidConfig { levels, alpha_s, level_kernel_sizes };
    let specs = architecture(&pyramid, alpha_a)
        .map_err(|e| Error::CheckpointFormat(format!("invalid header: {e}")))?;
    let n_layers = r.u32()? as usize;
    if n_layers != specs.len() {
        return Err(Error::CheckpointFormat(format!(
            "layer count {n_layers} does not match architecture ({})",
            specs.len()
        )));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for spec in specs {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::CheckpointFormat("invalid layer name".into()))?;
        if name != spec.id.name() {
            return Err(Error::CheckpointFormat(format!(
                "layer name {name:?} does not match expected {:?}",
                spec.id.name()
            )));
        }
        let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        let want = (spec.out_ch, spec.in_ch, spec.kernel.0, spec.kernel.1);
        if dims != [want.0, want.1, want.2, want.3] {
            return Err(Error::CheckpointFormat(format!(
                "layer {} weight dims {dims:?} do not match {want:?}",
                spec.id.name()
            )));
        }
        let weights = Array4::from_shape_vec(
            (dims[0], dims[1], dims[2], dims[3]),
            r.f64s(dims.iter().product())?,
        )
        .map_err(|e| Error::CheckpointFormat(e.to_string()))?;
        let blen = r.u32()? as usize;
        if blen != spec.out_ch {
            return Err(Error::CheckpointFormat(format!(
                "layer {} bias length {blen} != {}",
                spec.id.name(),
                spec.out_ch
            )));
        }
        let bias = Array1::from_vec(r.f64s(blen)?);
        let has_prelu = r.u8()? == 1;
        if has_prelu != spec.has_prelu {
            return Err(Error::CheckpointFormat(format!(
                "layer {} PReLU flag disagrees with architecture",
                spec.id.name()
            )));
        }
        let prelu_slope = if has_prelu {
            let slen = r.u32()? as usize;
            if slen != spec.out_ch {
                return Err(Error::CheckpointFormat("PReLU slope length mismatch".into()));
            }
            Some(Array1::from_vec(r.f64s(slen)?))
        } else {
            None
        };
        layers.push(LayerParams { spec, weights, bias, prelu_slope });
    }
    if r.pos != buf.len() {
        return Err(Error::CheckpointFormat(format!(
            "{} trailing bytes after the last layer",
            buf.len() - r.pos
        )));
    }
    Ok(NetworkParams { layers, pyramid, alpha_a })
}
