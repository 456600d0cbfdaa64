//! The EPI reconstruction network.
//!
//! One branch per pyramid level feeds a shared hourglass trunk:
//!
//! ```text
//! level 1 (1 ch)  -> ConvFE1 -> DeconvS1 (stride 1, alpha_s^(P-1)) ----\
//! level p (2 ch)  -> ConvFEp -> DeconvSp (stride 1, alpha_s^(P-p))     |
//!                             -> ConvPEp (1 x kernel_p) --------------- concat
//! level P (2 ch)  -> ConvFEP -> ConvPEP (1 x kernel_P) ----------------/
//! concat -> ConvS (1x1, 24) -> ConvM x4 (3x3) -> ConvE (1x1, 56)
//!        -> DeconvA (9x9, stride (alpha_a, 1), 1 ch, no PReLU)
//! ```
//!
//! Every layer except DeconvA is followed by a per-channel PReLU. Spatial
//! deconvolution outputs have length `s*(n-1)+1`; they are right-padded by
//! replicating the last column so all branches align at the full width
//! before concatenation. The angular output length is
//! `alpha_a * (n_a - 1) + 1`, and the DeconvA stride is a runtime parameter,
//! so one set of weights serves several upsampling factors.

pub mod adam;
pub mod checkpoint;
pub mod ops;

use ndarray::{Array1, Array4, Axis};

use crate::error::{Error, Result};
use crate::lightfield::Epi;
use crate::pyramid::{LapEpiPyramid, PyramidConfig};

pub use ops::Tensor4;

pub const FEATURE_CHANNELS: usize = 56;
pub const SHRUNK_CHANNELS: usize = 24;
pub const MAPPING_LAYERS: usize = 4;
pub const FE_KERNEL: usize = 5;
pub const DECONV_S_KERNEL: usize = 5;
pub const DECONV_A_KERNEL: usize = 9;

/// Layer identity within the fixed graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerId {
    /// Feature extraction for pyramid level `p` (1-based).
    ConvFe(usize),
    /// Spatial deconvolution for level `p` (`p < P`).
    DeconvS(usize),
    /// Pre-filtering extraction for level `p` (`p >= 2`).
    ConvPe(usize),
    ConvS,
    /// Mapping layer `m` (1-based).
    ConvM(usize),
    ConvE,
    DeconvA,
}

impl LayerId {
    pub fn name(&self) -> String {
        match self {
            LayerId::ConvFe(p) => format!("conv_fe{p}"),
            LayerId::DeconvS(p) => format!("deconv_s{p}"),
            LayerId::ConvPe(p) => format!("conv_pe{p}"),
            LayerId::ConvS => "conv_s".to_string(),
            LayerId::ConvM(m) => format!("conv_m{m}"),
            LayerId::ConvE => "conv_e".to_string(),
            LayerId::DeconvA => "deconv_a".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Deconv,
}

/// Static description of one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub id: LayerId,
    pub kind: LayerKind,
    /// `(k_angular, k_spatial)`.
    pub kernel: (usize, usize),
    pub in_ch: usize,
    pub out_ch: usize,
    /// `(stride_angular, stride_spatial)`.
    pub stride: (usize, usize),
    pub has_prelu: bool,
}

/// Layer list in declaration (and checkpoint) order.
pub fn architecture(pyramid: &PyramidConfig, alpha_a: usize) -> Result<Vec<LayerSpec>> {
    pyramid.validate()?;
    if alpha_a < 2 {
        return Err(Error::BadConfig("alpha_a must be >= 2".into()));
    }
    let p_levels = pyramid.levels;
    let mut specs = Vec::new();
    let conv = |id, kernel, in_ch, out_ch| LayerSpec {
        id,
        kind: LayerKind::Conv,
        kernel,
        in_ch,
        out_ch,
        stride: (1, 1),
        has_prelu: true,
    };
    for p in 1..=p_levels {
        let in_ch = if p == 1 { 1 } else { 2 };
        specs.push(conv(LayerId::ConvFe(p), (FE_KERNEL, FE_KERNEL), in_ch, FEATURE_CHANNELS));
        if p < p_levels {
            specs.push(LayerSpec {
                id: LayerId::DeconvS(p),
                kind: LayerKind::Deconv,
                kernel: (DECONV_S_KERNEL, DECONV_S_KERNEL),
                in_ch: FEATURE_CHANNELS,
                out_ch: FEATURE_CHANNELS,
                stride: (1, pyramid.alpha_s.pow((p_levels - p) as u32)),
                has_prelu: true,
            });
        }
        if p >= 2 {
            let k = pyramid.level_kernel_sizes[p - 2];
            specs.push(conv(LayerId::ConvPe(p), (1, k), FEATURE_CHANNELS, FEATURE_CHANNELS));
        }
    }
    specs.push(conv(LayerId::ConvS, (1, 1), FEATURE_CHANNELS * p_levels, SHRUNK_CHANNELS));
    for m in 1..=MAPPING_LAYERS {
        specs.push(conv(LayerId::ConvM(m), (3, 3), SHRUNK_CHANNELS, SHRUNK_CHANNELS));
    }
    specs.push(conv(LayerId::ConvE, (1, 1), SHRUNK_CHANNELS, FEATURE_CHANNELS));
    specs.push(LayerSpec {
        id: LayerId::DeconvA,
        kind: LayerKind::Deconv,
        kernel: (DECONV_A_KERNEL, DECONV_A_KERNEL),
        in_ch: FEATURE_CHANNELS,
        out_ch: 1,
        stride: (alpha_a, 1),
        has_prelu: false,
    });
    Ok(specs)
}

/// Learned state of one layer.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub spec: LayerSpec,
    /// `(out_ch, in_ch, k_a, k_w)`.
    pub weights: Array4<f64>,
    pub bias: Array1<f64>,
    pub prelu_slope: Option<Array1<f64>>,
}

impl LayerParams {
    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len() + self.prelu_slope.as_ref().map_or(0, |s| s.len())
    }
}

/// All learned weights plus the structural hyper-parameters.
#[derive(Debug, Clone)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
    pub pyramid: PyramidConfig,
    /// Angular upsampling factor the network was trained at. Inference may
    /// override it per call.
    pub alpha_a: usize,
}

impl NetworkParams {
    /// Zero-weight parameters matching the architecture (training
    /// initialization lives in the train module).
    pub fn zeros(pyramid: &PyramidConfig, alpha_a: usize) -> Result<Self> {
        let layers = architecture(pyramid, alpha_a)?
            .into_iter()
            .map(|spec| {
                let weights = Array4::zeros((spec.out_ch, spec.in_ch, spec.kernel.0, spec.kernel.1));
                let bias = Array1::zeros(spec.out_ch);
                let prelu_slope = spec.has_prelu.then(|| Array1::zeros(spec.out_ch));
                LayerParams { spec, weights, bias, prelu_slope }
            })
            .collect();
        Ok(NetworkParams { layers, pyramid: pyramid.clone(), alpha_a })
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.num_params()).sum()
    }

    pub fn layer_index(&self, id: LayerId) -> Option<usize> {
        self.layers.iter().position(|l| l.spec.id == id)
    }

    fn layer(&self, id: LayerId) -> Result<usize> {
        self.layer_index(id)
            .ok_or_else(|| Error::BadConfig(format!("layer {} missing", id.name())))
    }
}

/// Per-layer gradient arrays, aligned with `NetworkParams::layers`.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Array4<f64>,
    pub bias: Array1<f64>,
    pub prelu_slope: Option<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Gradients {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: Array4::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                    prelu_slope: l.prelu_slope.as_ref().map(|s| Array1::zeros(s.raw_dim())),
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.mapv_inplace(|x| x * factor);
            l.bias.mapv_inplace(|x| x * factor);
            if let Some(s) = &mut l.prelu_slope {
                s.mapv_inplace(|x| x * factor);
            }
        }
    }
}

// --- forward / backward ------------------------------------------------------

struct LayerIo {
    layer: usize,
    input: Tensor4,
    /// Layer output before PReLU (equal to the output for no-PReLU layers).
    preact: Tensor4,
}

struct BranchCache {
    stages: Vec<LayerIo>,
    /// Replication pad width appended to the spatial axis.
    pad: usize,
    /// Stage index whose input was the padded tensor; `None` puts the pad at
    /// the branch output (branch 1).
    pad_before_stage: Option<usize>,
}

/// Activations recorded during a forward pass, consumed by [`backward`].
pub struct ForwardCache {
    branches: Vec<BranchCache>,
    trunk: Vec<LayerIo>,
    deconv_a: LayerIo,
    run_alpha_a: usize,
}

/// Stack the levels of equally-shaped pyramids into per-branch tensors:
/// level 1 as a 1-channel tensor, residual levels as
/// `{residual, blurred residual}` 2-channel tensors.
pub fn batch_inputs(pyrs: &[&LapEpiPyramid]) -> Result<Vec<Tensor4>> {
    let first = pyrs.first().ok_or_else(|| Error::ShapeMismatch("empty batch".into()))?;
    let p_levels = first.config.levels;
    let n = pyrs.len();
    for pyr in pyrs {
        if pyr.config != first.config
            || pyr.n_a() != first.n_a()
            || pyr.level1.n_w() != first.level1.n_w()
        {
            return Err(Error::ShapeMismatch("pyramids in a batch must share config and shape".into()));
        }
    }
    let mut out = Vec::with_capacity(p_levels);
    let (n_a, w1) = (first.n_a(), first.level1.n_w());
    let mut level1 = Tensor4::zeros((n, 1, n_a, w1));
    for (ni, pyr) in pyrs.iter().enumerate() {
        level1
            .index_axis_mut(Axis(0), ni)
            .index_axis_mut(Axis(0), 0)
            .assign(pyr.level1.data());
    }
    out.push(level1);
    for p in 2..=p_levels {
        let w = first.residuals[p - 2].0.n_w();
        let mut t = Tensor4::zeros((n, 2, n_a, w));
        for (ni, pyr) in pyrs.iter().enumerate() {
            let (r, rb) = &pyr.residuals[p - 2];
            t.index_axis_mut(Axis(0), ni).index_axis_mut(Axis(0), 0).assign(r.data());
            t.index_axis_mut(Axis(0), ni).index_axis_mut(Axis(0), 1).assign(rb.data());
        }
        out.push(t);
    }
    Ok(out)
}

fn rep_pad_w(x: &Tensor4, pad: usize) -> Tensor4 {
    if pad == 0 {
        return x.clone();
    }
    let (n, c, h, w) = x.dim();
    let mut out = Tensor4::zeros((n, c, h, w + pad));
    out.slice_mut(ndarray::s![.., .., .., ..w]).assign(x);
    for j in 0..pad {
        let last = x.slice(ndarray::s![.., .., .., w - 1..w]).to_owned();
        out.slice_mut(ndarray::s![.., .., .., w + j..w + j + 1]).assign(&last);
    }
    out
}

fn rep_unpad_w_grad(g: &Tensor4, pad: usize) -> Tensor4 {
    if pad == 0 {
        return g.clone();
    }
    let (n, c, h, w_padded) = g.dim();
    let w = w_padded - pad;
    let mut out = g.slice(ndarray::s![.., .., .., ..w]).to_owned();
    for j in 0..pad {
        let extra = g.slice(ndarray::s![.., .., .., w + j]);
        let mut lastcol = out.slice_mut(ndarray::s![.., .., .., w - 1]);
        lastcol += &extra;
    }
    debug_assert_eq!(out.dim(), (n, c, h, w));
    out
}

fn run_layer(
    params: &NetworkParams,
    layer: usize,
    input: Tensor4,
    stride_override: Option<(usize, usize)>,
) -> Result<(Tensor4, LayerIo)> {
    let lp = &params.layers[layer];
    let stride = stride_override.unwrap_or(lp.spec.stride);
    let preact = match lp.spec.kind {
        LayerKind::Conv => ops::conv2d(&input, &lp.weights, &lp.bias, stride)?,
        LayerKind::Deconv => ops::deconv2d(&input, &lp.weights, &lp.bias, stride)?,
    };
    let output = match &lp.prelu_slope {
        Some(slope) => ops::prelu(&preact, slope)?,
        None => preact.clone(),
    };
    Ok((output, LayerIo { layer, input, preact }))
}

fn backprop_layer(
    params: &NetworkParams,
    io: &LayerIo,
    grad_out: &Tensor4,
    grads: &mut Gradients,
    stride_override: Option<(usize, usize)>,
) -> Tensor4 {
    let lp = &params.layers[io.layer];
    let stride = stride_override.unwrap_or(lp.spec.stride);
    let g_pre = match &lp.prelu_slope {
        Some(slope) => {
            let (gx, gs) = ops::prelu_backward(&io.preact, slope, grad_out);
            let slot = grads.layers[io.layer].prelu_slope.as_mut().expect("slope slot");
            *slot += &gs;
            gx
        }
        None => grad_out.clone(),
    };
    let (gx, gw, gb) = match lp.spec.kind {
        LayerKind::Conv => ops::conv2d_backward(&io.input, &lp.weights, &g_pre, stride),
        LayerKind::Deconv => ops::deconv2d_backward(&io.input, &lp.weights, &g_pre, stride),
    };
    grads.layers[io.layer].weights += &gw;
    grads.layers[io.layer].bias += &gb;
    gx
}

/// Forward pass over a batch of level tensors (see [`batch_inputs`]).
///
/// `alpha_a` is the angular stride actually used for DeconvA; pass
/// `params.alpha_a` for the trained factor. Output shape is
/// `(batch, 1, alpha_a*(n_a-1)+1, full_width)`.
pub fn forward(
    params: &NetworkParams,
    level_inputs: &[Tensor4],
    alpha_a: usize,
) -> Result<(Tensor4, ForwardCache)> {
    let p_levels = params.pyramid.levels;
    if level_inputs.len() != p_levels {
        return Err(Error::ShapeMismatch(format!(
            "expected {p_levels} level tensors, got {}",
            level_inputs.len()
        )));
    }
    if alpha_a < 2 {
        return Err(Error::BadConfig("alpha_a must be >= 2".into()));
    }
    let alpha_s = params.pyramid.alpha_s;
    let (n, c1, n_a, w1) = level_inputs[0].dim();
    if c1 != 1 {
        return Err(Error::ShapeMismatch("level-1 tensor must have 1 channel".into()));
    }
    for (idx, t) in level_inputs.iter().enumerate().skip(1) {
        let want_w = w1 * alpha_s.pow(idx as u32);
        let (tn, tc, ta, tw) = t.dim();
        if tn != n || tc != 2 || ta != n_a || tw != want_w {
            return Err(Error::ShapeMismatch(format!(
                "level {} tensor is {tn}x{tc}x{ta}x{tw}, expected {n}x2x{n_a}x{want_w}",
                idx + 1
            )));
        }
    }
    let full_w = w1 * alpha_s.pow((p_levels - 1) as u32);

    let mut branches = Vec::with_capacity(p_levels);
    let mut branch_outputs = Vec::with_capacity(p_levels);
    for p in 1..=p_levels {
        let mut stages = Vec::new();
        let mut cur = level_inputs[p - 1].clone();

        let fe = params.layer(LayerId::ConvFe(p))?;
        let (out, io) = run_layer(params, fe, cur, None)?;
        stages.push(io);
        cur = out;

        let mut pad = 0;
        let mut pad_before_stage = None;
        if p < p_levels {
            let ds = params.layer(LayerId::DeconvS(p))?;
            let (out, io) = run_layer(params, ds, cur, None)?;
            stages.push(io);
            // s*(n-1)+1 -> replicate the last column up to the full width.
            pad = full_w - out.dim().3;
            cur = rep_pad_w(&out, pad);
            if p == 1 {
                pad_before_stage = None;
            } else {
                pad_before_stage = Some(stages.len());
            }
        }
        if p >= 2 {
            let pe = params.layer(LayerId::ConvPe(p))?;
            let (out, io) = run_layer(params, pe, cur, None)?;
            stages.push(io);
            cur = out;
        }
        debug_assert_eq!(cur.dim().3, full_w);
        branch_outputs.push(cur);
        branches.push(BranchCache { stages, pad, pad_before_stage });
    }

    let views: Vec<_> = branch_outputs.iter().map(|t| t.view()).collect();
    let mut cur = ndarray::concatenate(Axis(1), &views)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;

    let mut trunk = Vec::new();
    let mut trunk_ids = vec![LayerId::ConvS];
    trunk_ids.extend((1..=MAPPING_LAYERS).map(LayerId::ConvM));
    trunk_ids.push(LayerId::ConvE);
    for id in trunk_ids {
        let idx = params.layer(id)?;
        let (out, io) = run_layer(params, idx, cur, None)?;
        trunk.push(io);
        cur = out;
    }

    let da = params.layer(LayerId::DeconvA)?;
    let (out, io) = run_layer(params, da, cur, Some((alpha_a, 1)))?;
    debug_assert_eq!(out.dim(), (n, 1, alpha_a * (n_a - 1) + 1, full_w));
    Ok((out, ForwardCache { branches, trunk, deconv_a: io, run_alpha_a: alpha_a }))
}

/// Reverse-mode gradients of every parameter for a given output gradient.
pub fn backward(params: &NetworkParams, cache: &ForwardCache, grad_out: &Tensor4) -> Result<Gradients> {
    if grad_out.dim() != cache.deconv_a.preact.dim() {
        return Err(Error::ShapeMismatch("grad_out does not match forward output".into()));
    }
    let mut grads = Gradients::zeros_like(params);

    let mut g = backprop_layer(
        params,
        &cache.deconv_a,
        grad_out,
        &mut grads,
        Some((cache.run_alpha_a, 1)),
    );
    for io in cache.trunk.iter().rev() {
        g = backprop_layer(params, io, &g, &mut grads, None);
    }

    // Split the concat gradient back into per-branch slabs.
    let mut offset = 0;
    for branch in &cache.branches {
        let ch = FEATURE_CHANNELS;
        let mut gb = g.slice(ndarray::s![.., offset..offset + ch, .., ..]).to_owned();
        offset += ch;
        if branch.pad_before_stage.is_none() && branch.pad > 0 {
            gb = rep_unpad_w_grad(&gb, branch.pad);
        }
        for (i, io) in branch.stages.iter().enumerate().rev() {
            gb = backprop_layer(params, io, &gb, &mut grads, None);
            // The pad sits between stage i-1 and stage i; fold the replicated
            // columns back into the last real column when crossing it.
            if branch.pad_before_stage == Some(i) && branch.pad > 0 {
                gb = rep_unpad_w_grad(&gb, branch.pad);
            }
        }
    }
    Ok(grads)
}

/// Mean-of-norms loss: `(1/N) * sum_i ||pred_i - label_i||_2`, with its
/// gradient w.r.t. `pred`.
pub fn l2_loss(pred: &Tensor4, label: &Tensor4) -> Result<(f64, Tensor4)> {
    if pred.dim() != label.dim() {
        return Err(Error::ShapeMismatch(format!(
            "loss shapes differ: {:?} vs {:?}",
            pred.dim(),
            label.dim()
        )));
    }
    let n = pred.dim().0;
    let mut loss = 0.0;
    let mut grad = pred - label;
    for mut sample in grad.axis_iter_mut(Axis(0)) {
        let norm = sample.iter().map(|d| d * d).sum::<f64>().sqrt();
        loss += norm;
        if norm > 0.0 {
            let scale = 1.0 / (n as f64 * norm);
            sample.mapv_inplace(|d| d * scale);
        }
    }
    Ok((loss / n as f64, grad))
}

/// Single-pyramid inference: returns the reconstructed EPI (uncropped,
/// unclamped — callers handle width padding policy).
pub fn forward_epi(params: &NetworkParams, pyr: &LapEpiPyramid, alpha_a: usize) -> Result<Epi> {
    let inputs = batch_inputs(&[pyr])?;
    let (out, _) = forward(params, &inputs, alpha_a)?;
    let (_, _, ho, wo) = out.dim();
    let data = out.index_axis(Axis(0), 0).index_axis(Axis(0), 0).to_owned();
    debug_assert_eq!(data.dim(), (ho, wo));
    Epi::new(data, pyr.level1.axis_tag())
}
