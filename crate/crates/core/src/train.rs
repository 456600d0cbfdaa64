//! Patch extraction, initialization, and the two-stage training loop.
//!
//! Training samples are `(pyramid input, label)` pairs cut from 2D luma
//! sources. A label window slides over a source at the stage's strides; the
//! network input is the label decimated in the angular dimension by the
//! angular factor and decomposed into the EPI pyramid. Two kinds of sources
//! feed the two stages:
//!
//! - natural images (vertical axis read as angular) for pre-training, and
//! - EPIs for fine-tuning.
//!
//! The loop is plain mini-batch Adam on the mean-of-norms loss. Runs are
//! deterministic for a fixed seed: the shuffle stream, initialization, and
//! batched GEMM evaluation are all order-stable and single-threaded.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::io::{atomic_write, fmt_g12};
use crate::lightfield::{Epi, EpiAxis};
use crate::net::{
    adam::{adam_step, AdamState},
    backward, batch_inputs, checkpoint::save_checkpoint, forward, l2_loss, NetworkParams, Tensor4,
};
use crate::pyramid::{build_lapepi, LapEpiPyramid, PyramidConfig};
use crate::scene::{synth_lightfield, Coverage, Layer, SceneSpec, Texture};

/// Training schedule stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Finetune,
}

/// Hyper-parameters of one stage.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub stage: Stage,
    /// `(angular, spatial)` input patch size.
    pub patch_in: (usize, usize),
    /// `(angular, spatial)` label patch size.
    pub patch_label: (usize, usize),
    pub batch: usize,
    /// `(angular, spatial)` window strides.
    pub strides: (usize, usize),
    pub lr_conv: f64,
    pub lr_deconv: f64,
    pub max_steps: usize,
    pub seed: u64,
    /// Angular upsampling factor tying input to label patches.
    pub alpha_a: usize,
    /// Optional early exit once the batch loss drops below this value.
    pub stop_below_loss: Option<f64>,
    /// Periodic checkpoint interval in steps (when a sink path is given).
    pub checkpoint_every: usize,
    /// Loss trace interval in steps.
    pub trace_every: usize,
}

impl TrainConfig {
    /// Stage-one defaults: natural-image sources, strides (14, 20),
    /// learning rates 1e-4 / 1e-5.
    pub fn pretrain(seed: u64, max_steps: usize) -> Self {
        TrainConfig {
            stage: Stage::Pretrain,
            patch_in: (11, 44),
            patch_label: (31, 44),
            batch: 28,
            strides: (14, 20),
            lr_conv: 1e-4,
            lr_deconv: 1e-5,
            max_steps,
            seed,
            alpha_a: 3,
            stop_below_loss: None,
            checkpoint_every: 1000,
            trace_every: 100,
        }
    }

    /// Stage-two defaults: EPI sources, strides (14, 23), learning rates
    /// 1e-5 / 1e-6.
    pub fn finetune(seed: u64, max_steps: usize) -> Self {
        TrainConfig {
            stage: Stage::Finetune,
            strides: (14, 23),
            lr_conv: 1e-5,
            lr_deconv: 1e-6,
            ..Self::pretrain(seed, max_steps)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_label.0 != self.alpha_a * (self.patch_in.0 - 1) + 1 {
            return Err(Error::BadConfig(format!(
                "label angular {} must equal alpha_a*(input angular - 1)+1 = {}",
                self.patch_label.0,
                self.alpha_a * (self.patch_in.0 - 1) + 1
            )));
        }
        if self.patch_label.1 != self.patch_in.1 {
            return Err(Error::BadConfig("input and label patches must share the spatial size".into()));
        }
        if self.batch == 0 || self.strides.0 == 0 || self.strides.1 == 0 {
            return Err(Error::BadConfig("batch and strides must be >= 1".into()));
        }
        Ok(())
    }
}

/// Where a 2D luma array came from; natural images reuse the vertical axis
/// as angular.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    NaturalImage,
    Epi,
}

/// One training source.
#[derive(Debug, Clone)]
pub struct SampleSource {
    pub kind: SourceKind,
    pub data: Array2<f64>,
}

/// One training pair: decomposed input plus the dense label.
#[derive(Debug, Clone)]
pub struct PatchPair {
    pub pyramid: LapEpiPyramid,
    pub label: Array2<f64>,
}

/// Slide the label window over every source and build `(pyramid, label)`
/// pairs; windows that do not fit are skipped and counted. Pair order is the
/// seeded uniform shuffle of the deterministic scan order.
pub fn extract_patch_pairs(
    sources: &[SampleSource],
    cfg: &TrainConfig,
    pyramid: &PyramidConfig,
) -> Result<(Vec<PatchPair>, usize)> {
    cfg.validate()?;
    pyramid.validate()?;
    if cfg.patch_in.1 % pyramid.scale_factor() != 0 {
        return Err(Error::BadConfig(format!(
            "patch width {} must be divisible by the pyramid scale factor {}",
            cfg.patch_in.1,
            pyramid.scale_factor()
        )));
    }
    let (la, lw) = cfg.patch_label;
    let (sa, sw) = cfg.strides;
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for src in sources {
        let (h, w) = src.data.dim();
        if h < la || w < lw {
            skipped += 1;
            continue;
        }
        let mut ai = 0;
        while ai + la <= h {
            let mut wi = 0;
            while wi + lw <= w {
                let label = src.data.slice(ndarray::s![ai..ai + la, wi..wi + lw]).to_owned();
                let label_epi = Epi::new(label.clone(), EpiAxis::US)?;
                let input = label_epi.angular_decimate(cfg.alpha_a)?;
                debug_assert_eq!(input.n_a(), cfg.patch_in.0);
                let pyr = build_lapepi(&input, pyramid)?;
                pairs.push(PatchPair { pyramid: pyr, label });
                wi += sw;
            }
            ai += sa;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    fisher_yates(&mut pairs, &mut rng);
    Ok((pairs, skipped))
}

fn fisher_yates<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Random initialization: weights from N(0, 1e-3^2), zero biases, PReLU
/// slopes 0.1.
pub fn init_params(pyramid: &PyramidConfig, alpha_a: usize, seed: u64) -> Result<NetworkParams> {
    let mut params = NetworkParams::zeros(pyramid, alpha_a)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1e-3).expect("valid stddev");
    for layer in &mut params.layers {
        for w in layer.weights.iter_mut() {
            *w = normal.sample(&mut rng);
        }
        layer.bias.fill(0.0);
        if let Some(s) = &mut layer.prelu_slope {
            s.fill(0.1);
        }
    }
    Ok(params)
}

/// Result of a training stage.
pub struct TrainOutcome {
    pub params: NetworkParams,
    /// `(step, batch loss)` samples.
    pub trace: Vec<(usize, f64)>,
    pub steps_run: usize,
    pub pairs_used: usize,
    pub sources_skipped: usize,
}

fn labels_tensor(batch: &[&PatchPair]) -> Tensor4 {
    let (la, lw) = batch[0].label.dim();
    let mut t = Tensor4::zeros((batch.len(), 1, la, lw));
    for (ni, pair) in batch.iter().enumerate() {
        t.index_axis_mut(Axis(0), ni).index_axis_mut(Axis(0), 0).assign(&pair.label);
    }
    t
}

/// Run one stage of mini-batch Adam.
///
/// `initial` continues from existing parameters; fine-tuning requires it.
/// When `checkpoint_path` is given, a checkpoint is written every
/// `checkpoint_every` steps and at the end; on a non-finite loss the loop
/// aborts with an error and the last periodic checkpoint is the last good
/// state.
pub fn run_stage(
    sources: &[SampleSource],
    cfg: &TrainConfig,
    pyramid: &PyramidConfig,
    initial: Option<NetworkParams>,
    checkpoint_path: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.stage == Stage::Finetune && initial.is_none() {
        return Err(Error::BadConfig("fine-tuning requires initial parameters (the pretrain output)".into()));
    }
    let (pairs, sources_skipped) = extract_patch_pairs(sources, cfg, pyramid)?;
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "no {}x{} windows fit any source",
            cfg.patch_label.0, cfg.patch_label.1
        )));
    }
    let mut params = match initial {
        Some(p) => p,
        None => init_params(pyramid, cfg.alpha_a, cfg.seed)?,
    };
    let mut state = AdamState::new(&params, cfg.lr_conv, cfg.lr_deconv);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    fisher_yates(&mut order, &mut rng);
    let mut cursor = 0;

    let mut trace = Vec::new();
    let mut steps_run = 0;
    for step in 1..=cfg.max_steps {
        let mut batch: Vec<&PatchPair> = Vec::with_capacity(cfg.batch.min(pairs.len()));
        for _ in 0..cfg.batch.min(pairs.len()) {
            if cursor == order.len() {
                fisher_yates(&mut order, &mut rng);
                cursor = 0;
            }
            batch.push(&pairs[order[cursor]]);
            cursor += 1;
        }
        let pyrs: Vec<&LapEpiPyramid> = batch.iter().map(|p| &p.pyramid).collect();
        let inputs = batch_inputs(&pyrs)?;
        let (out, cache) = forward(&params, &inputs, cfg.alpha_a)?;
        let labels = labels_tensor(&batch);
        let (loss, grad_out) = l2_loss(&out, &labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let grads = backward(&params, &cache, &grad_out)?;
        adam_step(&mut params, &grads, &mut state);
        steps_run = step;

        if step % cfg.trace_every == 0 || step == cfg.max_steps {
            trace.push((step, loss));
        }
        if let Some(path) = checkpoint_path {
            if step % cfg.checkpoint_every == 0 {
                save_checkpoint(&params, path)?;
            }
        }
        if let Some(target) = cfg.stop_below_loss {
            if loss < target {
                if trace.last().map(|&(s, _)| s) != Some(step) {
                    trace.push((step, loss));
                }
                break;
            }
        }
    }
    if let Some(path) = checkpoint_path {
        save_checkpoint(&params, path)?;
    }
    Ok(TrainOutcome { params, trace, steps_run, pairs_used: pairs.len(), sources_skipped })
}

/// Write a loss trace as `step,loss` CSV.
pub fn write_loss_trace(trace: &[(usize, f64)], path: &Path) -> Result<()> {
    let mut csv = String::from("step,loss\n");
    for &(step, loss) in trace {
        csv.push_str(&format!("{},{}\n", step, fmt_g12(loss)));
    }
    atomic_write(path, csv.as_bytes())
}

// --- bundled desk-scale corpora ----------------------------------------------

fn random_texture(rng: &mut ChaCha8Rng, period: f64, bias_range: (f64, f64)) -> Texture {
    let bias = rng.gen_range(bias_range.0..bias_range.1);
    let n_harmonics = rng.gen_range(2..=5usize);
    let headroom = (1.0 - bias).min(bias);
    let mut amps = Vec::with_capacity(n_harmonics);
    let mut total = 0.0;
    for _ in 0..n_harmonics {
        let a = rng.gen_range(0.2..1.0);
        total += a;
        amps.push(a);
    }
    let scale = 0.92 * headroom / total;
    let harmonics = amps
        .into_iter()
        .map(|a| {
            let cycles = rng.gen_range(1..=(period as u32 / 6).max(2));
            (cycles, a * scale, rng.gen_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    Texture { bias, harmonics, period }
}

/// A random layered scene with dense-grid disparities in `[0, d_max_dense]`.
pub fn random_scene(
    rng: &mut ChaCha8Rng,
    n_views: usize,
    width: usize,
    height: usize,
    d_max_dense: f64,
) -> SceneSpec {
    let n_layers = rng.gen_range(2..=4usize);
    let mut disparities: Vec<f64> = (0..n_layers)
        .map(|_| rng.gen_range(0.0..=d_max_dense))
        .collect();
    disparities.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let layers = disparities
        .into_iter()
        .enumerate()
        .map(|(i, d)| Layer {
            disparity_px: d,
            texture: random_texture(rng, width as f64, (0.25, 0.75)),
            vertical: rng
                .gen_bool(0.5)
                .then(|| random_texture(rng, height as f64, (0.6, 0.9))),
            coverage: if i == 0 {
                Coverage::Full
            } else {
                Coverage::Span {
                    start: rng.gen_range(0.0..width as f64),
                    len: rng.gen_range(width as f64 * 0.15..width as f64 * 0.5),
                }
            },
        })
        .collect();
    SceneSpec {
        layers,
        n_views_t: 1,
        n_views_s: n_views,
        height,
        width,
        background: 0.0,
    }
}

/// Procedural EPI corpus: dense EPIs rendered from random layered scenes.
/// Dense-grid disparities stay within `d_max_dense`, so the decimated inputs
/// see up to `alpha_a * d_max_dense` pixels of disparity.
pub fn synth_epi_corpus(
    seed: u64,
    n_scenes: usize,
    n_views: usize,
    width: usize,
    d_max_dense: f64,
) -> Result<Vec<SampleSource>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let height = 6;
    let mut sources = Vec::new();
    for _ in 0..n_scenes {
        let spec = random_scene(&mut rng, n_views, width, height, d_max_dense);
        let lf = synth_lightfield(&spec)?;
        for v in 0..height {
            let epi = lf.extract_epi(EpiAxis::US, v, 0, 0)?;
            sources.push(SampleSource { kind: SourceKind::Epi, data: epi.into_data() });
        }
    }
    Ok(sources)
}

/// Procedural stand-ins for natural photographs: sums of oriented gratings
/// with soft edges, normalized to [0,1]. Exercises the
/// vertical-axis-as-angular pretraining path.
pub fn synth_image_corpus(seed: u64, n_images: usize, h: usize, w: usize) -> Vec<SampleSource> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sources = Vec::new();
    for _ in 0..n_images {
        let mut img = Array2::zeros((h, w));
        let n_components = rng.gen_range(3..=6usize);
        for _ in 0..n_components {
            let fx = rng.gen_range(0.3..6.0) / w as f64;
            let fy = rng.gen_range(0.3..6.0) / h as f64;
            let amp = rng.gen_range(0.2..1.0);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let sgn = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            for ((y, x), px) in img.indexed_iter_mut() {
                *px += amp
                    * (std::f64::consts::TAU * (fx * x as f64 + sgn * fy * y as f64) + phase).sin();
            }
        }
        let (lo, hi) = img.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        let span = (hi - lo).max(1e-9);
        img.mapv_inplace(|v| (v - lo) / span);
        sources.push(SampleSource { kind: SourceKind::NaturalImage, data: img });
    }
    sources
}

/// Resolve the default checkpoint directory from the environment.
pub fn default_checkpoint_dir() -> Option<PathBuf> {
    std::env::var_os("LFDENSE_CKPT_DIR").map(PathBuf::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window_source_yields_one_pair() {
        let cfg = TrainConfig::pretrain(7, 10);
        let src = SampleSource {
            kind: SourceKind::NaturalImage,
            data: Array2::from_shape_fn((31, 44), |(a, w)| ((a * 44 + w) % 11) as f64 / 11.0),
        };
        let (pairs, skipped) = extract_patch_pairs(&[src], &cfg, &PyramidConfig::default()).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(skipped, 0);
        assert_eq!(pairs[0].label.dim(), (31, 44));
        assert_eq!(pairs[0].pyramid.n_a(), 11);
    }

    #[test]
    fn window_count_follows_strides() {
        // 45x64 source, strides (14,20): angular offsets {0,14}, spatial {0,20}.
        let cfg = TrainConfig::pretrain(7, 10);
        let src = SampleSource {
            kind: SourceKind::NaturalImage,
            data: Array2::from_shape_fn((45, 64), |(a, w)| ((a + w) % 9) as f64 / 9.0),
        };
        let (pairs, _) = extract_patch_pairs(&[src], &cfg, &PyramidConfig::default()).unwrap();
        assert_eq!(pairs.len(), 4);
    }

    #[test]
    fn undersized_sources_are_skipped_and_counted() {
        let cfg = TrainConfig::pretrain(7, 10);
        let small = SampleSource { kind: SourceKind::Epi, data: Array2::zeros((30, 44)) };
        let ok = SampleSource { kind: SourceKind::Epi, data: Array2::from_elem((31, 44), 0.4) };
        let (pairs, skipped) = extract_patch_pairs(&[small, ok], &cfg, &PyramidConfig::default()).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(skipped, 1);
    }

    #[test]
    fn decimating_label_reproduces_input_rows_bit_exactly() {
        let cfg = TrainConfig::finetune(3, 10);
        let src = SampleSource {
            kind: SourceKind::Epi,
            data: Array2::from_shape_fn((31, 44), |(a, w)| ((a * 13 + w * 7) % 29) as f64 / 29.0),
        };
        let (pairs, _) = extract_patch_pairs(&[src], &cfg, &PyramidConfig::default()).unwrap();
        let pair = &pairs[0];
        let label_epi = Epi::new(pair.label.clone(), EpiAxis::US).unwrap();
        let dec = label_epi.angular_decimate(cfg.alpha_a).unwrap();
        let rebuilt = build_lapepi(&dec, &PyramidConfig::default()).unwrap();
        let rec = crate::pyramid::collapse(&rebuilt);
        let orig = crate::pyramid::collapse(&pair.pyramid);
        assert_eq!(rec.data(), orig.data());
    }

    #[test]
    fn init_statistics() {
        let params = init_params(&PyramidConfig::default(), 3, 42).unwrap();
        let mut all = Vec::new();
        for l in &params.layers {
            assert!(l.bias.iter().all(|&b| b == 0.0));
            if let Some(s) = &l.prelu_slope {
                assert!(s.iter().all(|&v| v == 0.1));
            }
            all.extend(l.weights.iter().cloned());
        }
        assert!(all.len() > 10_000);
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / all.len() as f64;
        let std = var.sqrt();
        assert!((std - 1e-3).abs() / 1e-3 < 0.05, "stddev {std}");
        assert!(mean.abs() < 1e-4);
    }

    #[test]
    fn finetune_requires_initial_params() {
        let cfg = TrainConfig::finetune(1, 5);
        let src = SampleSource { kind: SourceKind::Epi, data: Array2::from_elem((31, 44), 0.5) };
        let err = run_stage(&[src], &cfg, &PyramidConfig::default(), None, None);
        assert!(matches!(err, Err(Error::BadConfig(_))));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let cfg = TrainConfig::pretrain(1, 5);
        let err = run_stage(&[], &cfg, &PyramidConfig::default(), None, None);
        assert!(matches!(err, Err(Error::EmptyCorpus(_))));
    }
}
