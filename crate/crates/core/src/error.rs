//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("missing view ({t},{s}): {path}")]
    MissingView { t: usize, s: usize, path: String },

    #[error("inconsistent spatial size: view ({t},{s}) is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    InconsistentViewSize {
        t: usize,
        s: usize,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },

    #[error("wrong colorspace: expected {expected}, got {got}")]
    WrongColorspace { expected: String, got: String },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("angular size {n_a} minus one is not divisible by decimation rate {rate}")]
    BadDecimation { n_a: usize, rate: usize },

    #[error("kernel size must be odd, got {0}")]
    EvenKernel(usize),

    #[error("spatial width {width} is not divisible by factor {factor} (pad first)")]
    WidthNotDivisible { width: usize, factor: usize },

    #[error("invalid configuration: {0}")]
    BadConfig(String),

    #[error("no aliasing: max disparity {d_max} puts the first spectral replica outside the band; pre-filter design is undefined")]
    NoAliasing { d_max: f64 },

    #[error("pre-filter unnecessary at beta={beta}: the replica amplitude is already at or below the target")]
    FilterUnnecessary { beta: f64 },

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("non-finite loss at step {step}; aborted (last periodic checkpoint is the last good state)")]
    NonFiniteLoss { step: usize },

    #[error("training corpus is empty: {0}")]
    EmptyCorpus(String),

    #[error("unsupported upscaling rate {0}: not factorizable into supported strides")]
    UnsupportedRate(usize),
}
