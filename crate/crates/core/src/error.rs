use alloc::string::String;

use thiserror::Error;

/// Errors raised by the core pipeline operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid dimensions {width}x{height}")]
    Dimension { width: usize, height: usize },

    #[error("polygon needs at least 3 vertices, got {0}")]
    DegeneratePolygon(usize),

    #[error("degenerate region: {0}")]
    DegenerateRegion(String),

    #[error("expected {expected} channel(s), got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },

    #[error("box {x},{y} {width}x{height} is outside a {image_width}x{image_height} image or empty")]
    Bounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
        image_width: usize,
        image_height: usize,
    },

    #[error("shape mismatch: {left} vs {right}")]
    Shape { left: String, right: String },

    #[error("seam {seam} outside (0, {width})")]
    Seam { seam: usize, width: usize },

    #[error("pixel buffer has length {actual}, expected {expected}")]
    BufferLength { expected: usize, actual: usize },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("mask has no set pixels")]
    EmptyMask,

    #[error("hole covers the whole image; nothing to anchor the fill")]
    DegenerateHole,

    #[error("backend contract violated: {0}")]
    BackendContract(String),

    #[error("backend failure: {0}")]
    Backend(String),

    #[error("need at least 2 feature vectors, got {0}")]
    TooFewSamples(usize),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = core::result::Result<T, Error>;
