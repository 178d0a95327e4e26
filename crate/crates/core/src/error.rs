//! Shared error type for the segmentation pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("out-of-bounds coordinate at line {line}: ({x}, {y}) not in {width}x{height}")]
    Bounds {
        line: usize,
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },

    #[error("timestamps decrease at line {line}: {t} after {prev}")]
    Order { line: usize, t: f64, prev: f64 },

    #[error("invalid scene spec: {0}")]
    Spec(String),

    #[error("degenerate geometry: {0}")]
    Geometry(String),

    #[error("invalid depth map: {0}")]
    Depth(String),

    #[error("model not usable here: {0}")]
    Model(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input")]
    EmptyInput,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
