use std::io;

use thiserror::Error;

/// Everything that can go wrong inside the codec.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index ({c}, {h}, {w}) out of bounds for {channels}x{height}x{width} tensor")]
    OutOfBounds {
        c: usize,
        h: usize,
        w: usize,
        channels: usize,
        height: usize,
        width: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("slice layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("malformed container: {0}")]
    Format(String),
    #[error("unsupported bitstream version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("bitstream truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checksum mismatch in {0}")]
    Corrupt(Segment),
    #[error("bd-rate: {0}")]
    Curve(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Identifies an independently coded segment of a bitstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    HyperLatent,
    /// 1-based slice index.
    Slice(usize),
}

impl std::fmt::Display for Segment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Segment::HyperLatent => write!(f, "hyper-latent payload"),
            Segment::Slice(n) => write!(f, "slice {n}"),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
