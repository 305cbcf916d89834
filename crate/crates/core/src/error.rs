use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Usage,
    Format,
    Numeric,
}

#[derive(Error, Debug)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    // File format errors.
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("truncated file: {0}")]
    Truncated(&'static str),
    #[error("trailing bytes after payload")]
    TrailingBytes,
    #[error("negative activation {value} at flat index {index}")]
    NegativeActivation { index: usize, value: f32 },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("invalid utf-8 in image id")]
    InvalidId,
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },

    // Shape and argument errors.
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("mixed descriptor dimensions: {first} and {other}")]
    MixedDims { first: usize, other: usize },
    #[error("channel {channel} out of range for {channels} channels")]
    ChannelOutOfRange { channel: usize, channels: usize },
    #[error("detector count {n} out of range 1..={channels}")]
    DetectorCountOutOfRange { n: usize, channels: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("invalid parameter {name}: {detail}")]
    InvalidParameter { name: &'static str, detail: String },
    #[error("duplicate image id {0:?}")]
    DuplicateId(String),
    #[error("descriptor {0:?} is not unit-normalized")]
    NotNormalized(String),
    #[error("ground truth: {0}")]
    GroundTruth(String),
    #[error("no ranking for query {0:?}")]
    MissingQuery(String),
    #[error("query {0:?} has no positive images")]
    NoPositives(String),

    // Numeric degeneracies.
    #[error("zero-norm descriptor {0:?}")]
    ZeroDescriptor(String),
    #[error("degenerate training set: zero spread after normalization and centering")]
    ZeroSpread,
    #[error("output dimension {requested} infeasible (at most {max})")]
    InfeasibleDim { requested: usize, max: usize },
    #[error("query expansion produced a zero vector")]
    ZeroExpansion,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Io(_) => ErrorClass::Io,
            BadMagic { .. }
            | VersionMismatch { .. }
            | Truncated(_)
            | TrailingBytes
            | NegativeActivation { .. }
            | NonFinite { .. }
            | InvalidId
            | Malformed { .. }
            | InvalidShape(_)
            | DimMismatch { .. }
            | MixedDims { .. }
            | DuplicateId(_)
            | NotNormalized(_)
            | GroundTruth(_)
            | MissingQuery(_)
            | NoPositives(_) => ErrorClass::Format,
            ChannelOutOfRange { .. }
            | DetectorCountOutOfRange { .. }
            | TooFewSamples { .. }
            | InvalidParameter { .. }
            | InfeasibleDim { .. } => ErrorClass::Usage,
            ZeroDescriptor(_) | ZeroSpread | ZeroExpansion => ErrorClass::Numeric,
        }
    }
}
