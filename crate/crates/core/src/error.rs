use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = NdmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NdmError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid dimension configuration {dims:?} for space of dimension {d}")]
    BadConfiguration { dims: Vec<usize>, d: usize },

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("not enough samples: need more than {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("input has zero variance")]
    ZeroVariance,

    #[error("subspace {0} has zero total variance")]
    DegenerateSubspace(usize),

    #[error("all effects are zero")]
    NoEffect,

    #[error("query vector has zero norm")]
    ZeroNorm,

    #[error("value {value} outside [{lo}, {hi}]")]
    ValueOutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("activation buffer exhausted: requested {requested} rows, {remaining} left")]
    BufferExhausted { requested: usize, remaining: usize },

    #[error("activations ran out at step {step}, before merging starts at step {delay}; dump more activations or enable recycling")]
    ActivationsTooFew { step: usize, delay: usize },

    #[error("activation buffer is empty")]
    EmptyBuffer,

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    MagicMismatch { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),

    #[error("file truncated: expected {expected} bytes of payload, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("NaN or infinite value at row {row}, column {col}")]
    NonFiniteEntry { row: usize, col: usize },

    #[error("matrix is not orthogonal: max |RᵀR - I| = {0:e}")]
    NotOrthogonal(f64),

    #[error("metadata missing: {0}")]
    MissingMetadata(String),

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("{0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
