use std::path::PathBuf;

/// Errors raised anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate 6D rotation input: {0}")]
    DegenerateInput(&'static str),
    #[error("rotations are antipodal; interpolation path is ambiguous")]
    AmbiguousAntipodal,
    #[error("point {index} is behind the camera (z = {z})")]
    BehindCamera { index: usize, z: f64 },
    #[error("bone ending at joint {joint} has zero length")]
    ZeroLengthBone { joint: usize },
    #[error("alignment landmarks are degenerate (parallel or coincident)")]
    DegenerateFrame,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("random-pose replacement needs a batch of at least 2 sequences")]
    BatchTooSmall,
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },
    #[error("checkpoint incompatible: {0}")]
    VersionMismatch(String),
    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },
    #[error("point cloud is degenerate (all points coincide)")]
    DegenerateCloud,
    #[error("sequence too short: need at least {needed} frames, got {got}")]
    SequenceTooShort { needed: usize, got: usize },
    #[error("sequence is empty")]
    EmptySequence,
    #[error("no visible frame available (window starting at frame {start})")]
    AllMasked { start: usize },
    #[error("window overflow: {observed} observed + {horizon} horizon exceeds model length {window}")]
    WindowOverflow {
        observed: usize,
        horizon: usize,
        window: usize,
    },
    #[error("filter window does not fit a sequence of {len} frames")]
    WindowTooLarge { len: usize },
    #[error("need at least {needed} observed frames, got {got}")]
    TooFewObserved { needed: usize, got: usize },
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unsupported format tag `{0}`")]
    UnknownFormat(String),
    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("not found: {0}")]
    NotFound(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
