use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Matrix shape, printed as `rows×cols`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape(pub usize, pub usize);

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}×{}", self.0, self.1)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("invalid buffer for {rows}×{cols} matrix: {len} values")]
    BadBuffer { rows: usize, cols: usize, len: usize },
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("non-finite coordinate at point {0}")]
    NonFiniteCoordinate(usize),
    #[error("label {label} at point {index} is outside [0, {classes})")]
    LabelOutOfRange {
        index: usize,
        label: u32,
        classes: usize,
    },
    #[error("point cloud has no labels")]
    MissingLabels,
    #[error("knn needs more than k={k} points, got {n}")]
    NotEnoughPoints { n: usize, k: usize },
    #[error("duplicate coordinate ({}, {}, {})", .0[0], .0[1], .0[2])]
    DuplicateCoordinate([i32; 3]),
    #[error("unsupported kernel point count {0} (expected 1, 9, 15 or 27)")]
    UnsupportedKernelCount(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("stride level mismatch: expected {expected}, got {got}")]
    StrideMismatch { expected: u32, got: u32 },
    #[error("saved activations missing or stale for {0}")]
    MissingActivations(&'static str),
    #[error("optimizer state not initialized for parameter `{0}`")]
    UninitializedOptimizer(String),
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::ShapeMismatch {
            op,
            left: Shape(left.0, left.1),
            right: Shape(right.0, right.1),
        }
    }
}
