//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by tensor construction, forward ops and the backward pass.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("axis {axis} out of range for rank-{rank} tensor in `{op}`")]
    Axis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("domain error in `{op}`: {msg}")]
    Domain { op: &'static str, msg: String },
    #[error("rank error: {0}")]
    Rank(String),
    #[error("stale graph: backward() was already run on this graph")]
    StaleGraph,
}

/// Errors from the camera/warping layer.
#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("field kind {0} not valid here")]
    BadKind(&'static str),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Errors while assembling weights from a named checkpoint.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("missing checkpoint parameter `{0}`")]
    MissingParam(String),
    #[error("parameter `{path}` has shape {got:?}, expected {expected:?}")]
    UnexpectedShape {
        path: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("bad checkpoint config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Errors raised by metric computations.
#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty valid mask: no pixels to evaluate")]
    EmptyMask,
    #[error("metric domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Errors from the binary file formats (.flo, KITTI PNG, PFM, GVT/checkpoint).
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected}, got {got}")]
    Magic { expected: String, got: String },
    #[error("truncated payload: {0}")]
    Truncated(String),
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("unsupported bit depth or layout: {0}")]
    BitDepth(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("image codec error: {0}")]
    Image(String),
}

/// Errors from tiled-inference planning and execution.
#[derive(Debug, Error)]
pub enum PlanError {
    #[error("tile plan covers no pixels")]
    ZeroCoverage,
    #[error("invalid tile plan: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Tensor(TensorError),
}

/// Errors from synthetic-data generation and the toy training loop.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("bad parameter: {0}")]
    Param(String),
    #[error("loss diverged to a non-finite value at step {step}")]
    Divergence { step: usize },
    #[error("empty valid mask in loss")]
    EmptyMask,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl From<MetricError> for TrainError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::EmptyMask => TrainError::EmptyMask,
            MetricError::Domain(m) => TrainError::Param(m),
            MetricError::Tensor(t) => TrainError::Tensor(t),
        }
    }
}
