use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GsanError {
    #[error("invalid simplex {simplex:?}: {reason}")]
    InvalidSimplex { simplex: Vec<usize>, reason: String },

    #[error("simplex {simplex:?} has order {order} but max_order is {max_order}")]
    OrderExceeded {
        simplex: Vec<usize>,
        order: usize,
        max_order: usize,
    },

    #[error("order {order} outside the valid range {min}..={max}")]
    OrderOutOfRange { order: usize, min: usize, max: usize },

    #[error("order {0} has no simplices")]
    EmptyOrder(usize),

    #[error("operator is not symmetric (entry ({row}, {col}))")]
    NotSymmetric { row: usize, col: usize },

    #[error("step size {eps} outside (0, {upper})")]
    InvalidStepSize { eps: f64, upper: f64 },

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("no harmonic projector for order {0}")]
    MissingProjector(usize),

    #[error("coefficient at ({row}, {col}) lies outside the support")]
    SupportViolation { row: usize, col: usize },

    #[error("non-finite attention logit at ({row}, {col})")]
    NonFiniteLogit { row: usize, col: usize },

    #[error("candidate face {0:?} is not a simplex of the complex")]
    MissingFace(Vec<usize>),

    #[error("loss node has shape {rows}x{cols}, expected a scalar")]
    NotScalar { rows: usize, cols: usize },

    #[error("function returned {first} then {second} for identical parameters")]
    NonDeterministic { first: f64, second: f64 },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("mask selects no entries")]
    EmptyMask,

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("only {found} candidates for class {class}, need at least {needed}")]
    InsufficientCandidates {
        class: usize,
        found: usize,
        needed: usize,
    },

    #[error("checkpoint incompatible: {0}")]
    IncompatibleCheckpoint(String),

    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for GsanError {
    fn from(e: std::io::Error) -> Self {
        GsanError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for GsanError {
    fn from(e: serde_json::Error) -> Self {
        GsanError::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, GsanError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(GsanError::ShapeError(msg.into()))
}
