use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("degenerate polyline")]
    DegeneratePolyline,

    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },

    #[error("cannot offset a trajectory with fewer than 2 distinct points")]
    CannotOffset,

    #[error("empty point set")]
    EmptyPointSet,

    #[error("cardinality mismatch: {left} vs {right} points")]
    CardinalityMismatch { left: usize, right: usize },

    #[error("permutation {member} is not a member of the {kind} group of size {size}")]
    PermutationMismatch {
        member: String,
        kind: &'static str,
        size: usize,
    },

    #[error("non-finite cost at ({row}, {col})")]
    NonFiniteCost { row: usize, col: usize },

    #[error("cost matrix has {rows} rows but {cols} columns; rows must be >= cols")]
    TooFewRows { rows: usize, cols: usize },

    #[error("query budget exceeded: {targets} targets for {predictions} predictions")]
    QueryBudgetExceeded { predictions: usize, targets: usize },

    #[error("invalid BEV spec: {0}")]
    InvalidBevSpec(String),

    #[error("pixel ({row}, {col}) is outside the {height}x{width} grid")]
    PixelOutOfGrid {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },

    #[error("assignment inconsistent with inputs: {0}")]
    InconsistentAssignment(String),

    #[error("invalid scores: {0}")]
    InvalidScores(String),

    #[error("element {index} has {got} points, expected {expected} (resample first)")]
    NotResampled {
        index: usize,
        got: usize,
        expected: usize,
    },

    #[error("occlusion interval [{start}, {end}] exceeds element length {length}")]
    IntervalOutOfRange { start: f64, end: f64, length: f64 },

    #[error("scene/prediction mismatch: {0}")]
    SceneMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Document shape problems; `path` names the offending location.
    #[error("{path}: {message}")]
    Schema { path: String, message: String },

    #[error("missing field: {0}")]
    MissingField(String),

    #[error("invariant violated at {path}: {message}")]
    Invariant { path: String, message: String },

    #[error("malformed raster: {0}")]
    MalformedRaster(String),

    #[error("row count mismatch: header says {expected}, found {found}")]
    RowCountMismatch { expected: usize, found: usize },

    #[error("json: {0}")]
    Json(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}
