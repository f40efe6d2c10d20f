use thiserror::Error;

/// Errors raised by measure construction, solvers and builders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter {name}: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("map undefined at support point {0:?}")]
    MapUndefined(Vec<f64>),

    #[error("problem too large: {rows} x {cols} supports exceed the limit of {limit}")]
    TooLarge { rows: usize, cols: usize, limit: usize },

    #[error("source measure is atomic; a deterministic coupling need not exist")]
    AtomicSource,

    #[error("Poisson source has mean {mean:e}; a periodic solution requires zero mean")]
    NonZeroMean { mean: f64 },

    #[error("density positivity violated: min {min:e} < required {required:e}")]
    NotPositive { min: f64, required: f64 },

    #[error("flow blow-up at step {step}: displacement {displacement:e} exceeds {limit:e}")]
    BlowUp { step: usize, displacement: f64, limit: f64 },

    #[error("map is not monotone and carries no potential")]
    NotInvertible,

    #[error("point {point:?} lies outside the chart cap {cap}")]
    OutsideCap { point: Vec<f64>, cap: f64 },

    #[error("support violation: {0}")]
    SupportViolation(String),

    #[error("point {0:?} is not a base point and the interpolation rule is none")]
    NotABasePoint(Vec<f64>),

    #[error("base point {index}: {source}")]
    AtBasePoint {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter { name, reason: reason.into() }
    }

    pub(crate) fn at(index: usize, source: Error) -> Self {
        Error::AtBasePoint { index, source: Box::new(source) }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
