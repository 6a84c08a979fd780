use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("persistent-current table is required but was not provided")]
    MissingTable,

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("non-finite value {value} at mesh node {index}")]
    NonFiniteValue { index: usize, value: f64 },

    #[error("operator dimension {dim} exceeds the configured cap {cap}")]
    DimensionOverflow { dim: usize, cap: usize },

    #[error("eigensolver did not converge in {iterations} iterations (worst relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("levels {lower} and {upper} are degenerate (spacing {spacing:e} GHz)")]
    DegenerateSubspace { lower: usize, upper: usize, spacing: f64 },

    #[error("state {state} cannot be tracked between s={from} and s={to} (overlap {overlap:.3})")]
    AmbiguousOverlap { state: usize, from: f64, to: f64, overlap: f64 },

    #[error("persistent current vanishes; computational basis is undefined")]
    ZeroCurrent,

    #[error("rotation angle undefined for A = B = 0")]
    UndefinedAngle,

    #[error("model Hamiltonian has near-degenerate levels (spacing {spacing:e} GHz)")]
    ModelDegeneracy { spacing: f64 },

    #[error("matrix dimension {0} is not a power of two")]
    BadDimension(usize),

    #[error("gap vanishes")]
    ZeroGap,

    #[error("integrator step size underflow at s={s} (h={step:e})")]
    StepFailure { s: f64, step: f64 },

    #[error("trajectories cannot be compared: {0}")]
    MismatchedRuns(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("at s={s}: {source}")]
    AtS { s: f64, source: Box<Error> },

    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("invalid config value for `{key}`: {message}")]
    Validation { key: String, message: String },

    #[error("{stage}: {source}")]
    Stage { stage: &'static str, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at_s(self, s: f64) -> Self {
        match self {
            e @ Error::AtS { .. } => e,
            other => Error::AtS { s, source: Box::new(other) },
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }

    pub(crate) fn validation(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation { key: key.into(), message: message.into() }
    }
}
