use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("row {row}: response value `{value}` is not a non-negative integer")]
    InvalidResponse { row: usize, value: String },

    #[error("row {row}, column `{column}`: `{value}` is not a number")]
    InvalidNumber {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}, column `{column}`: missing value")]
    MissingCell { row: usize, column: String },

    #[error("unknown covariate kind `{0}` (expected `numeric` or `categorical`)")]
    UnknownKind(String),

    #[error("duplicate covariate name `{0}`")]
    DuplicateCovariate(String),

    #[error("categorical covariate `{0}` has fewer than two observed levels")]
    SingleLevel(String),

    #[error("length mismatch for `{name}`: expected {expected}, found {found}")]
    LengthMismatch {
        name: String,
        expected: usize,
        found: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty design: every column has zero variance")]
    EmptyDesign,

    #[error("linear predictor overflow")]
    LinearPredictorOverflow,

    #[error("degenerate response: all counts are zero")]
    DegenerateResponse,

    #[error("rank-deficient design, collinear columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("invalid lambda grid: {0}")]
    InvalidGrid(String),

    #[error("invalid cross-validation plan: {0}")]
    InvalidPlan(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot resolve term `{0}` against the design columns")]
    UnresolvedTerm(String),

    #[error("expected mean overflows for the requested effects; use smaller coefficients")]
    SyntheticOverflow,

    #[error("outer fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical routines rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::LinearPredictorOverflow
            | Error::DegenerateResponse
            | Error::RankDeficient { .. }
            | Error::EmptyDesign => true,
            Error::Fold { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    /// Process exit code: 2 for bad configuration or input, 3 for numerical
    /// failure, 4 for failures writing results.
    pub fn exit_code(&self) -> i32 {
        if self.is_numerical() {
            3
        } else if matches!(self, Error::Output { .. }) {
            4
        } else {
            2
        }
    }
}
