use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("group {group}: index {index} outside coefficient range [0, {p})")]
    IndexOutOfRange { group: usize, index: i64, p: usize },

    #[error("group {group} is empty")]
    EmptyGroup { group: usize },

    #[error("group {group}: index {index} appears more than once")]
    DuplicateWithinGroup { group: usize, index: usize },

    #[error("chain geometry: (p - B) = {span} is not divisible by shift {shift}")]
    GeometryMismatch { span: usize, shift: usize },

    #[error("dimension mismatch ({context}): expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("groups {first} and {second} overlap at coordinate {index}")]
    OverlappingGroups {
        first: usize,
        second: usize,
        index: usize,
    },

    #[error("coordinate {index} is not covered by any group")]
    UncoveredSupport { index: usize },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("squared loss requires a common sample size; task {task} has {got} rows, expected {expected}")]
    UnequalSampleSizes {
        task: usize,
        expected: usize,
        got: usize,
    },

    #[error("logistic labels must be exactly +1 or -1 (task {task}, row {row}: {value})")]
    BadLabels { task: usize, row: usize, value: f64 },

    #[error("restricted Gram matrix is singular (kappa = {kappa:e})")]
    SingularRestriction { kappa: f64 },

    #[error("restricted strong convexity constant must be positive, got {kappa}")]
    NonpositiveKappa { kappa: f64 },

    #[error("cannot place {requested} pairwise disjoint active groups (at most {available})")]
    GeneratorInfeasible { requested: usize, available: usize },

    #[error("task {task} has {samples} samples, fewer than {folds} folds")]
    TooFewSamples {
        task: usize,
        samples: usize,
        folds: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
