use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("{what} out of range: {value}")]
    OutOfRange { what: &'static str, value: f64 },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid utilities: {0}")]
    InvalidUtility(String),

    #[error("treatment-effect weight undefined: proxy risk among false negatives is zero")]
    UndefinedLambda,

    #[error("unknown group label `{0}`")]
    UnknownGroup(String),

    #[error("group `{0}` has a single outcome class")]
    SingleClass(String),

    #[error("missing value at row {row}, column `{column}`")]
    MissingValue { row: usize, column: String },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("logistic fit did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error(
        "quasi-complete separation detected (coefficient `{column}` reached {magnitude:.3} on the standardized scale)"
    )]
    Separation { column: String, magnitude: f64 },

    #[error("information matrix is singular")]
    Singular,

    #[error("{skipped} of {total} bootstrap replicates failed (more than 10%)")]
    TooManySkips { skipped: usize, total: usize },

    #[error("no candidate satisfies the capacity cap {cap}")]
    Infeasible { cap: f64 },

    #[error("search space of {0} candidates exceeds the limit of 1,000,000")]
    TooManyCandidates(usize),

    #[error("cannot calibrate intercept of group `{group}` to prevalence {prevalence}")]
    InterceptSolve { group: String, prevalence: f64 },
}
