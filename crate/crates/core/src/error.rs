use thiserror::Error;

/// Errors raised by table construction, the checkers, the feasibility
/// routines and the dynamics module.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("missing entry for key `{0}`")]
    MissingEntry(String),
    #[error("negative probability {value} at `{key}`")]
    NegativeProbability { key: String, value: f64 },
    #[error("non-finite probability at `{0}`")]
    NonFinite(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("conditioning on an event of probability {0} (zero support)")]
    ZeroSupport(f64),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid behavior: {0}")]
    InvalidBehavior(String),
    #[error("relabel map incompatible with the outcome alphabets: {0}")]
    IncompatibleRelabel(String),
    #[error("premise unmet: the j-marginal is not a point mass (distance {0})")]
    NotDeterministicPremise(f64),
    #[error("bad cardinality: {0}")]
    BadCardinality(String),
    #[error("direction {0} does not have unit norm")]
    NonUnitDirection(String),
    #[error("behavior is not perfectly correlated at the requested settings (violation {0})")]
    NotPerfectlyCorrelated(f64),
    #[error("problem too large: {0}")]
    TooLarge(String),
    #[error("outcome alphabet must be {{+1, -1}}: {0}")]
    BadOutcomeAlphabet(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("grid point t = {t} lies within {margin} of the breakpoint {breakpoint}")]
    GridTouchesBreakpoint {
        t: f64,
        breakpoint: f64,
        margin: f64,
    },
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
