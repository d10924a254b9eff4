use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("state {state:?} at stage {t} lies outside the state domain")]
    DomainViolation { t: usize, state: Vec<f64> },

    #[error("control {control:?} at stage {t} lies outside the control set (violation {violation:.3e})")]
    InfeasibleControl {
        t: usize,
        control: Vec<f64>,
        violation: f64,
    },

    #[error("point is not a member of the set (violation {0:.3e})")]
    NotMember(f64),

    #[error("non-finite entry in {0}")]
    NonFinite(String),

    #[error("process too short: need {needed} stages, have {available}")]
    ProcessTooShort { needed: usize, available: usize },

    #[error("reference process is not dynamics-feasible at stage {t} (residual {residual:.3e})")]
    InfeasibleReference { t: usize, residual: f64 },

    #[error("processes start from different initial states")]
    InitialStateMismatch,

    #[error("no analytic derivative available for {0}; use finite differences")]
    MissingDerivative(String),

    #[error("hypothesis failure: {0}")]
    Hypothesis(String),

    #[error("no multiplier found at horizon {h}: normal violation {normal:.3e}, abnormal violation {abnormal:.3e}")]
    NoMultiplier { h: usize, normal: f64, abnormal: f64 },

    #[error("degenerate multiplier: normalization constant {0:.3e} is not positive")]
    DegenerateMultiplier(f64),

    #[error("decomposition infeasible (residual {0:.3e}): the conic sum does not cover the space")]
    Decomposition(f64),

    #[error("linear program failed: {0}")]
    LinearProgram(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown builtin instance `{0}`")]
    UnknownInstance(String),

    #[error("problem file {path}: {message}")]
    Schema { path: String, message: String },

    #[error("structure not supported by this oracle: {0}")]
    UnsupportedStructure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
