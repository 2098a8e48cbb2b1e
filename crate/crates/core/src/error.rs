use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate covariate")]
    DegenerateCovariate,

    #[error("non-finite value in input: {0}")]
    NonFinite(&'static str),

    #[error("insufficient support for K knots (K = {knots}, distinct values = {distinct})")]
    InsufficientSupport { knots: usize, distinct: usize },

    #[error("covariate out of range: {0}")]
    CovariateOutOfRange(f64),

    #[error("penalty order must be below spline order (p = {penalty_order}, m = {order})")]
    PenaltyOrder { penalty_order: usize, order: usize },

    #[error("invalid spline specification: {0}")]
    InvalidSpec(String),

    #[error("singular basis system: reduce K or set λ>0 (reciprocal condition {rcond:.3e})")]
    SingularSystem { rcond: f64 },

    #[error("empty poststratum {0}")]
    EmptyPoststratum(usize),

    #[error("collinear design: {0}")]
    Collinear(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("quantile undefined for this signed measure")]
    QuantileUndefined,

    #[error("root not bracketed")]
    RootNotBracketed,

    #[error("Gini undefined for a single atom")]
    GiniSingleAtom,

    #[error("density too small at the quantile")]
    DensityTooSmall,

    #[error("kernel density needs at least {needed} sampled units, got {got}")]
    TooFewForDensity { needed: usize, got: usize },

    #[error("variance needs n_h ≥ 2")]
    VarianceSampleTooSmall,

    #[error("negative variance estimate {0:.6e}")]
    NegativeVariance(f64),

    #[error("zero joint inclusion probability for pair ({0}, {1})")]
    ZeroJointProbability(usize, usize),

    #[error("unknown unit index {0}")]
    UnknownUnit(usize),

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("missing stratum allocation for {0}")]
    MissingAllocation(String),

    #[error("unit {0} has no stratum label")]
    MissingStratum(String),

    #[error("invalid population: {0}")]
    InvalidPopulation(String),

    #[error("unknown study variable {0}")]
    UnknownVariable(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("I/O error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
