use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad parameters or configuration supplied by the caller.
    Usage,
    /// Input data that cannot be analyzed as given.
    Data,
    /// A numerical routine failed on otherwise valid input.
    Numerical,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("number of quantiles must be at least 2, got {0}")]
    InvalidQuantiles(usize),

    #[error("need at least {q} observations to form {q} quantiles, got {n}")]
    TooFewObservations { n: usize, q: usize },

    #[error("non-finite value in column `{column}` at row {row}")]
    NonFinite { column: String, row: usize },

    #[error("exposure `{column}` is not quantized to 0..{max}: row {row} has value {value}")]
    NotQuantized {
        column: String,
        row: usize,
        value: f64,
        max: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("design needs more rows than columns (n = {n}, p = {p})")]
    NotEnoughRows { n: usize, p: usize },

    #[error("design is rank deficient: column `{column}` is collinear with preceding columns")]
    RankDeficient { column: String, index: usize },

    #[error("outcome must be 0 or 1 for a logistic model; row {row} has {value}")]
    NonBinaryOutcome { row: usize, value: f64 },

    #[error("logistic fit did not converge in {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("quasi-complete separation: coefficient for `{column}` diverged past |{limit}|")]
    QuasiSeparation { column: String, limit: f64 },

    #[error("index {index} out of range for {len} coefficients")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("weights are not defined for non-additive or non-linear models")]
    WeightsUndefined,

    #[error("WQS index is constant on the estimation rows")]
    DegenerateIndex,

    #[error("{failed} bootstrap resamples failed, exceeding the retry budget of {budget}: {last}")]
    BootstrapFailures {
        failed: usize,
        budget: usize,
        last: Box<Error>,
    },

    #[error("fewer than two successful replications in cell")]
    EmptyCell,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidQuantiles(_)
            | Error::InvalidModel(_)
            | Error::InvalidConfig(_)
            | Error::IndexOutOfRange { .. }
            | Error::WeightsUndefined => ErrorKind::Usage,
            Error::TooFewObservations { .. }
            | Error::NonFinite { .. }
            | Error::NotQuantized { .. }
            | Error::DimensionMismatch(_)
            | Error::NotEnoughRows { .. }
            | Error::NonBinaryOutcome { .. } => ErrorKind::Data,
            Error::RankDeficient { .. }
            | Error::NotConverged { .. }
            | Error::QuasiSeparation { .. }
            | Error::DegenerateIndex
            | Error::BootstrapFailures { .. }
            | Error::EmptyCell => ErrorKind::Numerical,
        }
    }
}
