use thiserror::Error;

use crate::popsim::PopulationTrajectory;

/// Broad failure classes, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("edge {from}->{to} is missing covariate `{covariate}`")]
    MissingCovariate {
        from: usize,
        to: usize,
        covariate: String,
    },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("linear predictor {predictor} on edge {from}->{to} would overflow exp()")]
    RateOverflow { from: usize, to: usize, predictor: f64 },

    #[error("negative rate {rate} on edge {from}->{to}")]
    NegativeRate { from: usize, to: usize, rate: f64 },

    #[error("node {0} has zero total out-rate")]
    IsolatedNode(usize),

    #[error("singular system: {0}; check that the generator is irreducible")]
    Singular(String),

    #[error("precision has {zeros} near-zero eigenvalues (expected 1); graph is reducible")]
    RankDeficient { zeros: usize },

    #[error("sum-to-zero constraint violated: 1'x = {sum}")]
    ConstraintViolation { sum: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("ODE state diverged at t = {time}")]
    Diverged { time: f64 },

    #[error("event cap of {cap} exceeded at t = {}", .partial.times.last().copied().unwrap_or(0.0))]
    EventCapExceeded {
        cap: u64,
        partial: Box<PopulationTrajectory>,
    },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("too few draws: need at least {needed}, have {have}")]
    TooFewDraws { needed: usize, have: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::MissingCovariate { .. } | Error::Precondition(_) => {
                ErrorClass::Config
            }
            Error::InvalidGraph(_)
            | Error::Parse { .. }
            | Error::InvalidData(_)
            | Error::NegativeRate { .. }
            | Error::IsolatedNode(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => ErrorClass::Data,
            Error::RateOverflow { .. }
            | Error::Singular(_)
            | Error::RankDeficient { .. }
            | Error::ConstraintViolation { .. }
            | Error::NonFinite(_)
            | Error::Diverged { .. }
            | Error::EventCapExceeded { .. }
            | Error::NotPositiveDefinite(_)
            | Error::TooFewDraws { .. } => ErrorClass::Numerical,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
