use thiserror::Error;

use crate::closedloop::Trace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("design infeasible: {0}")]
    DesignInfeasible(String),

    /// The integration produced a non-finite value. The trace recorded up to
    /// that point is kept so callers can flush it.
    #[error("numerical blow-up at t = {t:.6}: {what}")]
    BlowUp {
        t: f64,
        what: String,
        partial: Box<Trace>,
    },

    #[error("decay fit failed: {0}")]
    FitFailed(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::Config(_) | Error::Json(_) => 2,
            Error::DesignInfeasible(_) => 3,
            Error::BlowUp { .. } | Error::FitFailed(_) => 4,
            Error::Verification(_) => 5,
            Error::Io(_) | Error::Csv(_) => 1,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
