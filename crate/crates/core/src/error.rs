use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("infeasible constraints ({} violating rows)", .violating.len())]
    Infeasible { violating: Vec<usize> },

    #[error("solver hit {iterations} iterations with residual {residual:.3e}")]
    NotConverged {
        iterations: usize,
        residual: f64,
        best: Box<crate::svm::SvmSolution>,
    },

    #[error("divergence at step {step}: loss {loss:.6e}")]
    Divergence { step: usize, loss: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParam(msg.into()))
}
