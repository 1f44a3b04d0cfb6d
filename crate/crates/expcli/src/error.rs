use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] tempering::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use tempering::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(E::InvalidParam(_) | E::Parse(_)) => 2,
            CliError::Core(
                E::Infeasible { .. } | E::NotConverged { .. } | E::Divergence { .. } | E::NonFinite(_),
            ) => 3,
            CliError::Core(E::Csv(_) | E::Io(_)) | CliError::Io(_) | CliError::Csv(_) => 1,
        }
    }
}

pub(crate) fn config_err<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Config(msg.into()))
}
