use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] wncs_aoi::Error),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("writing CSV: {0}")]
    Csv(#[from] csv::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 2 for bad input, 3 when the constraints admit no solution, 4 for
    /// numerical failure, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        use wncs_aoi::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Model(E::Domain(_) | E::Config(_)) => 2,
            CliError::Model(E::Infeasible { .. }) => 3,
            CliError::Model(E::Numeric(_) | E::Divergent(_)) => 4,
            CliError::Io(..) | CliError::Csv(_) => 1,
        }
    }
}
