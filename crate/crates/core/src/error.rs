use thiserror::Error;

/// Constraint of the connection-count problem that made it infeasible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    /// Total transmit power `K * P_t <= P_max`.
    TotalPower,
    /// PAoI violation probability `Pr[A > zeta] <= Pr_max`.
    Violation,
}

impl std::fmt::Display for Constraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Constraint::TotalPower => f.write_str("total transmit power (C1)"),
            Constraint::Violation => f.write_str("PAoI violation probability (C2)"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("average age diverges: block error probability is {0}")]
    Divergent(f64),

    #[error("infeasible: {constraint} is binding ({detail})")]
    Infeasible {
        constraint: Constraint,
        detail: String,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
