use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid system configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid user statistics: {0}")]
    InvalidUser(String),
    #[error("infeasible antenna layout: {0}")]
    InfeasibleLayout(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),
    #[error("channel matrix is rank deficient ({0})")]
    RankDeficient(String),
    #[error("numerically singular matrix (condition estimate {condition:.3e})")]
    NumericalRank { condition: f64 },
    #[error("surrogate log argument is not positive at the expansion point (value {0:e})")]
    SurrogateDomain(f64),
    #[error("cache invariant violated: {0}")]
    CacheInvariant(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("run stopped after {completed} of {total} sweep points: {source}; partial results in {partial}")]
    Partial { completed: usize, total: usize, partial: String, source: Box<Error> },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
}
