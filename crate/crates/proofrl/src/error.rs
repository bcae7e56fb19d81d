//! Crate-wide error type. Variants mirror the failure classes surfaced by the
//! raster, metric, editing and training layers.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("out of bounds: {0}")]
    Bounds(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid action: {0}")]
    Action(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("error injection failed: {0}")]
    Injection(String),
    #[error("segments not adjacent: {0}")]
    Adjacency(String),
    #[error("unknown label: {0}")]
    Label(String),
    /// The operation had no effect (e.g. watershed aimed at background).
    /// Environments translate this into a non-improving step, not a crash.
    #[error("no-op: {0}")]
    NoOp(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("training stage violation: {0}")]
    Stage(String),
    #[error("training fault: {0}")]
    TrainingFault(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad user input rather than a runtime fault.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Parameter(_)
                | Error::Dimension(_)
                | Error::Bounds(_)
                | Error::Action(_)
                | Error::Stage(_)
                | Error::Format(_)
        )
    }
}
