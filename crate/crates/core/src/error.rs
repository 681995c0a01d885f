use crate::nn::NnError;
use crate::solver::SolveTrace;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("solver failed at t = {t} after {} velocity evaluations: {reason}", trace.nfe)]
    Solver {
        reason: String,
        t: f64,
        trace: Box<SolveTrace<f64>>,
    },
    #[error("training diverged at epoch {epoch} (loss {loss}); last finite parameters kept")]
    Diverged {
        epoch: usize,
        loss: f64,
        last_good: Vec<f64>,
    },
    #[error("planning failed: {0}")]
    Planning(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
