use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate vector: {0}")]
    DegenerateVector(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("mass mismatch: source sums to {source_mass}, target sums to {target_mass}")]
    MassMismatch { source_mass: f64, target_mass: f64 },

    #[error("sinkhorn did not converge after {iterations} iterations (marginal error {marginal_error:e})")]
    Unconverged {
        iterations: usize,
        marginal_error: f64,
        best: Box<crate::ot::SinkhornSolution>,
    },

    #[error("numerical failure at step {step}: {what}")]
    NumericalFailure { step: usize, what: String },

    #[error("training aborted at step {step}: {what}")]
    TrainingAborted {
        step: usize,
        what: String,
        partial: Box<crate::ldrot::TrainHistory>,
    },

    #[error("could not place class means after {attempts} attempts")]
    PlacementFailure { attempts: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("stale or mismatched forward cache: {0}")]
    Cache(&'static str),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn ensure_same_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { expected, got });
    }
    Ok(())
}
