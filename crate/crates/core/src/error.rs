use thiserror::Error;

/// Errors raised by simulation, re-weighting, adaptation and the sampling loop.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AmisError {
    #[error("non-finite state at step {step} (t = {time})")]
    NonFiniteState { step: usize, time: f64 },

    #[error("structural mismatch: {0}")]
    Structural(String),

    #[error("path is missing its noise increments")]
    MissingIncrements,

    #[error("problem has no cost form (running/terminal cost); path cost is undefined")]
    UnsupportedForm,

    #[error("invalid discard time {discard} at iteration {iteration}: must satisfy 0 <= t < k")]
    InvalidDiscardTime { discard: usize, iteration: usize },

    #[error("effective sample size is undefined: all weighted values are zero")]
    UndefinedEss,

    #[error("free energy is undefined: all weighted terms are zero")]
    UndefinedFreeEnergy,

    #[error("target functional returned a negative value ({0}); use the signed estimator")]
    NegativeFunctional(f64),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<AmisError>,
    },
}

impl AmisError {
    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        match self {
            e @ AmisError::Iteration { .. } => e,
            e => AmisError::Iteration {
                iteration,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, AmisError>;
