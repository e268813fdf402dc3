use thiserror::Error;

/// Errors raised anywhere in the inference pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The log-density is not finite at the requested parameter value.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("all {iterations} adaptation iterations were divergent (last step size {step_size:e}); check the initial point and scaling")]
    AllDivergent { iterations: usize, step_size: f64 },

    #[error("chain is empty after post-processing ({draws} draws, thin {thin}); run a longer chain")]
    EmptyChain { draws: usize, thin: usize },

    #[error("hyperparameter optimisation failed on all {restarts} restarts (best log marginal likelihood {best_lml}): {message}")]
    Optimizer {
        restarts: usize,
        best_lml: f64,
        message: String,
    },

    #[error("degenerate importance weights: {0}")]
    DegenerateWeights(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<V, E = Error> = std::result::Result<V, E>;
