use thiserror::Error;

/// Errors raised across the search, surrogate and ensemble pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("space has {size} architectures, above the enumeration cap of {cap}")]
    EnumerationCap { size: u128, cap: u128 },

    #[error("no mutation possible: {0}")]
    NoMutation(String),

    #[error("no record for architecture {0}")]
    MissingRecord(String),

    #[error("benchmark format error: {0}")]
    Format(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("kernel kind mismatch: {0}")]
    KernelKind(String),

    #[error("conditioning error: {0}")]
    Conditioning(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("degenerate measure: {0}")]
    DegenerateMeasure(String),

    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),

    #[error("recombination failed: {0}")]
    Recombination(String),

    #[error("search space exhausted: {0}")]
    Exhausted(String),

    #[error("degenerate ensemble weights: {0}")]
    DegenerateWeights(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("incompatible results: {0}")]
    Incompatible(String),

    #[error("at iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
