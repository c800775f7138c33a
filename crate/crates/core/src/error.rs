use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mass vector: {0}")]
    InvalidMass(String),

    #[error("invalid cost matrix: {0}")]
    InvalidCost(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("marginal masses differ: rows sum to {row}, columns sum to {col}")]
    MassMismatch { row: f64, col: f64 },

    #[error("generalized KL undefined: reference entry {index} is zero while w[{index}] = {value}")]
    KlUndefined { index: usize, value: f64 },

    #[error("invalid solver config: {0}")]
    SolverConfig(String),

    #[error("plain Sinkhorn scaling overflowed; enable the stabilized solver")]
    Overflow,

    #[error("expert `{expert}` produced a non-finite {what}")]
    NonFinite { expert: String, what: &'static str },

    #[error("blend needs at least one expert")]
    EmptyBlend,

    #[error("world sampling failed: {0}")]
    Sampling(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("episode {seed} failed: {source}")]
    Episode {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
