use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid component {name}: {value} (must be finite and > 0)")]
    InvalidComponent { name: &'static str, value: f64 },

    #[error("unknown filter approximation `{0}`")]
    UnknownApproximation(String),

    #[error("invalid transfer function: {0}")]
    InvalidTransferFunction(String),

    #[error("bilinear mapping is degenerate: a pole maps onto z = -1")]
    DegenerateMapping,

    #[error("repeated pole near {0:.6e} (partial fractions require simple poles)")]
    RepeatedPole(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix too large to materialize: {rows}x{cols} exceeds {limit} entries")]
    TooLarge { rows: usize, cols: usize, limit: usize },

    #[error("least-squares operator is rank deficient (condition estimate {0:.3e})")]
    RankDeficient(f64),

    #[error("probe budget exceeded: {needed} probes requested, budget {budget}")]
    ProbeBudget { needed: usize, budget: usize },

    #[error("root finding failed: {0}")]
    RootFinding(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
