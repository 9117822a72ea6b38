use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("validation error: {0}")]
    Validation(String),

    /// A configuration field violates its invariant.
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("cluster {cluster} has a degenerate (zero) mean embedding")]
    DegenerateMean { cluster: usize },

    #[error("clustering collapsed: {0}")]
    ClusteringCollapse(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("infeasible synthetic spec: {0}")]
    SpecInfeasible(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
