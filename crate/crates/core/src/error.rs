use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("tracking failed: {0}")]
    Tracking(String),

    #[error("no feasible plan: {0}")]
    InfeasiblePlan(String),

    #[error("cannot blend lateral offset {offset:.3} m back to the path: {reason}")]
    BlendInfeasible { offset: f64, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("policy has not been trained")]
    Untrained,

    #[error("policy failed: {0}")]
    Policy(String),

    #[error("discriminator needs both classes, got {expert} expert and {policy} policy samples")]
    SingleClass { expert: usize, policy: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
