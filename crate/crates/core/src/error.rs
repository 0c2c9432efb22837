use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid support event at t={time}: {reason}")]
    InvalidEvent { time: usize, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("constraint set is empty: smallest reachable residual {min_residual_sq:.6e} exceeds budget {eps:.6e}")]
    Infeasible { min_residual_sq: f64, eps: f64 },

    #[error("basis is not orthonormal (max deviation {0:.3e})")]
    NotOrthonormal(f64),

    #[error("a rank {rank} basis has no orthogonal complement in dimension {dim}")]
    NoComplement { rank: usize, dim: usize },

    #[error("training needs at least two frames, got {0}")]
    TooFewFrames(usize),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
