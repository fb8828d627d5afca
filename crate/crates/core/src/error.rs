use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("motion contains non-finite values")]
    NonFinite,
    #[error("motion has {0} frames, at least 2 are required")]
    TooShort(usize),
    #[error("feature width {got} does not match skeleton (expected {expected})")]
    BadWidth { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid anchor positions: {0}")]
    InvalidAnchorPositions(String),
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
    #[error("infeasible anchor constraint: n={n}, f_n={f_n}, f_s={f_s}")]
    Infeasible { n: usize, f_n: usize, f_s: usize },
    #[error("invalid stage {stage} (expected 1..={stages})")]
    InvalidStage { stage: usize, stages: usize },
    #[error("invalid epoch {epoch} (expected 1..={total})")]
    InvalidEpoch { epoch: usize, total: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no gradient recorded for parameter `{0}`")]
    MissingGradient(String),
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("unsupported version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("checksum mismatch in {0}")]
    Checksum(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
