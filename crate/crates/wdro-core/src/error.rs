use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layer {layer}: expected input of dimension {expected}, got {got}")]
    DimensionMismatch {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite activation at sample {sample}")]
    NonFiniteActivation { sample: usize },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("Hessian bound undefined for ReLU order")]
    HessianReluOrder,
    #[error("candidate grid is empty")]
    EmptyGrid,
    #[error("instance too large for brute force (atoms {atoms}, grid {grid})")]
    BruteForceGuard { atoms: usize, grid: usize },
    #[error("dual objective is not unimodal in gamma (drop {drop:e} after bracketing)")]
    DualInconsistency { drop: f64 },
    #[error("{context}: parse error at byte {offset}: {message}")]
    IdxParse {
        context: String,
        offset: u64,
        message: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
