use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("rank parameter {k} out of range (allowed {min}..={max})")]
    RankOutOfRange { k: usize, min: usize, max: usize },

    #[error("index {index} out of range for size {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("requested block of {requested} columns exceeds block size {limit}")]
    BlockTooLarge { requested: usize, limit: usize },

    #[error("refusing to materialize a {n}x{n} kernel matrix (cap {cap})")]
    MemoryGuard { n: usize, cap: usize },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("residual exhausted: the current columns already reproduce the matrix")]
    ResidualExhausted,

    #[error("gamma calibration failed: {0}")]
    CalibrationFailed(String),

    #[error("sketched system stayed rank deficient after {attempts} draws")]
    RankDeficientSketch { attempts: usize },

    #[error("shifted sketch has full rank {rank}; the shift term is undefined")]
    FullRankSketch { rank: usize },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("columns are not orthonormal (deviation {0:e})")]
    NotOrthonormal(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
