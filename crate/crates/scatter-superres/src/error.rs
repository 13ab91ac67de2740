use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coincident points: the free-space Green's function is singular at zero distance")]
    CoincidentPoints,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("Foldy-Lax system is numerically degenerate at k = {k} (reciprocal condition {rcond:.3e})")]
    Degenerate { k: f64, rcond: f64 },

    #[error("code Gram matrix is rank deficient; rows never selected: {dead:?}")]
    RankDeficient { dead: Vec<usize> },

    #[error("sparse coding failed for {failed} of {total} measurements")]
    CodingFailed { failed: usize, total: usize },

    #[error("dictionary refinement diverged at outer iteration {iteration} (trace {trace:?})")]
    Diverged { iteration: usize, trace: Vec<f64> },

    #[error("under-recovery: found {found} candidate columns, {target} requested")]
    UnderRecovery { found: usize, target: usize },

    #[error("neighbor graph is disconnected ({} components)", components.len())]
    Disconnected { components: Vec<Vec<usize>> },

    #[error("MDS needs {dims} positive eigenvalues, found {found}")]
    MdsDegenerate { dims: usize, found: usize },

    #[error("anchor positions are collinear")]
    CollinearAnchors,

    #[error("vector norm {0} is not unit")]
    NotUnit(f64),

    #[error("profile never drops below level {0} inside the offset window")]
    OutOfWindow(f64),

    #[error("cmx: bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("cmx: header announces {expected} bytes, file has {actual}")]
    SizeMismatch { expected: u64, actual: u64 },

    #[error("cmx: non-finite entry at ({row}, {col})")]
    NonFiniteEntry { row: usize, col: usize },

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Linalg(#[from] ndarray_linalg::error::LinalgError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
