use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the registration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point has non-positive depth (z = {0})")]
    NonPositiveDepth(f64),

    #[error("rotation angle is pi; the logarithm is not unique")]
    AmbiguousLog,

    #[error("depth map has no valid pixels")]
    EmptyDepth,

    #[error("failed to parse {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("mesh has no triangles after cleaning")]
    EmptyMesh,

    #[error("mesh is not watertight; inside/outside is undefined")]
    NotWatertight,

    #[error("image too small for MS-SSIM: {0}")]
    TooSmall(String),

    #[error("degenerate depth map: {0}")]
    DegenerateMap(String),

    #[error("observed depth map has too few valid pixels ({0})")]
    EmptyObservation(usize),

    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss {
        iteration: usize,
        /// Poses and losses visited before the failure.
        trace: Vec<crate::refine::TraceEntry>,
    },

    #[error("no benchmark pair survived the filters")]
    NoValidPairs,

    #[error("dataset does not match its manifest: {0}")]
    ManifestMismatch(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("malformed csv: {0}")]
    MalformedCsv(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
