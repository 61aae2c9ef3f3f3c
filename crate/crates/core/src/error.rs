use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sketch")]
    EmptySketch,

    #[error("unsupported path command '{command}' in path element {index}")]
    UnsupportedPathCommand { index: usize, command: String },

    #[error("malformed path element {index}: {message}")]
    MalformedPath { index: usize, message: String },

    #[error("malformed SVG document: {0}")]
    MalformedSvg(String),

    #[error("style override index {index} out of range for a sketch of {len} strokes")]
    StyleIndex { index: usize, len: usize },

    #[error("invalid {what}: {message}")]
    InvalidValue { what: &'static str, message: String },

    #[error("no face found")]
    NoFaceFound,

    #[error("empty contour")]
    EmptyContour,

    #[error("pool exhausted: requested {requested} points from a pool of {available}")]
    PoolExhausted { requested: usize, available: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid crop block count k={k} for resolution {resolution}; nearest valid values: {suggestions:?}")]
    InvalidCropGrid { k: usize, resolution: usize, suggestions: Vec<usize> },

    #[error("weights not found: {}", .0.display())]
    WeightsNotFound(PathBuf),

    #[error("bad weights file {}: {message}", path.display())]
    BadWeights { path: PathBuf, message: String },

    #[error("unknown rasterizer backend '{0}' (available: reference)")]
    UnknownBackend(String),

    #[error("non-finite {quantity} in {stage} at iteration {iteration}")]
    NumericFailure { stage: &'static str, quantity: &'static str, iteration: usize },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidValue { what, message: message.into() }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, source: Box::new(e) },
        }
    }

    /// The innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}
