use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which input of a two-face operation a geometry failure belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaceRole {
    Source,
    Reference,
    Reference2,
    Style,
}

impl std::fmt::Display for FaceRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FaceRole::Source => "source",
            FaceRole::Reference => "reference",
            FaceRole::Reference2 => "reference2",
            FaceRole::Style => "style",
        })
    }
}

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("no face found: {0}")]
    NoFace(String),
    #[error("face geometry leaves the image bounds ({width}x{height})")]
    OutOfBounds { width: usize, height: usize },
    #[error("position map is {pos_w}x{pos_h} but layout expects {uv_w}x{uv_h}")]
    LayoutMismatch { pos_w: usize, pos_h: usize, uv_w: usize, uv_h: usize },
    #[error("no precomputed geometry registered for this image")]
    Unregistered,
    #[error("non-finite coordinate at texel ({x}, {y})")]
    NonFinite { x: usize, y: usize },
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes, not a checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("checkpoint holds a `{found}` model, expected `{expected}`")]
    KindMismatch { expected: String, found: String },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checksum mismatch, file is corrupt")]
    Checksum,
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    TensorShape { name: String, expected: Vec<usize>, found: Vec<usize> },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry failure on {role}: {source}")]
    Geometry {
        role: FaceRole,
        #[source]
        source: GeometryError,
    },
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("model not initialized: {0}")]
    Uninitialized(&'static str),
    #[error("model missing for enabled branch: {0}")]
    ModelMissing(&'static str),
    #[error("training diverged at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: u64, detail: String },
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("checkpoint {path:?}: {source}")]
    Checkpoint {
        path: Option<PathBuf>,
        #[source]
        source: CheckpointError,
    },
    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn geometry(role: FaceRole, source: GeometryError) -> Self {
        Error::Geometry { role, source }
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParam(msg.into())
    }

    /// Stable machine-readable category used by the CLI and HTTP layers.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Geometry { .. } | Error::GeometryMismatch(_) => "geometry",
            Error::Shape(_) | Error::InvalidParam(_) => "invalid-input",
            Error::Uninitialized(_) | Error::ModelMissing(_) => "model-missing",
            Error::NonFiniteLoss { .. } => "training-diverged",
            Error::EmptyDataset(_) | Error::Dataset(_) => "dataset",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Image(_) => "image-codec",
            Error::Json(_) => "format",
            Error::Io(_) => "io",
        }
    }
}

impl From<CheckpointError> for Error {
    fn from(source: CheckpointError) -> Self {
        Error::Checkpoint { path: None, source }
    }
}
