use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("face {face} is degenerate (area {area:e} m^2)")]
    DegenerateTriangle { face: usize, area: f64 },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),

    #[error("scale factor must be positive, got {0}")]
    NonPositiveScale(f64),

    #[error("{path}:{line}: {msg}")]
    Obj { path: PathBuf, line: usize, msg: String },

    #[error("ply format error: {0}")]
    Ply(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("covariance matrix is singular")]
    SingularCovariance,

    #[error("image too small for an {window}x{window} window: {width}x{height}")]
    ImageTooSmall { width: usize, height: usize, window: usize },

    #[error("non-finite gradient at parameter {0}")]
    NanGradient(usize),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("root face {root} has not been optimized at level {level}")]
    NotOptimized { root: usize, level: u32 },

    #[error("invalid level: {0}")]
    InvalidLevel(String),

    #[error("mesh has no texture")]
    MissingTexture,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateTriangle { .. } => "degenerate_triangle",
            Error::InvalidMesh(_) => "invalid_mesh",
            Error::TopologyMismatch(_) => "topology_mismatch",
            Error::NonPositiveScale(_) => "non_positive_scale",
            Error::Obj { .. } => "obj_format",
            Error::Ply(_) => "ply_format",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::SingularCovariance => "singular_covariance",
            Error::ImageTooSmall { .. } => "image_too_small",
            Error::NanGradient(_) => "nan_gradient",
            Error::EmptyDataset => "empty_dataset",
            Error::NotOptimized { .. } => "not_optimized",
            Error::InvalidLevel(_) => "invalid_level",
            Error::MissingTexture => "missing_texture",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Image(_) => "image",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
