use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("point lies behind the camera (camera-space z = {0})")]
    BehindCamera(f64),
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("checkpoint error at byte offset {offset}: {msg}")]
    Checkpoint { offset: usize, msg: String },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("oracle failure: {0}")]
    Oracle(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Short stable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::BehindCamera(_) => "behind_camera",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Checkpoint { .. } => "checkpoint",
            Error::NonFinite(_) => "non_finite",
            Error::Oracle(_) => "oracle",
            Error::Config(_) => "config",
            Error::Image(_) => "image",
            Error::Json(_) => "json",
            Error::Io(_) => "io",
        }
    }
}
