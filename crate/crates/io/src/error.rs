use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    /// Malformed input; `context` names the file and record.
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("unsupported format version {found:?} (expected {expected:?})")]
    VersionMismatch { found: String, expected: String },

    #[error("images {first} and {second} both map to pose {pose_id}, camera {camera_id}")]
    InconsistentRig { first: u64, second: u64, pose_id: usize, camera_id: usize },

    #[error(transparent)]
    Core(#[from] mcpa_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl IoError {
    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Parse { context: context.into(), message: message.into() }
    }
}

pub type IoResult<T> = std::result::Result<T, IoError>;
