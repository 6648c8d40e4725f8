use thiserror::Error;

#[derive(Debug, Error)]
pub enum EegError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("recording of {seconds:.3} s is shorter than one {window:.3} s window")]
    EmptyFeatures { seconds: f64, window: f64 },

    #[error("need at least {needed} feature windows for a segment, have {have}")]
    InsufficientData { needed: usize, have: usize },

    #[error("recording has no class label")]
    Unlabelled,

    #[error("malformed {format} data: {msg}")]
    Format { format: &'static str, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Spatial(#[from] spatial::SpatialError),
}

pub type Result<T> = std::result::Result<T, EegError>;
