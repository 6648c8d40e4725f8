use thiserror::Error;

#[derive(Debug, Error)]
pub enum MvgtError {
    #[error("configuration: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("numeric failure: {0}")]
    NonFinite(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Num(#[from] numkit::NumError),

    #[error(transparent)]
    Spatial(#[from] spatial::SpatialError),

    #[error(transparent)]
    Signal(#[from] eegsig::EegError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl MvgtError {
    /// True for failures caused by NaN or infinite values.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            MvgtError::NonFinite(_) | MvgtError::Num(numkit::NumError::NonFinite { .. })
        )
    }
}

pub type Result<T> = std::result::Result<T, MvgtError>;
