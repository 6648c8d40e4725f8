use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpatialError {
    #[error("layout: {0}")]
    Layout(String),

    #[error("channel {channel:?} is not tagged by region scheme {scheme:?}")]
    UntaggedChannel { channel: String, scheme: String },

    #[error("region scheme {scheme:?}: {msg}")]
    Scheme { scheme: String, msg: String },

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Numeric(#[from] numkit::NumError),
}

pub type Result<T> = std::result::Result<T, SpatialError>;
