use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("binding error: {0}")]
    Binding(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("numerical error: {message}")]
    Numerical {
        message: String,
        /// Offending point, when one exists (e.g. an optimizer iterate).
        point: Option<Vec<f64>>,
    },

    #[error("training error: {0}")]
    Training(String),

    #[error("state error: {0}")]
    State(String),

    #[error("data error at row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("scaler error: feature '{0}' is constant in the training split")]
    Scaler(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn numerical(message: impl Into<String>) -> Self {
        Error::Numerical {
            message: message.into(),
            point: None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
