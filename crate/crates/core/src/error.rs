use thiserror::Error;

#[derive(Debug, Error)]
pub enum BarcodeError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("inadmissible latent state: {0}")]
    Inadmissible(String),

    #[error("sampler aborted at sweep {sweep}: {reason}")]
    Aborted { sweep: usize, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("data error{}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Data { row: Option<usize>, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl BarcodeError {
    pub(crate) fn data(row: Option<usize>, message: impl Into<String>) -> Self {
        BarcodeError::Data {
            row,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        BarcodeError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, BarcodeError>;
