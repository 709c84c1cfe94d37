use std::path::PathBuf;

/// Errors raised by the toolkit.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("sample `{id}` references missing file {path}")]
    MissingFile { id: String, path: PathBuf },

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("sample `{id}`: {what} is {found_w}x{found_h}, expected {expected_w}x{expected_h}")]
    DimensionMismatch {
        id: String,
        what: &'static str,
        expected_w: u32,
        expected_h: u32,
        found_w: u32,
        found_h: u32,
    },

    #[error("invalid record `{id}`: {reason}")]
    InvalidRecord { id: String, reason: String },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no prediction for sample `{0}`")]
    MissingPrediction(String),

    #[error("split `{0}` is empty")]
    EmptySplit(&'static str),

    #[error("non-finite loss at iteration {iteration}: {value}")]
    NonFinite { iteration: usize, value: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("image `{path}`: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
