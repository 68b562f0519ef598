use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: rating {rating} outside [1, {r_max}]")]
    RatingRange { line: usize, rating: i64, r_max: u8 },

    #[error("empty rating histogram")]
    EmptyHistogram,

    #[error("catalog too small: need {requested} negatives but only {available} eligible items")]
    CatalogTooSmall { requested: usize, available: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: checkpoint has {checkpoint}, dataset has {dataset}")]
    ShapeMismatch { checkpoint: String, dataset: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
