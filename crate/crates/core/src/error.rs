use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate bounding box: {0}")]
    DegenerateBbox(String),
    #[error("invalid cell size {0} (must be positive and finite)")]
    InvalidCellSize(f64),
    #[error("point ({lat}, {lon}) lies outside the grid bounding box")]
    OutsideGrid { lat: f64, lon: f64 },
    #[error("invalid coordinate ({lat}, {lon})")]
    InvalidPoint { lat: f64, lon: f64 },
    #[error("timestamp {ts} precedes the study start {start}")]
    BeforeStudyStart { ts: i64, start: i64 },
    #[error("unsupported resolution {0} hours (expected 1 or 2)")]
    InvalidResolution(u32),
    #[error("behaviour tables were not built for user {0}")]
    MissingTables(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed data in {context}: {message}")]
    Data { context: String, message: String },
    #[error("i/o error on {path}: {source}")]
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
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn data(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Data {
            context: context.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by configuration rather than by input data.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::DegenerateBbox(_)
                | Error::InvalidCellSize(_)
                | Error::InvalidResolution(_)
        )
    }
}
