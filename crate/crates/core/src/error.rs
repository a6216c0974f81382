use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid calibration: {0}")]
    Validation(String),
    #[error("singular ground homography (|det| = {det:e})")]
    SingularHomography { det: f64 },
    #[error("index ({row}, {col}) outside a {rows}x{cols} grid")]
    OutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("bad tensor file: {0}")]
    Format(String),
    #[error("could not place {wanted} persons in frame {frame} after {attempts} attempts")]
    Placement {
        frame: usize,
        wanted: usize,
        attempts: usize,
    },
    #[error("no frames to evaluate")]
    EmptyInput,
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
