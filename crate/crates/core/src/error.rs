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

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("labeling error: {0}")]
    Labeling(String),

    #[error("pooling error: {} utt_ids present in both views: {}", .0.len(), preview(.0))]
    Pooling(Vec<String>),

    #[error("fitting error: {0}")]
    Fit(String),

    #[error("normalization error: {0}")]
    Normalize(String),

    #[error("scoring error: {0}")]
    Score(String),

    #[error("training error: {0}")]
    Train(String),

    #[error("non-finite update at EM iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("evaluation error: {0}")]
    Eval(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl std::fmt::Display, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_string(),
            line,
            msg: msg.into(),
        }
    }
}

/// First few ids of a possibly long list, for error messages.
fn preview(ids: &[String]) -> String {
    const SHOWN: usize = 10;
    let head = ids[..ids.len().min(SHOWN)].join(", ");
    if ids.len() > SHOWN {
        format!("{head}, ...")
    } else {
        head
    }
}
