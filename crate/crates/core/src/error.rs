use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid observation: {0}")]
    InvalidObservation(String),

    /// The density model assigned no extra probability to a state after
    /// being trained on it, so a pseudo-count is undefined.
    #[error("density model is not learning-positive (rho = {rho}, rho' = {rho_prime})")]
    NonLearningModel { rho: f64, rho_prime: f64 },

    #[error("episode already finished; call reset first")]
    EpisodeFinished,

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    /// Replay buffer holds fewer transitions than one batch.
    #[error("replay buffer not ready: {have} of {need} transitions")]
    NotReady { have: usize, need: usize },

    #[error("config error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
