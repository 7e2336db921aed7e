use std::path::PathBuf;

use crate::spkrep::Scheme;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("empty corpus")]
    EmptyCorpus,
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("utterance {id}: durations sum to {durations} but the mel has {frames} frames")]
    DurationMismatch {
        id: String,
        durations: usize,
        frames: usize,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("speaker {speaker} has {have} utterances, needs at least {need}")]
    InsufficientUtterances { speaker: String, have: usize, need: usize },
    #[error("unknown speaker {0:?}")]
    UnknownSpeaker(String),
    #[error("phoneme id {id} is outside the vocabulary of size {vocab}")]
    OutOfVocabulary { id: u32, vocab: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("{0} is not pretrained")]
    NotPretrained(Scheme),
    #[error("no encoder supplied for active scheme {0}")]
    MissingEncoder(Scheme),
    #[error("no representation supplied for active scheme {0}")]
    MissingRepresentation(Scheme),
    #[error("model has no projection for scheme {0}")]
    NoProjection(Scheme),
    #[error("encoder is frozen")]
    Frozen,
    #[error("encoder is not frozen")]
    NotFrozen,
    #[error("zero vector")]
    ZeroVector,
    #[error("zero variance")]
    ZeroVariance,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn wav(path: impl Into<PathBuf>, source: hound::Error) -> Self {
        Error::Wav {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failing run.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. } | Error::Wav { .. } | Error::Tensor(_) | Error::Checkpoint(_)
        )
    }
}
