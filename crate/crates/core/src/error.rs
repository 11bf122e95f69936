use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("unknown token id {id} (vocabulary size {vocab_size})")]
    Vocabulary { id: usize, vocab_size: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },

    #[error("unsupported method: {0}")]
    Unsupported(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("importance measure failed on observation {id}: {source}")]
    Observation {
        id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("retraining failed at masking level {level}: {source}")]
    Level {
        level: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("template error: missing slot `{0}`")]
    Template(&'static str),

    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
