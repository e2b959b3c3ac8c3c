use thiserror::Error;

/// Errors raised by the numeric core, the model, data generation and the
/// federated orchestrator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("empty sequence passed to {0}")]
    EmptySequence(&'static str),

    #[error("range error: {0}")]
    Range(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("sample {sample}: target of length {target_len} needs at least {required} frames, got {frames}")]
    Infeasible {
        sample: usize,
        target_len: usize,
        required: usize,
        frames: usize,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("round {round}, {context}: {source}")]
    Round {
        round: usize,
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// Wraps `self` with the round and client (or server) that produced it.
    pub fn in_round(self, round: usize, context: impl Into<String>) -> Self {
        Error::Round {
            round,
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
