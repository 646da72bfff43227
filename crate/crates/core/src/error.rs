use std::fmt;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes or settings that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// A loss, activation or gradient went NaN/inf.
    #[error("non-finite value in {what}{}", LayerSuffix(*.layer))]
    NonFinite { what: String, layer: Option<usize> },

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A training stage aborted; carries the stage name and iteration.
    #[error("{stage} failed at iteration {iteration}: {source}")]
    Stage {
        stage: &'static str,
        iteration: u64,
        #[source]
        source: Box<Error>,
    },
}

struct LayerSuffix(Option<usize>);

impl fmt::Display for LayerSuffix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(l) => write!(f, " (layer {l})"),
            None => Ok(()),
        }
    }
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn non_finite(what: impl Into<String>, layer: Option<usize>) -> Self {
        Error::NonFinite {
            what: what.into(),
            layer,
        }
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    pub fn at_stage(self, stage: &'static str, iteration: u64) -> Self {
        Error::Stage {
            stage,
            iteration,
            source: Box::new(self),
        }
    }

    /// Process exit code: 1 validation, 2 numeric failure, 3 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Argument(_) | Error::Contract(_) => 1,
            Error::NonFinite { .. } => 2,
            Error::Io(_) | Error::Format { .. } => 3,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
