use thiserror::Error;

/// Errors shared by every operator and the model assembly.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor extent does not satisfy an operator's shape contract.
    /// `axis` names the offending axis.
    #[error("dimension error on axis `{axis}`: {msg}")]
    Dim { axis: &'static str, msg: String },

    #[error("rank error: expected rank {expected}, got {got}")]
    Rank { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {msg}")]
    Param { name: &'static str, msg: String },

    /// A documented precondition was violated at run time.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed weight file; `offset` is the byte position of the failure.
    #[error("weight format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    /// Unknown value id on an autodiff tape.
    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn dim(axis: &'static str, msg: impl Into<String>) -> Self {
        Error::Dim {
            axis,
            msg: msg.into(),
        }
    }

    pub fn param(name: &'static str, msg: impl Into<String>) -> Self {
        Error::Param {
            name,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
