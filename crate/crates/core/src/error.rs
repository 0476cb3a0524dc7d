//! Crate-wide error type.
//!
//! Shape mismatches inside graph primitives are programming errors and panic
//! with a message naming the op; everything that can fail on user-supplied
//! data (files, configs, contract-checked public entry points) returns
//! [`Error`] instead.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A documented precondition of a public API was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A numeric operation produced a non-finite value.
    #[error("numeric error in {op}: {msg}")]
    Numeric { op: &'static str, msg: String },

    /// A structured text file failed to parse. Lines are 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A versioned container had the wrong format tag or version.
    #[error("format mismatch: expected {expected}, found {found}")]
    Format { expected: String, found: String },

    /// An evaluation or sampling run needs a checkpoint that was not supplied.
    #[error("missing checkpoint for variant `{0}`")]
    MissingCheckpoint(String),

    /// A config override or file referenced an unknown key.
    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    /// Training diverged (non-finite loss or gradient).
    #[error("training diverged at epoch {epoch}: {msg}")]
    Diverged { epoch: usize, msg: String },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
