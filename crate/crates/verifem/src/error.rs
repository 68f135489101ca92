//! Common error type. Input errors map to CLI exit code 1, numerical and
//! contract failures to exit code 2.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum VerifemError {
    #[error("input error: {0}")]
    Input(String),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("contract violation: {0}")]
    Contract(String),
}

impl VerifemError {
    /// Process exit code associated with this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            VerifemError::Input(_) | VerifemError::Config { .. } | VerifemError::Io(_) => 1,
            VerifemError::Numerical(_) | VerifemError::Contract(_) => 2,
        }
    }
}
