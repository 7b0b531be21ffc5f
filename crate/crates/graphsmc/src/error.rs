//! Error type shared across the crate.
//!
//! Every error carries a kind that maps onto the process exit codes used by
//! the command-line tool: input/configuration problems exit with 2, numerical
//! failures (non-finite losses or gradients, singular matrices) with 3, and
//! internal invariant violations with 4.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad input data or configuration: malformed CSV, out-of-range
    /// hyperparameters, missing files.
    #[error("{0}")]
    Input(String),

    /// Numerical failure: singular matrices, non-finite gradients,
    /// vanished likelihoods.
    #[error("{0}")]
    Numerical(String),

    /// An internal invariant was violated; indicates a bug rather than
    /// bad input.
    #[error("{0}")]
    Invariant(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }

    /// Process exit code for the CLI: 2 input, 3 numerical, 4 invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Io(_) => 2,
            Error::Numerical(_) => 3,
            Error::Invariant(_) => 4,
        }
    }

    /// Short machine-readable tag printed to stderr alongside the message.
    pub fn code_tag(&self) -> &'static str {
        match self {
            Error::Input(_) | Error::Io(_) => "input",
            Error::Numerical(_) => "numerical",
            Error::Invariant(_) => "invariant",
        }
    }
}
