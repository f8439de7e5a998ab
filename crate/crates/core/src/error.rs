use std::path::PathBuf;

/// Errors produced anywhere in the simulation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration or experiment description violates an invariant.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Non-finite or otherwise out-of-domain input.
    #[error("domain error: {0}")]
    Domain(String),

    /// A factorization or iteration failed even after regularization.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    /// A failure while simulating one frame, tagged with the frame seed so it
    /// can be replayed.
    #[error("frame {frame} (seed {seed:#018x}): {source}")]
    Frame {
        frame: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Dimension(_) | Error::Domain(_) | Error::Numerical(_) | Error::InsufficientData(_) => 3,
            Error::Frame { source, .. } => source.exit_code(),
            Error::Io { .. } | Error::Format { .. } => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
