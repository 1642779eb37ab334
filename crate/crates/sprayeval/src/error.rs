use std::io;
use std::path::PathBuf;

use sprayeval_core::EngineError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad magic, version or header layout.
    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },

    /// Well-formed header whose payload does not match it.
    #[error("corrupt file {path}: {msg}")]
    Corrupt { path: String, msg: String },

    /// Dataset contents violate the documented layout or class set.
    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("engine error on image {image}: {source}")]
    Engine {
        image: String,
        #[source]
        source: EngineError,
    },

    #[error("engine error: {0}")]
    EngineSetup(EngineError),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Core(#[from] sprayeval_core::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the command line.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Format { .. } | Error::Corrupt { .. } | Error::Data(_) | Error::Csv(_) | Error::Image(_) => 3,
            Error::Engine { .. } | Error::EngineSetup(_) => 4,
            Error::Core(sprayeval_core::Error::Engine(_)) => 4,
            Error::Core(sprayeval_core::Error::Argument(_)) => 2,
            Error::Core(_) => 3,
            Error::Io { .. } | Error::Json(_) => 1,
        }
    }
}
