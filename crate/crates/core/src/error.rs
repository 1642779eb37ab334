use alloc::string::String;
use core::fmt;

use crate::engine::EngineError;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Shape or payload inconsistent with the tensor invariants.
    Shape(String),
    /// A value outside its documented domain (empty input, bad percentile...).
    Argument(String),
    /// Two inputs that must agree do not (channel counts, mask dimensions).
    Contract(String),
    /// The requested class is not predicted on the unperturbed image.
    ClassAbsent { class_id: usize },
    /// No classes were available to average.
    NoClasses,
    Engine(EngineError),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Argument(msg) => write!(f, "argument error: {msg}"),
            Error::Contract(msg) => write!(f, "contract error: {msg}"),
            Error::ClassAbsent { class_id } => {
                write!(f, "class {class_id} is not predicted on the unperturbed image")
            }
            Error::NoClasses => f.write_str("no classes to average"),
            Error::Engine(e) => write!(f, "engine error: {e}"),
        }
    }
}

impl core::error::Error for Error {}

impl From<EngineError> for Error {
    fn from(e: EngineError) -> Self {
        Error::Engine(e)
    }
}
