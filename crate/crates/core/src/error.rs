use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands disagree on shape.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    InvalidArgument(String),
    NonFinite(String),
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    /// A trainable tensor has no prior block, or a block references nothing.
    Ungoverned(String),
    SizeGuard {
        what: &'static str,
        size: usize,
        limit: usize,
    },
    Diverged {
        epoch: usize,
        detail: String,
    },
    EmptyInput(&'static str),
    /// Malformed serialized data.
    Format(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shape mismatch between {left:?} and {right:?}")
            }
            Error::InvalidShape { op, shape, reason } => {
                write!(f, "{op}: invalid shape {shape:?}: {reason}")
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::IndexOutOfRange { what, index, len } => {
                write!(f, "{what} index {index} out of range (len {len})")
            }
            Error::Ungoverned(msg) => write!(f, "prior coverage: {msg}"),
            Error::SizeGuard { what, size, limit } => {
                write!(f, "{what}: size {size} exceeds limit {limit}")
            }
            Error::Diverged { epoch, detail } => {
                write!(f, "training diverged at epoch {epoch}: {detail}")
            }
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

impl Error {
    /// Prefix the message with `ctx`, keeping shape errors structured.
    pub fn with_context(self, ctx: &str) -> Error {
        match self {
            Error::InvalidShape { op, shape, reason } => {
                Error::InvalidShape { op, shape, reason: alloc::format!("{ctx}: {reason}") }
            }
            Error::InvalidArgument(msg) => Error::InvalidArgument(alloc::format!("{ctx}: {msg}")),
            other @ Error::ShapeMismatch { .. } => Error::InvalidArgument(alloc::format!("{ctx}: {other}")),
            other => other,
        }
    }
}
