use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A line of an annotation stream could not be decoded.
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },

    /// A decoded value violates a domain invariant.
    #[error("record {record}: {message}")]
    Invalid { record: String, message: String },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },

    #[error("declared size inconsistent with payload: {0}")]
    SizeMismatch(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("no supervised positions")]
    NoSupervisedPositions,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{0}")]
    Overflow(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A broken internal guarantee (e.g. a cycle in a constructed graph).
    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(record: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            record: record.into(),
            message: message.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// True for failures of internal guarantees rather than bad input.
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::Invariant(_))
    }
}
