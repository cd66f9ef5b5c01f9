use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("invalid url `{url}`: {reason}")]
    InvalidUrl { url: String, reason: &'static str },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate sample: {0}")]
    Degenerate(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn insufficient(msg: impl Into<String>) -> Self {
        Error::InsufficientData(msg.into())
    }
}

/// A Click Log v1 line that could not be decoded.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParseErrorKind {
    FieldCount(usize),
    Timestamp(String),
    EmptyUser,
    Url(String),
    BrowserFlag(String),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::FieldCount(n) => write!(f, "expected 5 tab-separated fields, found {n}"),
            ParseErrorKind::Timestamp(s) => write!(f, "bad timestamp `{s}`"),
            ParseErrorKind::EmptyUser => f.write_str("empty user id"),
            ParseErrorKind::Url(msg) => write!(f, "bad url: {msg}"),
            ParseErrorKind::BrowserFlag(s) => write!(f, "browser flag must be 0 or 1, found `{s}`"),
        }
    }
}
