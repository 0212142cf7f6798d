use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown format `{0}` (expected one of fp8-e4m3, fp8-e5m2, binary16, bfloat16, tf19, binary32)")]
    UnknownFormat(String),

    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no preset for {key}; valid combinations:\n{valid}")]
    Lookup { key: String, valid: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(offset: usize, msg: impl fmt::Display) -> Self {
        Error::Parse {
            offset,
            msg: msg.to_string(),
        }
    }

    pub(crate) fn line(line: usize, msg: impl fmt::Display) -> Self {
        Error::Line {
            line,
            msg: msg.to_string(),
        }
    }
}
