use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid value for `{field}`: {constraint}")]
    InvalidField {
        field: &'static str,
        constraint: String,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("{0}")]
    Usage(String),

    #[error("weight file format: {0}")]
    Format(String),

    #[error("image format: {0}")]
    Image(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn field(field: &'static str, constraint: impl Into<String>) -> Self {
        Error::InvalidField {
            field,
            constraint: constraint.into(),
        }
    }
}
