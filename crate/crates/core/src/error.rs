use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("base network is not frozen")]
    BaseNotFrozen,

    #[error("base network is frozen")]
    BaseFrozen,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("empty split")]
    EmptySplit,

    #[error("no exit-{exit} row for domain {domain}")]
    MissingBaseline { domain: String, exit: usize },

    #[error("fixture parse error at line {line}: {detail}")]
    Fixture { line: usize, detail: String },

    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }
}
