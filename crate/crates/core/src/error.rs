use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid argument to {op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("labels must be binary, found {value} at index {index}")]
    NonBinaryLabel { index: usize, value: f64 },
    #[error("empty input to {0}")]
    Empty(&'static str),
    #[error("non-finite loss {value} at batch {batch} of epoch {epoch}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },
    #[error(
        "only {found} foreground pixels available for stain fitting, need at least {required}; \
         use a larger or less blank sample"
    )]
    InsufficientPixels { found: usize, required: usize },
    #[error("weight file: {0}")]
    WeightFormat(String),
    #[error("weight file truncated: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("weight file spec mismatch: file has {found}, requested {requested}")]
    SpecMismatch { found: String, requested: String },
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        source: alloc::boxed::Box<Error>,
    },
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: alloc::boxed::Box::new(self),
        }
    }
}
