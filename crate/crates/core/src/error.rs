use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("node `{node}`: {source}")]
    Node { node: String, source: Box<Error> },

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("value `{0}` is not resident and cannot be reconstructed")]
    MissingActivation(String),

    #[error("inverse reconstruction of `{value}` diverged from its checksum (relative error {rel:e})")]
    InverseDiverged { value: String, rel: f64 },

    #[error("operation `{0}` has no registered inverse")]
    NotInvertible(&'static str),

    #[error("mixing matrix `{name}` is singular or ill-conditioned (condition estimate {cond:e})")]
    IllConditioned { name: String, cond: f64 },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
}

impl Error {
    pub(crate) fn arg(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument { op, reason: reason.into() }
    }

    pub(crate) fn at_node(self, node: &str) -> Self {
        match self {
            e @ Error::Node { .. } => e,
            e => Error::Node { node: node.into(), source: Box::new(e) },
        }
    }
}
