use alloc::string::String;

/// Errors raised anywhere in the core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid layer `{name}`: {reason}")]
    InvalidLayer { name: String, reason: &'static str },
    #[error("duplicate layer name `{0}`")]
    DuplicateLayer(String),
    #[error("non-finite value in layer `{layer}` at index {index}")]
    NonFinite { layer: String, index: usize },
    #[error("parameter layout mismatch: {0}")]
    LayoutMismatch(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("nizk: {0}")]
    Nizk(&'static str),
    #[error("MAC verification failed")]
    MacMismatch,
    #[error("invalid padding after MAC verification (key mismatch)")]
    PaddingError,
    #[error("decode error: {0}")]
    Decode(&'static str),
    #[error("client {client}: {reason}")]
    Client { client: usize, reason: String },
    #[error("infeasible mask: {0}")]
    InfeasibleMask(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(&'static str),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
