use thiserror::Error;

/// Errors produced by the linear algebra kernels, momentum updates and optimizers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("non-finite value in {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;
