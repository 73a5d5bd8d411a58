use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("dataset format error: {0}")]
    Format(String),

    #[error("dataset length error: {0}")]
    Length(String),

    #[error(transparent)]
    Tensor(#[from] jfp_autograd::TensorError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
