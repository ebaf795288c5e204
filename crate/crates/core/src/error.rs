use rvos_autodiff::TensorError;
use rvos_data::DataError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },
    #[error("invalid span: start {start} > end {end}")]
    InvalidSpan { start: usize, end: usize },
    #[error("vocabulary error: {0}")]
    Vocab(String),
    #[error("schema error: {0}")]
    Schema(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
