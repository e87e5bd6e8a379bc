//! Minimal reverse-mode automatic differentiation over dense `f64` tensors,
//! with the convolutional Q-network and critic loss built on top of it.

mod checkpoint;
mod finite_diff;
mod network;
mod tape;
mod tensor;

pub(crate) use checkpoint::{read_f64s, read_u32, read_u64};
pub use checkpoint::{read_params, write_params, CheckpointError, PARAMS_FORMAT_VERSION};
pub use finite_diff::{finite_diff_flat, finite_diff_grad, max_relative_error, DEFAULT_STEP};
pub use network::{
    critic_loss, forward_on, init_params, q_forward, q_values, ConvLayerSpec, ParamSet,
    QNetworkSpec, FLATTEN_ORDER_VERSION,
};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TapeError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("parameter registration: {0}")]
    Param(String),
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("non-finite value")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, TapeError>;
