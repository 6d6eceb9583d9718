//! The counting network: a dilated temporal convolution encoder, a
//! multi-head temporal self-similarity matrix and a transformer decoder
//! that turns the matrix into a per-frame density map.

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use config::{KernelKind, ModelConfig, Positional, RowPool};
pub use forward::{
    decode, decode_on, encode, encode_on, forward, forward_full, forward_on, positions_on,
    sequence_to_density_on, similarity_matrix, similarity_on, similarity_to_sequence_on,
    ForwardVars, FrameMask, Prediction,
};
pub use params::{param_group, BoundParams, ModelParams};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parameter error: {0}")]
    Params(String),
    #[error("checkpoint error at byte {offset}: {msg}")]
    Checkpoint { offset: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl ModelError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
