//! Dense networks, reverse-mode gradients and the optimizer stack shared by
//! every learned component.

mod adam;
mod checkpoint;
mod matrix;
mod mlp;
mod normalizer;
mod time_embedding;

pub use adam::{cosine_lr, AdamConfig, AdamState};
pub use checkpoint::{
    checkpoint_exists, load_checkpoint, meta_path, save_checkpoint, weights_path, CheckpointMeta,
};
pub use matrix::Matrix;
pub use mlp::{sigmoid, Activation, Gradients, MlpModel, Tape};
pub use normalizer::Normalizer;
pub use time_embedding::{TimeEmbedding, DEFAULT_TIME_DIM};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("{what}: expected {expected} values, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("backward called without a recorded forward pass")]
    MissingCache,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
