//! Layers of the form `g(LN(attn) + X)`, the minimal-first-layer mode, losses,
//! regularizers and the training loop.

pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod params;
pub mod train;

pub use checkpoint::{load_model, save_model, Checkpoint};
pub use config::{ArchVariant, EmbeddingKind, FirstLayer, ModelConfig, PositionalEncoding};
pub use forward::{attention_patterns, final_outputs, forward, ForwardOutput};
pub use params::{embedding_slot, embedding_table, slot_inputs, Dense, LayerParams, ModelParams};
pub use train::{
    argmax, contrastive_regularizer, contrastive_samples, contrastive_term, evaluate_accuracy, loss, nested_block,
    gradient_check, train, Corpus, GradientCheck, LossKind, MetricsRow, TrainConfig, TrainOutcome,
};
