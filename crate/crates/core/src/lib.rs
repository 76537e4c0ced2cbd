//! Bounded-depth Dyck languages and the minimal Transformers that recognize
//! them: exact grammar oracles, a trainable two-layer model with hand-written
//! gradients, weight constructions that solve the task exactly, balance
//! diagnostics, and a lottery-ticket pruning toolkit.

pub mod balance;
pub mod constructions;
pub mod dyck;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod pruning;
pub mod transformer;

pub use dyck::{DyckPrefix, GrammarParams};
pub use error::{Error, Result};
pub use numerics::{Matrix, Rng};
pub use transformer::{ModelConfig, ModelParams};
