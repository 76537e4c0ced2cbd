//! Hand-built weights: ReLU gadgets, the exact balanced layer and the
//! uniform-attention model.

pub mod basis;
pub mod gadgets;
pub mod theorem1;
pub mod uniform;

pub use basis::{subspace_basis, BasisSet};
pub use gadgets::{
    argmax_mlp, choose_function_mlp, exact_linear_mlp, indexing_mlp, interpolating_mlp, GadgetMlp,
};
pub use theorem1::{balanced_qk_sampler, build_theorem1_model, Construction};
pub use uniform::build_uniform_attention_model;

use crate::error::Result;
use std::path::Path;

impl Construction {
    /// Checkpoint plus sidecar, the sidecar carrying the construction record.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::transformer::save_model(&self.params, path, Some(self.provenance.clone()))
    }
}
