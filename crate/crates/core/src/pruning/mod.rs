//! Nonstructural pruning of random networks and the inequality checks that
//! back it.

pub mod bounds;
pub mod certify;
pub mod diagonal;
pub mod linear;
pub mod mask;
pub mod subset_sum;

pub use bounds::{verify_bounds, BoundCheck, BoundsReport};
pub use certify::{certify_epsilon, ApproxCertificate, ApproxNorm};
pub use diagonal::{prune_diagonal_submatrix, DiagonalSelection};
pub use linear::{prune_to_linear, prune_to_mlp, FourLayer, HiddenActivation, LinearPruning, MlpPruning, PruneConfig};
pub use mask::PruneMask;
pub use subset_sum::subset_sum_select;
