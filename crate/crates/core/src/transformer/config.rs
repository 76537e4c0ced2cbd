use crate::error::{input, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchVariant {
    /// `g(LN(attn) + X)`.
    Paper,
    /// `g(LN(attn + X))`.
    Gpt2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PositionalEncoding {
    None,
    /// Adds `i / t_max` to the last embedding coordinate at position `i`.
    Linear { t_max: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    /// One coordinate per (token, depth) pair plus one for the start token.
    OnehotJoint,
    /// Token one-hot (start included) concatenated with a depth one-hot over 0..=D.
    OnehotConcat,
    /// Token one-hot concatenated with `[cos θ_d, sin θ_d]`, `θ_d = atan(d / (D + 2 − d))`.
    TrigConcat,
}

impl EmbeddingKind {
    pub fn dim(self, k: usize, d: usize) -> usize {
        match self {
            EmbeddingKind::OnehotJoint => 2 * k * d + 1,
            EmbeddingKind::OnehotConcat => (2 * k + 1) + (d + 1),
            EmbeddingKind::TrigConcat => (2 * k + 1) + 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FirstLayer {
    Standard,
    /// Deterministic (type, depth) embeddings replace the first layer; one
    /// trainable layer follows.
    Minimal { embedding: EmbeddingKind },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Bracket types.
    pub k: usize,
    /// Maximum grammar depth (used by minimal embeddings).
    pub depth: usize,
    pub layers: usize,
    /// Residual-stream width `m`.
    pub dim: usize,
    /// Query/key width `m_a`.
    pub attn_dim: usize,
    pub ffn_width: usize,
    /// Number of dense layers in each `g`, ReLU between consecutive ones.
    pub ffn_depth: usize,
    /// `g(h) = h + MLP(h)` when set.
    pub ffn_residual: bool,
    pub arch: ArchVariant,
    pub ln_c: f64,
    pub positional: PositionalEncoding,
    pub first_layer: FirstLayer,
    pub head_bias: bool,
    /// Keeps `W_K = W_Q = 0` (uniform causal attention) during training.
    pub frozen_uniform_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k: 2,
            depth: 4,
            layers: 2,
            dim: 50,
            attn_dim: 50,
            ffn_width: 50,
            ffn_depth: 2,
            ffn_residual: true,
            arch: ArchVariant::Paper,
            ln_c: 1e-6,
            positional: PositionalEncoding::None,
            first_layer: FirstLayer::Standard,
            head_bias: true,
            frozen_uniform_attention: false,
        }
    }
}

impl ModelConfig {
    /// The minimal-first-layer preset: one trainable layer on fixed embeddings.
    pub fn minimal(k: usize, depth: usize, embedding: EmbeddingKind) -> Self {
        let m = embedding.dim(k, depth);
        ModelConfig {
            k,
            depth,
            layers: 1,
            dim: m,
            attn_dim: m,
            first_layer: FirstLayer::Minimal { embedding },
            ..Default::default()
        }
    }

    pub fn vocab(&self) -> usize {
        2 * self.k
    }

    pub fn is_minimal(&self) -> bool {
        matches!(self.first_layer, FirstLayer::Minimal { .. })
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.depth == 0 {
            return input("k and depth must be positive");
        }
        if self.layers == 0 || self.dim == 0 || self.attn_dim == 0 || self.ffn_depth == 0 {
            return input("layer count and widths must be positive");
        }
        if self.ffn_depth > 1 && self.ffn_width == 0 {
            return input("ffn_width must be positive");
        }
        if !(self.ln_c >= 0.0) {
            return input("ln_c must be nonnegative");
        }
        if let PositionalEncoding::Linear { t_max } = self.positional {
            if !(t_max > 0.0) {
                return input("t_max must be positive");
            }
        }
        if let FirstLayer::Minimal { embedding } = self.first_layer {
            if self.layers != 1 {
                return input("minimal mode has exactly one trainable layer");
            }
            if self.dim < embedding.dim(self.k, self.depth) {
                return input(format!(
                    "dim {} is below the {:?} embedding size {}",
                    self.dim,
                    embedding,
                    embedding.dim(self.k, self.depth)
                ));
            }
        }
        Ok(())
    }
}
