use crate::dyck::{close_token, open_token, DyckPrefix, GrammarParams};
use crate::error::{Error, Result};
use crate::transformer::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Bracket characters by type, `[]` first.
pub const BRACKET_PAIRS: [(char, char); 4] = [('[', ']'), ('(', ')'), ('{', '}'), ('<', '>')];

pub const DEFAULT_PROBE: &str = "[[[[]]]](((())))";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrammarSection {
    pub k: usize,
    pub depth: usize,
    /// Training prefix length.
    pub length: usize,
    pub q: f64,
}

impl Default for GrammarSection {
    fn default() -> Self {
        GrammarSection { k: 2, depth: 4, length: 27, q: 0.5 }
    }
}

impl GrammarSection {
    pub fn params(&self) -> Result<GrammarParams> {
        GrammarParams::new(self.k, self.depth, self.length, self.q)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// In-distribution validation items (closing prefixes of length `2..=length`).
    pub items: usize,
    /// Length-generalization prefix lengths, inclusive.
    pub long_lengths: [usize; 2],
    pub long_items: usize,
    /// Seeds below this in-distribution accuracy are excluded from studies.
    pub accuracy_gate: f64,
    /// Seed of the fixed evaluation sets (shared by every training seed).
    pub eval_seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { items: 1000, long_lengths: [400, 500], long_items: 500, accuracy_gate: 0.95, eval_seed: 99 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariationSection {
    pub probe: String,
    /// Random pattern pairs for the baseline estimate.
    pub baseline_pairs: usize,
}

impl Default for VariationSection {
    fn default() -> Self {
        VariationSection { probe: DEFAULT_PROBE.into(), baseline_pairs: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportSection {
    pub svg: bool,
    pub checkpoints: bool,
}

impl Default for ExportSection {
    fn default() -> Self {
        ExportSection { svg: true, checkpoints: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub grammar: GrammarSection,
    pub model: ModelConfig,
    /// Optimizer, loss and regularizer weights.
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub eval: EvalSection,
    pub variation: VariationSection,
    pub export: ExportSection,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            grammar: GrammarSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig { batch_size: 32, ..TrainConfig::default() },
            seeds: vec![0],
            eval: EvalSection::default(),
            variation: VariationSection::default(),
            export: ExportSection::default(),
            output_dir: PathBuf::from("runs/experiment"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every constraint that can be checked without running anything.
    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        let g = self.grammar.params().map_err(cfg)?;
        self.model.validate().map_err(cfg)?;
        if self.model.k != g.k || self.model.depth < g.d {
            return Err(Error::Config(format!("model (k={}, depth={}) cannot read grammar (k={}, depth={})", self.model.k, self.model.depth, g.k, g.d)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        let [lo, hi] = self.eval.long_lengths;
        if lo < 2 || lo > hi {
            return Err(Error::Config(format!("long_lengths [{lo}, {hi}] is not a range of lengths ≥ 2")));
        }
        if self.train.batch_size == 0 || self.eval.items == 0 {
            return Err(Error::Config("batch_size and eval.items must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eval.accuracy_gate) {
            return Err(Error::Config("accuracy_gate must lie in [0, 1]".into()));
        }
        parse_brackets(&self.variation.probe, &g).map_err(cfg)?;
        Ok(())
    }

    pub fn grammar_params(&self) -> GrammarParams {
        self.grammar.params().expect("validated")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses a bracket string such as `"[()]"` with `[]` as type 1, `()` as
/// type 2, then `{}` and `<>`.
pub fn parse_brackets(s: &str, params: &GrammarParams) -> Result<DyckPrefix> {
    let tokens = s
        .chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| {
            BRACKET_PAIRS
                .iter()
                .position(|&(o, cl)| c == o || c == cl)
                .map(|t| if c == BRACKET_PAIRS[t].0 { open_token(t + 1) } else { close_token(t + 1) })
                .ok_or_else(|| Error::Input(format!("{c:?} is not a bracket")))
        })
        .collect::<Result<Vec<_>>>()?;
    DyckPrefix::new(tokens, params)
}

/// Inverse of [`parse_brackets`].
pub fn format_brackets(tokens: &[usize]) -> String {
    tokens
        .iter()
        .map(|&id| {
            let (o, c) = BRACKET_PAIRS[(id - 1) / 2];
            if id % 2 == 1 {
                o
            } else {
                c
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(c.hash(), ExperimentConfig::from_toml(&c.to_toml()).unwrap().hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(ExperimentConfig::from_toml("nmae = \"x\""), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml("[model]\ndimm = 3"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml("seeds = []"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml("[grammar]\nk = 3"), Err(Error::Config(_))));
        let ok = ExperimentConfig::from_toml("seeds = [1, 2]\n[train]\nsteps = 10\n[train.adam]\nlr = 0.01").unwrap();
        assert_eq!(ok.seeds, vec![1, 2]);
        assert_eq!(ok.train.adam.lr, 0.01);
    }

    #[test]
    fn probe_parses() {
        let g = GrammarParams::new(2, 4, 16, 0.5).unwrap();
        let p = parse_brackets(DEFAULT_PROBE, &g).unwrap();
        assert_eq!(p.tokens(), &[1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 4]);
        assert_eq!(format_brackets(p.tokens()), DEFAULT_PROBE);
        assert!(parse_brackets("[)", &g).is_err());
        assert!(parse_brackets("[x", &g).is_err());
    }
}
