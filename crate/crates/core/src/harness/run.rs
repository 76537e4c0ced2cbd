use super::config::{parse_brackets, ExperimentConfig};
use super::experiment::{probe_pattern, train_seeds, variation_from_runs, EvalSets, ExcludedSeed, SeedSummary, VariationStudy};
use super::export::{pattern_csv, pattern_svg, write_json, write_text};
use crate::balance::{balance_report, BalanceModel};
use crate::error::Result;
use crate::transformer::{attention_patterns, save_model, MetricsRow};
use serde::Serialize;
use serde_json::json;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const GIT_DESCRIBE: &str = env!("DYCKFORMER_GIT_DESCRIBE");

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Manifest {
    pub name: String,
    pub config_hash: String,
    pub git_describe: String,
    pub version: String,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Metrics {
    pub seeds: Vec<SeedSummary>,
    pub failed: Vec<ExcludedSeed>,
    /// Training logs keyed by seed.
    pub logs: BTreeMap<String, Vec<MetricsRow>>,
    /// Present when at least two seeds pass the accuracy gate.
    pub variation: Option<VariationStudy>,
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub metrics: Metrics,
}

pub fn manifest(cfg: &ExperimentConfig) -> Manifest {
    Manifest {
        name: cfg.name.clone(),
        config_hash: cfg.hash(),
        git_describe: GIT_DESCRIBE.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seeds: cfg.seeds.clone(),
    }
}

/// Trains every seed and writes, under `dir` (default `cfg.output_dir`):
///
/// ```text
/// manifest.json  config.toml  metrics.json
/// checkpoints/seed_<s>.dyck          (export.checkpoints)
/// attention/layer<l>_<s>.csv         probe patterns
/// balance/<s>.json                   minimal-first-layer models
/// figures/layer<l>_<s>.svg           (export.svg)
/// ```
///
/// Training runs on the worker pool; every file is written afterwards, in
/// seed-list order.
pub fn run(cfg: &ExperimentConfig, dir: Option<&Path>) -> Result<RunArtifacts> {
    cfg.validate()?;
    let dir = dir.map_or_else(|| cfg.output_dir.clone(), Path::to_path_buf);
    std::fs::create_dir_all(&dir)?;
    let manifest = manifest(cfg);
    write_json(&dir.join("manifest.json"), &manifest)?;
    write_text(&dir.join("config.toml"), &cfg.to_toml())?;

    let sets = EvalSets::build(cfg)?;
    let runs = train_seeds(cfg, &sets);
    let probe = parse_brackets(&cfg.variation.probe, &cfg.grammar_params())?;
    let mut seeds = Vec::new();
    let mut failed = Vec::new();
    let mut logs = BTreeMap::new();
    for (&seed, run) in cfg.seeds.iter().zip(&runs) {
        let r = match run {
            Ok(r) => r,
            Err(e) => {
                failed.push(ExcludedSeed { seed, reason: e.to_string() });
                continue;
            }
        };
        seeds.push(r.summary.clone());
        logs.insert(seed.to_string(), r.log.clone());
        if cfg.export.checkpoints {
            let path = dir.join("checkpoints").join(format!("seed_{seed}.dyck"));
            std::fs::create_dir_all(path.parent().expect("has parent"))?;
            save_model(&r.params, &path, Some(json!({ "seed": seed, "config_hash": manifest.config_hash })))?;
        }
        for (l, a) in attention_patterns(&r.params, probe.tokens())?.iter().enumerate() {
            write_text(&dir.join("attention").join(format!("layer{l}_{seed}.csv")), &pattern_csv(a))?;
            if cfg.export.svg {
                let title = format!("layer {l}, seed {seed}, probe {}", cfg.variation.probe);
                write_text(&dir.join("figures").join(format!("layer{l}_{seed}.svg")), &pattern_svg(a, &title))?;
            }
        }
        if r.params.config.is_minimal() {
            let report = balance_report(&BalanceModel::from_minimal(&r.params)?)?;
            write_json(&dir.join("balance").join(format!("{seed}.json")), &report)?;
        }
        debug_assert!(probe_pattern(&r.params, &probe).is_ok());
    }
    let passing = seeds.iter().filter(|s| s.passed_gate).count();
    let variation = if passing >= 2 { Some(variation_from_runs(cfg, &runs)?) } else { None };
    let metrics = Metrics { seeds, failed, logs, variation };
    write_json(&dir.join("metrics.json"), &metrics)?;
    Ok(RunArtifacts { dir, manifest, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::export::parse_pattern_csv;
    use crate::transformer::{load_model, EmbeddingKind, ModelConfig};

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.grammar.length = 10;
        c.model = ModelConfig { dim: 10, attn_dim: 10, ffn_width: 10, ..ModelConfig::default() };
        c.train.steps = 20;
        c.train.eval_every = 10;
        c.eval.items = 40;
        c.eval.long_items = 5;
        c.eval.long_lengths = [30, 40];
        c.eval.accuracy_gate = 0.0;
        c.variation.baseline_pairs = 20;
        c.seeds = vec![4, 2];
        c
    }

    #[test]
    fn layout_and_determinism() {
        let c = tiny();
        let t = tempfile::tempdir().unwrap();
        let (a, b) = (t.path().join("a"), t.path().join("b"));
        let art = run(&c, Some(&a)).unwrap();
        run(&c, Some(&b)).unwrap();
        for f in ["manifest.json", "metrics.json", "attention/layer1_4.csv", "figures/layer0_2.svg", "config.toml"] {
            assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
        }
        assert_eq!(art.metrics.seeds.iter().map(|s| s.seed).collect::<Vec<_>>(), vec![4, 2]);
        assert!(art.metrics.variation.is_some());
        let pat = parse_pattern_csv(&std::fs::read_to_string(a.join("attention/layer1_2.csv")).unwrap()).unwrap();
        assert_eq!(pat.shape(), (17, 17));
        let model = load_model(&a.join("checkpoints/seed_4.dyck")).unwrap();
        assert_eq!(model.config, c.model);
    }

    #[test]
    fn minimal_models_get_balance_reports() {
        let mut c = tiny();
        c.model = ModelConfig::minimal(2, 4, EmbeddingKind::OnehotJoint);
        c.seeds = vec![1];
        c.export.svg = false;
        let t = tempfile::tempdir().unwrap();
        run(&c, Some(t.path())).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(t.path().join("balance/1.json")).unwrap()).unwrap();
        assert!(v["beta"].as_f64().unwrap() >= 0.0);
        assert!(!t.path().join("figures").exists());
    }
}
