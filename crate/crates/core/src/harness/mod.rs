//! Config-driven experiments: seeded training sweeps, attention-variation
//! and balance studies, and their on-disk artifacts.

pub mod config;
pub mod experiment;
pub mod export;
pub mod oracle;
pub mod pool;
pub mod run;
pub mod variation;

pub use config::{format_brackets, parse_brackets, ExperimentConfig, DEFAULT_PROBE};
pub use experiment::{
    contrastive_comparison, length_generalization_eval, misleading_demo, oracle_predictor, predictor_accuracy, probe_pattern,
    train_seed, train_seeds, variation_from_runs, variation_study, ContrastivePair, EvalSets, MisleadingDemo, SeedRun,
    SeedSummary, VariationStudy,
};
pub use oracle::{all_prefixes_up_to, compare_with_oracle, sampled_prefixes, OracleComparison, OutputKind};
pub use export::{parse_pattern_csv, pattern_csv, pattern_svg, to_json, write_json};
pub use run::{run, Manifest, RunArtifacts};
pub use variation::{attention_variation, random_baseline, RandomBaseline};
