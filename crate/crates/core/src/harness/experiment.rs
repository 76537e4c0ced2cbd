use super::config::{parse_brackets, ExperimentConfig};
use super::pool::{parallel_map, worker_count};
use super::variation::{random_baseline, variation_table, RandomBaseline, VariationTable};
use crate::balance::beta;
use crate::dyck::{closing_eval_set, close_token, DyckPrefix, EvalItem, GrammarParams};
use crate::error::{input, Result};
use crate::numerics::ops::softmax;
use crate::numerics::{Matrix, Rng};
use crate::transformer::{attention_patterns, evaluate_accuracy, final_outputs, train, MetricsRow, ModelParams};
use serde::Serialize;

/// RNG stream tasks, keyed by the config's `eval_seed`.
const STREAM_VAL: u64 = 11;
const STREAM_LONG: u64 = 12;
const STREAM_BASELINE: u64 = 21;

/// Evaluation sets shared by every seed of one config.
#[derive(Clone, Debug)]
pub struct EvalSets {
    pub in_dist: Vec<EvalItem>,
    /// Empty when `long_items` is 0.
    pub long: Vec<EvalItem>,
}

impl EvalSets {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let g = cfg.grammar_params();
        let in_dist = closing_eval_set(&g, cfg.eval.items, 2..=g.n, &mut Rng::stream(cfg.eval.eval_seed, STREAM_VAL))?;
        let [lo, hi] = cfg.eval.long_lengths;
        let long = closing_eval_set(&g, cfg.eval.long_items, lo..=hi, &mut Rng::stream(cfg.eval.eval_seed, STREAM_LONG))?;
        Ok(EvalSets { in_dist, long })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub steps_run: usize,
    pub accuracy: f64,
    pub long_accuracy: Option<f64>,
    /// Minimal-first-layer models only.
    pub beta: Option<f64>,
    pub passed_gate: bool,
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub summary: SeedSummary,
    pub params: ModelParams,
    pub log: Vec<MetricsRow>,
}

pub fn train_seed(cfg: &ExperimentConfig, sets: &EvalSets, seed: u64) -> Result<SeedRun> {
    let out = train(&cfg.model, &cfg.grammar_params(), &cfg.train, &sets.in_dist, seed)?;
    let accuracy = evaluate_accuracy(&out.params, &sets.in_dist)?;
    let long_accuracy = if sets.long.is_empty() { None } else { Some(evaluate_accuracy(&out.params, &sets.long)?) };
    let beta = if out.params.config.is_minimal() { beta(&out.params).ok() } else { None };
    let summary = SeedSummary { seed, steps_run: out.steps_run, accuracy, long_accuracy, beta, passed_gate: accuracy >= cfg.eval.accuracy_gate };
    Ok(SeedRun { summary, params: out.params, log: out.log })
}

/// One run per seed of `cfg.seeds`, in seed-list order.
pub fn train_seeds(cfg: &ExperimentConfig, sets: &EvalSets) -> Vec<Result<SeedRun>> {
    parallel_map(&cfg.seeds, worker_count(), |&s| train_seed(cfg, sets, s))
}

/// Last-bracket accuracy on closing prefixes with lengths uniform in `lengths`.
pub fn length_generalization_eval(params: &ModelParams, grammar: &GrammarParams, lengths: [usize; 2], count: usize, rng: &mut Rng) -> Result<f64> {
    let items = closing_eval_set(grammar, count, lengths[0]..=lengths[1], rng)?;
    evaluate_accuracy(params, &items)
}

/// Accuracy of an arbitrary last-bracket predictor.
pub fn predictor_accuracy(items: &[EvalItem], predict: impl Fn(&DyckPrefix) -> usize) -> Result<f64> {
    if items.is_empty() {
        return input("empty evaluation set");
    }
    Ok(items.iter().filter(|it| predict(&it.input) == it.label).count() as f64 / items.len() as f64)
}

/// The stack-reading predictor: close the innermost unmatched bracket.
pub fn oracle_predictor(prefix: &DyckPrefix) -> usize {
    prefix.stack().top().map_or(1, close_token)
}

/// Pattern of the last layer (the second layer of a standard model, the
/// trainable layer of a minimal one) on `probe`.
pub fn probe_pattern(params: &ModelParams, probe: &DyckPrefix) -> Result<Matrix> {
    Ok(attention_patterns(params, probe.tokens())?.pop().expect("at least one layer"))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExcludedSeed {
    pub seed: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariationStudy {
    pub probe: String,
    pub seeds: Vec<u64>,
    pub excluded: Vec<ExcludedSeed>,
    #[serde(skip)]
    pub patterns: Vec<Matrix>,
    pub variation: VariationTable,
    pub baseline: RandomBaseline,
}

/// Variation across the given per-seed patterns plus the random baseline
/// for their shape.
pub fn variation_from_patterns(cfg: &ExperimentConfig, seeds: Vec<u64>, patterns: Vec<Matrix>, excluded: Vec<ExcludedSeed>) -> Result<VariationStudy> {
    let variation = variation_table(&patterns)?;
    let size = patterns[0].rows();
    let baseline = random_baseline(size, cfg.variation.baseline_pairs, &mut Rng::stream(cfg.eval.eval_seed, STREAM_BASELINE));
    Ok(VariationStudy { probe: cfg.variation.probe.clone(), seeds, excluded, patterns, variation, baseline })
}

/// Collects probe patterns from finished runs; runs below the gate or that
/// failed are excluded and listed.
pub fn variation_from_runs(cfg: &ExperimentConfig, runs: &[Result<SeedRun>]) -> Result<VariationStudy> {
    let probe = parse_brackets(&cfg.variation.probe, &cfg.grammar_params())?;
    let (mut seeds, mut patterns, mut excluded) = (vec![], vec![], vec![]);
    for (seed, run) in cfg.seeds.iter().zip(runs) {
        match run {
            Ok(r) if r.summary.passed_gate => {
                seeds.push(*seed);
                patterns.push(probe_pattern(&r.params, &probe)?);
            }
            Ok(r) => excluded.push(ExcludedSeed { seed: *seed, reason: format!("accuracy {} below gate {}", r.summary.accuracy, cfg.eval.accuracy_gate) }),
            Err(e) => excluded.push(ExcludedSeed { seed: *seed, reason: e.to_string() }),
        }
    }
    variation_from_patterns(cfg, seeds, patterns, excluded)
}

/// Trains every seed and measures the variation of their probe patterns.
pub fn variation_study(cfg: &ExperimentConfig) -> Result<VariationStudy> {
    let sets = EvalSets::build(cfg)?;
    variation_from_runs(cfg, &train_seeds(cfg, &sets))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContrastivePair {
    pub seed: u64,
    pub standard: SeedSummary,
    pub contrastive: SeedSummary,
}

impl ContrastivePair {
    pub fn beta_lowered(&self) -> bool {
        matches!((self.standard.beta, self.contrastive.beta), (Some(s), Some(c)) if c < s)
    }

    pub fn long_accuracy_raised(&self) -> bool {
        matches!((self.standard.long_accuracy, self.contrastive.long_accuracy), (Some(s), Some(c)) if c > s)
    }
}

/// Same seeds, same data, with and without the contrastive term
/// (`weight` replaces the config's contrastive weight).
pub fn contrastive_comparison(cfg: &ExperimentConfig, weight: f64) -> Result<Vec<ContrastivePair>> {
    if !cfg.model.is_minimal() {
        return input("the balance comparison needs a minimal-first-layer model");
    }
    let sets = EvalSets::build(cfg)?;
    let mut plain = cfg.clone();
    plain.train.contrastive_weight = 0.0;
    let mut reg = cfg.clone();
    reg.train.contrastive_weight = weight;
    let jobs: Vec<(u64, bool)> = cfg.seeds.iter().flat_map(|&s| [(s, false), (s, true)]).collect();
    let runs = parallel_map(&jobs, worker_count(), |&(s, c)| train_seed(if c { &reg } else { &plain }, &sets, s).map(|r| r.summary));
    let mut it = runs.into_iter();
    cfg.seeds
        .iter()
        .map(|&seed| Ok(ContrastivePair { seed, standard: it.next().expect("paired")?, contrastive: it.next().expect("paired")? }))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MisleadingDemo {
    pub seed: u64,
    pub trained_accuracy: f64,
    /// Mean probability of the correct label after zeroing the head.
    pub zeroed_accuracy: f64,
    pub chance: f64,
    pub max_abs_logit: f64,
    /// Largest deviation of any attention entry from the uniform causal pattern.
    pub attention_nonuniformity: f64,
    #[serde(skip)]
    pub patterns: Vec<Matrix>,
}

/// Trains one seed, then sets `W_Head = 0` and `b_Head = 0`: every output
/// becomes uniform while the attention patterns are untouched.
pub fn misleading_demo(cfg: &ExperimentConfig, seed: u64) -> Result<MisleadingDemo> {
    let sets = EvalSets::build(cfg)?;
    let run = train_seed(cfg, &sets, seed)?;
    let mut p = run.params;
    p.head_w.fill(0.0);
    if let Some(b) = p.head_b.as_mut() {
        b.fill(0.0);
    }
    let refs: Vec<&[usize]> = sets.in_dist.iter().map(|it| it.input.tokens()).collect();
    let outs = final_outputs(&p, &refs)?;
    let max_abs_logit = outs.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let zeroed_accuracy = outs.iter().zip(&sets.in_dist).map(|(o, it)| softmax(o)[it.label - 1]).sum::<f64>() / outs.len() as f64;
    let probe = parse_brackets(&cfg.variation.probe, &cfg.grammar_params())?;
    let patterns = attention_patterns(&p, probe.tokens())?;
    let attention_nonuniformity = patterns
        .iter()
        .flat_map(|a| (0..a.cols()).flat_map(move |j| (0..=j).map(move |i| (a[(i, j)] - 1.0 / (j + 1) as f64).abs())))
        .fold(0.0, f64::max);
    Ok(MisleadingDemo {
        seed,
        trained_accuracy: run.summary.accuracy,
        zeroed_accuracy,
        chance: 1.0 / (2 * cfg.model.k) as f64,
        max_abs_logit,
        attention_nonuniformity,
        patterns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::ModelConfig;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.grammar.length = 12;
        c.model = ModelConfig { dim: 12, attn_dim: 12, ffn_width: 12, ..ModelConfig::default() };
        c.train.steps = 30;
        c.train.eval_every = 0;
        c.eval.items = 50;
        c.eval.long_items = 10;
        c.eval.long_lengths = [40, 50];
        c.variation.baseline_pairs = 50;
        c
    }

    #[test]
    fn oracle_is_perfect_on_long_prefixes() {
        let g = GrammarParams::new(2, 4, 27, 0.5).unwrap();
        let items = closing_eval_set(&g, 200, 400..=500, &mut Rng::seed(1)).unwrap();
        assert_eq!(predictor_accuracy(&items, oracle_predictor).unwrap(), 1.0);
    }

    #[test]
    fn identical_models_have_zero_variation() {
        let mut c = tiny();
        c.eval.accuracy_gate = 0.0;
        c.seeds = vec![3];
        let sets = EvalSets::build(&c).unwrap();
        let run = train_seed(&c, &sets, 3).unwrap();
        let probe = parse_brackets(&c.variation.probe, &c.grammar_params()).unwrap();
        let p = probe_pattern(&run.params, &probe).unwrap();
        let s = variation_from_patterns(&c, vec![3, 3, 3], vec![p.clone(), p.clone(), p], vec![]).unwrap();
        assert_eq!(s.variation.mean, 0.0);
        assert_eq!(s.baseline.size, 17);
    }

    #[test]
    fn gate_excludes_seeds() {
        let mut c = tiny();
        c.seeds = vec![1, 2, 3];
        c.eval.accuracy_gate = 0.9;
        let sets = EvalSets::build(&c).unwrap();
        let runs = train_seeds(&c, &sets);
        let passed = runs.iter().filter(|r| r.as_ref().unwrap().summary.passed_gate).count();
        match variation_from_runs(&c, &runs) {
            Ok(s) => assert_eq!(s.seeds.len(), passed),
            Err(_) => assert!(passed < 2),
        }
    }

    #[test]
    fn zeroed_head_is_at_chance() {
        let d = misleading_demo(&tiny(), 5).unwrap();
        assert_eq!(d.max_abs_logit, 0.0);
        assert!((d.zeroed_accuracy - d.chance).abs() < 1e-12);
        assert!(d.attention_nonuniformity > 1e-3);
    }
}
