//! `dyckformer`: sample grammars, train and evaluate models, build exact
//! constructions, and run the balance, variation and pruning studies.
//!
//! Exit status: 0 on success, 2 on a configuration or usage error, 3 when a
//! requested gate (accuracy, TV, certificate, bound check) fails, 1 otherwise.

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dyckformer::balance::{balance_report, n_sweep, BalanceModel};
use dyckformer::constructions::{balanced_qk_sampler, build_theorem1_model, build_uniform_attention_model, Construction};
use dyckformer::dyck::{closing_eval_set, sample_prefix, GrammarParams};
use dyckformer::harness::{
    self, all_prefixes_up_to, compare_with_oracle, contrastive_comparison, format_brackets, misleading_demo, parse_brackets, pattern_csv,
    pattern_svg, sampled_prefixes, to_json, ExperimentConfig, OutputKind,
};
use dyckformer::numerics::Matrix;
use dyckformer::pruning::{
    linear::random_uniform, prune_diagonal_submatrix, prune_to_linear, prune_to_mlp, verify_bounds, FourLayer, HiddenActivation, PruneConfig,
};
use dyckformer::transformer::{attention_patterns, checkpoint::sidecar_path, embedding_table, evaluate_accuracy, load_model, EmbeddingKind};
use dyckformer::{Error, Rng};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dyckformer", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Svg,
}

#[derive(Subcommand)]
enum Command {
    /// Draw prefixes from the grammar.
    Sample {
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Prefix length (defaults to the config's).
        #[arg(long)]
        length: Option<usize>,
    },
    /// Train every configured seed and write the run directory.
    Train,
    /// Compare a checkpoint with the grammar oracle.
    Eval(EvalArgs),
    /// Attention patterns of a checkpoint on a probe.
    AttnExport {
        #[arg(long)]
        model: PathBuf,
        /// Bracket string; defaults to the config's probe.
        #[arg(long)]
        probe: Option<String>,
    },
    /// Balance residual, S/P tables and β of a minimal-first-layer model,
    /// or a contrastive-vs-standard comparison over the configured seeds.
    Balance {
        #[arg(long, required_unless_present = "compare_contrastive")]
        model: Option<PathBuf>,
        /// Also run the length sweep of max ‖S‖/P.
        #[arg(long)]
        sweep: bool,
        /// Contrastive weight for a paired comparison (trains 2 × seeds models).
        #[arg(long)]
        compare_contrastive: Option<f64>,
        /// Gate: fail when β exceeds this.
        #[arg(long)]
        max_beta: Option<f64>,
    },
    /// Train every seed and measure the pairwise attention variation.
    Variation,
    /// Build an exact model.
    Construct {
        #[arg(long, value_enum)]
        kind: ConstructKind,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value_t = 0.5)]
        q: f64,
    },
    /// Prune random networks onto a random target.
    Prune {
        #[arg(long, value_enum)]
        kind: PruneKind,
        /// Input width of the target (linear, mlp) or matrix size (diagonal).
        #[arg(long, default_value_t = 2)]
        m: usize,
        /// Hidden width of the random network.
        #[arg(long, default_value_t = 400)]
        width: usize,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        /// Diagonal block count.
        #[arg(long, default_value_t = 4)]
        d: usize,
    },
    /// Randomized checks of the approximation inequalities.
    Bounds {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
    },
    /// Zero the head of a trained model: chance accuracy, unchanged attention.
    DemoMisleading,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Enumerate every prefix up to this length.
    #[arg(long, default_value_t = 10)]
    max_length: usize,
    /// Sampled prefixes with lengths in `--lengths`.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, num_args = 2, default_values_t = [200, 300])]
    lengths: Vec<usize>,
    #[arg(long, value_enum, default_value_t = Outputs::Auto)]
    outputs: Outputs,
    /// Gate: fail when the largest TV distance exceeds this.
    #[arg(long)]
    max_tv: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Outputs {
    /// Probabilities for constructed checkpoints, logits otherwise.
    Auto,
    Probabilities,
    Logits,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ConstructKind {
    /// Balanced second layer on one-hot embeddings, zero W_K and W_Q.
    Theorem1,
    /// Same, with sampled balanced W_K and W_Q.
    Theorem1Balanced,
    /// Two layers, both with uniform attention.
    Uniform,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PruneKind {
    Linear,
    Mlp,
    Diagonal,
}

/// A gate failure; maps to exit status 3.
#[derive(Debug)]
struct GateFailure(String);

impl std::fmt::Display for GateFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "gate failed: {}", self.0)
    }
}

impl std::error::Error for GateFailure {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<GateFailure>().is_some() {
                ExitCode::from(3)
            } else if matches!(e.downcast_ref::<Error>(), Some(Error::Config(_) | Error::Usage(_))) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::Usage(msg.into()).into()
}

fn only_json(c: &Common, cmd: &str) -> Result<()> {
    if c.format != Format::Json {
        return Err(usage(format!("{cmd} only writes json")));
    }
    Ok(())
}

/// Prints `value` and, with `--out`, also writes it to `<out>/<name>`.
fn emit(c: &Common, name: &str, value: &impl serde::Serialize) -> Result<()> {
    let text = to_json(value)?;
    if let Some(dir) = &c.out {
        harness::export::write_text(&dir.join(name), &text)?;
    }
    print!("{text}");
    Ok(())
}

fn gate(ok: bool, msg: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(GateFailure(msg.into()).into())
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    match &cli.command {
        Command::Sample { count, length } => sample(c, *count, *length),
        Command::Train => train(c),
        Command::Eval(a) => eval(c, a),
        Command::AttnExport { model, probe } => attn_export(c, model, probe.as_deref()),
        Command::Balance { model, sweep, compare_contrastive, max_beta } => balance(c, model.as_deref(), *sweep, *compare_contrastive, *max_beta),
        Command::Variation => {
            only_json(c, "variation")?;
            let study = harness::variation_study(&load_config(c)?)?;
            emit(c, "variation.json", &study)?;
            gate(study.excluded.is_empty(), format!("{} seeds below the accuracy gate", study.excluded.len()))
        }
        Command::Construct { kind, k, depth, q } => construct(c, *kind, *k, *depth, *q),
        Command::Prune { kind, m, width, epsilon, d } => prune(c, *kind, *m, *width, *epsilon, *d),
        Command::Bounds { trials } => {
            only_json(c, "bounds")?;
            let report = verify_bounds(*trials, &mut Rng::seed(c.seed.unwrap_or(0)));
            emit(c, "bounds.json", &report)?;
            gate(report.passed(), "bound violations found")
        }
        Command::DemoMisleading => {
            only_json(c, "demo-misleading")?;
            let cfg = load_config(c)?;
            let demo = misleading_demo(&cfg, cfg.seeds[0])?;
            if let Some(dir) = &c.out {
                for (l, a) in demo.patterns.iter().enumerate() {
                    harness::export::write_text(&dir.join(format!("attention/layer{l}_{}.csv", demo.seed)), &pattern_csv(a))?;
                }
            }
            emit(c, "misleading.json", &demo)
        }
    }
}

fn sample(c: &Common, count: usize, length: Option<usize>) -> Result<()> {
    let cfg = load_config(c)?;
    let mut g = cfg.grammar_params();
    if let Some(n) = length {
        g = GrammarParams::new(g.k, g.d, n, g.q).map_err(|e| usage(e.to_string()))?;
    }
    let mut rng = Rng::stream(c.seed.unwrap_or(cfg.seeds[0]), 2);
    let prefixes: Vec<Vec<usize>> = (0..count).map(|_| sample_prefix(&g, &mut rng).tokens().to_vec()).collect();
    match c.format {
        Format::Json => {
            let brackets: Vec<String> = prefixes.iter().map(|p| format_brackets(p)).collect();
            emit(c, "samples.json", &json!({ "k": g.k, "depth": g.d, "length": g.n, "q": g.q, "prefixes": prefixes, "brackets": brackets }))
        }
        Format::Csv => {
            let text: String = prefixes.iter().map(|p| p.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",") + "\r\n").collect();
            if let Some(dir) = &c.out {
                harness::export::write_text(&dir.join("samples.csv"), &text)?;
            }
            print!("{text}");
            Ok(())
        }
        Format::Svg => Err(usage("sample writes json or csv")),
    }
}

fn train(c: &Common) -> Result<()> {
    only_json(c, "train")?;
    let cfg = load_config(c)?;
    let art = harness::run(&cfg, None)?;
    emit(c, "summary.json", &json!({ "dir": art.dir, "seeds": art.metrics.seeds, "failed": art.metrics.failed }))?;
    let below: Vec<u64> = art.metrics.seeds.iter().filter(|s| !s.passed_gate).map(|s| s.seed).collect();
    gate(below.is_empty() && art.metrics.failed.is_empty(), format!("seeds below the accuracy gate: {below:?}"))
}

fn sidecar(model: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(sidecar_path(model)).with_context(|| format!("reading the sidecar of {}", model.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn eval(c: &Common, a: &EvalArgs) -> Result<()> {
    only_json(c, "eval")?;
    let cfg = load_config(c)?;
    let params = load_model(&a.model)?;
    let constructed = sidecar(&a.model)?["provenance"].get("construction").is_some();
    let kind = match a.outputs {
        Outputs::Probabilities => OutputKind::Probabilities,
        Outputs::Logits => OutputKind::Logits,
        Outputs::Auto if constructed => OutputKind::Probabilities,
        Outputs::Auto => OutputKind::Logits,
    };
    let g = GrammarParams::new(params.config.k, params.config.depth, a.max_length.max(1), cfg.grammar.q)?;
    let mut rng = Rng::stream(c.seed.unwrap_or(cfg.eval.eval_seed), 31);
    let enumerated = if a.max_length > 0 { Some(compare_with_oracle(&params, &g, &all_prefixes_up_to(&g, a.max_length)?, kind)?) } else { None };
    let sampled = if a.samples > 0 {
        let (lo, hi) = (a.lengths[0], a.lengths[1]);
        if lo == 0 || lo > hi {
            return Err(usage("--lengths needs 1 ≤ lo ≤ hi"));
        }
        Some(compare_with_oracle(&params, &g, &sampled_prefixes(&g, a.samples, [lo, hi], &mut rng), kind)?)
    } else {
        None
    };
    let items = closing_eval_set(&g.with_length(cfg.grammar.length), cfg.eval.items, 2..=cfg.grammar.length, &mut rng)?;
    let accuracy = evaluate_accuracy(&params, &items)?;
    let max_tv = enumerated.iter().chain(&sampled).map(|r| r.max_tv).fold(0.0, f64::max);
    emit(c, "eval.json", &json!({ "outputs": kind, "enumerated": enumerated, "sampled": sampled, "accuracy": accuracy, "max_tv": max_tv }))?;
    match a.max_tv {
        Some(t) => gate(max_tv <= t, format!("max TV {max_tv:e} above {t:e}")),
        None => Ok(()),
    }
}

fn attn_export(c: &Common, model: &Path, probe: Option<&str>) -> Result<()> {
    let cfg = load_config(c)?;
    let params = load_model(model)?;
    let g = GrammarParams::new(params.config.k, params.config.depth, 1, cfg.grammar.q)?;
    let probe = parse_brackets(probe.unwrap_or(&cfg.variation.probe), &g)?;
    let patterns = attention_patterns(&params, probe.tokens())?;
    let render = |l: usize, a: &Matrix| -> Result<(String, String)> {
        Ok(match c.format {
            Format::Csv => (format!("layer{l}.csv"), pattern_csv(a)),
            Format::Svg => (format!("layer{l}.svg"), pattern_svg(a, &format!("layer {l}, probe {}", format_brackets(probe.tokens())))),
            Format::Json => (format!("layer{l}.json"), to_json(&json!({ "layer": l, "rows": (0..a.rows()).map(|i| a.row(i).to_vec()).collect::<Vec<_>>() }))?),
        })
    };
    for (l, a) in patterns.iter().enumerate() {
        let (name, text) = render(l, a)?;
        match &c.out {
            Some(dir) => harness::export::write_text(&dir.join(name), &text)?,
            None => print!("{text}"),
        }
    }
    Ok(())
}

fn balance(c: &Common, model: Option<&Path>, sweep: bool, compare: Option<f64>, max_beta: Option<f64>) -> Result<()> {
    only_json(c, "balance")?;
    if let Some(w) = compare {
        let cfg = load_config(c)?;
        let pairs = contrastive_comparison(&cfg, w)?;
        let lowered = pairs.iter().filter(|p| p.beta_lowered()).count();
        let raised = pairs.iter().filter(|p| p.long_accuracy_raised()).count();
        return emit(c, "contrastive.json", &json!({ "pairs": pairs, "beta_lowered": lowered, "long_accuracy_raised": raised }));
    }
    let params = load_model(model.expect("clap requires --model"))?;
    let bm = BalanceModel::from_minimal(&params)?;
    let report = balance_report(&bm)?;
    let sweep = if sweep { Some(n_sweep(&bm, &[32, 64, 128, 256], 50, 0.5, &mut Rng::seed(c.seed.unwrap_or(0)))?) } else { None };
    emit(c, "balance.json", &json!({ "report": report, "sweep": sweep }))?;
    match max_beta {
        Some(t) => gate(report.beta <= t, format!("β = {:e} above {t:e}", report.beta)),
        None => Ok(()),
    }
}

fn construct(c: &Common, kind: ConstructKind, k: usize, depth: usize, q: f64) -> Result<()> {
    only_json(c, "construct")?;
    let seed = c.seed.unwrap_or(0);
    let g = GrammarParams::new(k, depth, 1, q).map_err(|e| usage(e.to_string()))?;
    let built: Construction = match kind {
        ConstructKind::Uniform => build_uniform_attention_model(&g, seed)?,
        ConstructKind::Theorem1 | ConstructKind::Theorem1Balanced => {
            let m = EmbeddingKind::OnehotJoint.dim(k, depth);
            let table = embedding_table(EmbeddingKind::OnehotJoint, k, depth, m)?;
            let (wk, wq) = if kind == ConstructKind::Theorem1 {
                (Matrix::zeros(m, m), Matrix::zeros(m, m))
            } else {
                balanced_qk_sampler(k, depth, &table, m, &mut Rng::stream(seed, 7))?
            };
            build_theorem1_model(&g, &table, &wk, &wq, seed)?
        }
    };
    let dir = c.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.dyck");
    built.save(&path)?;
    print!("{}", to_json(&json!({ "checkpoint": path, "provenance": built.provenance }))?);
    Ok(())
}

fn prune(c: &Common, kind: PruneKind, m: usize, width: usize, epsilon: f64, d: usize) -> Result<()> {
    only_json(c, "prune")?;
    let mut rng = Rng::seed(c.seed.unwrap_or(0));
    let cfg = PruneConfig::default();
    let normalized = |rows: usize, cols: usize, norm: f64, rng: &mut Rng| -> Matrix {
        let w = Matrix::from_fn(rows, cols, |_, _| rng.normal());
        w.scale(norm / dyckformer::numerics::spectral_norm(&w))
    };
    match kind {
        PruneKind::Linear => {
            let target = normalized(m, m, 1.0, &mut rng);
            let (w1, w2) = (random_uniform(width, m, &mut rng), random_uniform(m, width, &mut rng));
            let p = prune_to_linear(&target, &w1, &w2, HiddenActivation::Relu, epsilon, &cfg, &mut rng)?;
            emit(c, "prune.json", &p)?;
            gate(p.certificate.passed, format!("certificate {:e} above {epsilon:e}", p.certificate.max_error))
        }
        PruneKind::Mlp => {
            let hidden = 2 * m;
            let t1 = normalized(hidden, m, 2.0, &mut rng);
            let t2 = normalized(m, hidden, 2.0, &mut rng);
            let big = FourLayer::random(m, width, &mut rng);
            let p = prune_to_mlp(&t1, &t2, &big, epsilon, &cfg, &mut rng)?;
            emit(c, "prune.json", &p)?;
            gate(p.certificate.passed, format!("certificate {:e} above {epsilon:e}", p.certificate.max_error))
        }
        PruneKind::Diagonal => {
            let w = random_uniform(m, m, &mut rng);
            let s = prune_diagonal_submatrix(&w, d)?;
            emit(c, "prune.json", &s)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_is_well_formed() {
        Cli::command().debug_assert();
    }
}
