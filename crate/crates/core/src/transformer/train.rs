use super::config::ModelConfig;
use super::forward::{build_graph, check_prefix, final_outputs};
use super::params::ModelParams;
use crate::dyck::{close_token, open_token, sample_balanced_prefix, sample_prefix, EvalItem, GrammarParams};
use crate::error::{input, Error, Result};
use crate::numerics::adam::{AdamConfig, AdamState};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::{Matrix, Rng};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Squared,
    #[default]
    CrossEntropy,
}

/// What each training sequence is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Corpus {
    /// Prefixes of exactly `N` tokens.
    #[default]
    Prefixes,
    /// Complete words: prefixes of `N` tokens (rounded up to even) that end at depth 0.
    Balanced,
    /// Complete words of even length drawn uniformly from `2..=N` (rounded up to even).
    Words,
}

/// Next-token loss of `logits` (columns aligned with the start-prefixed
/// sequence) against `prefix`: column `i` is scored on `prefix[i]`.
pub fn loss(logits: &Matrix, prefix: &[usize], kind: LossKind) -> Result<f64> {
    if logits.cols() < prefix.len() {
        return input(format!("{} logit columns for {} targets", logits.cols(), prefix.len()));
    }
    if let Some(&t) = prefix.iter().find(|&&t| t == 0 || t > logits.rows()) {
        return input(format!("target token {t} has no logit row"));
    }
    let mut targets: Vec<Option<usize>> = prefix.iter().map(|&t| Some(t - 1)).collect();
    targets.resize(logits.cols(), None);
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let v = match kind {
        LossKind::Squared => tape.squared_loss(l, targets),
        LossKind::CrossEntropy => tape.cross_entropy(l, targets),
    };
    Ok(tape.scalar(v))
}

/// `r` nested pairs with independently uniform types: opens, then matching closes.
pub fn nested_block(k: usize, r: usize, rng: &mut Rng) -> Vec<usize> {
    let types: Vec<usize> = (0..r).map(|_| 1 + rng.below(k)).collect();
    let mut out: Vec<usize> = types.iter().map(|&t| open_token(t)).collect();
    out.extend(types.iter().rev().map(|&t| close_token(t)));
    out
}

/// Columns of `s`'s tokens (start excluded) in a block beginning at `start`
/// whose first `offset` tokens precede `s`.
fn s_columns(start: usize, offset: usize, len: usize) -> impl Iterator<Item = usize> {
    (0..len).map(move |i| start + 1 + offset + i)
}

/// `‖T(s | block ⊕ s) − T(s)‖²_F` for one explicit balanced block.
pub fn contrastive_term(params: &ModelParams, s: &[usize], block: &[usize]) -> Result<f64> {
    check_prefix(params, s)?;
    let mut joined = block.to_vec();
    joined.extend_from_slice(s);
    check_prefix(params, &joined)?;
    let mut tape = Tape::new();
    let g = build_graph(&mut tape, params, &[s, &joined], false);
    let l = tape.value(g.logits);
    let b2 = g.blocks[1].start;
    let mut total = 0.0;
    for (a, b) in s_columns(0, 0, s.len()).zip(s_columns(b2, block.len(), s.len())) {
        for r in 0..l.rows() {
            total += (l[(r, b)] - l[(r, a)]).powi(2);
        }
    }
    Ok(total)
}

/// Independent Monte-Carlo draws of the contrastive penalty (r ~ U{1..D}).
pub fn contrastive_samples(params: &ModelParams, s: &[usize], rng: &mut Rng, samples: usize) -> Result<Vec<f64>> {
    let c = &params.config;
    (0..samples)
        .map(|_| {
            let r = 1 + rng.below(c.depth);
            let block = nested_block(c.k, r, rng);
            contrastive_term(params, s, &block)
        })
        .collect()
}

pub fn contrastive_regularizer(params: &ModelParams, s: &[usize], rng: &mut Rng, samples: usize) -> Result<f64> {
    if samples == 0 {
        return input("contrastive estimate needs at least one sample");
    }
    let v = contrastive_samples(params, s, rng, samples)?;
    Ok(v.iter().sum::<f64>() / samples as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossKind,
    pub corpus: Corpus,
    /// Adds `λθ` to every trainable gradient.
    pub weight_decay: f64,
    pub contrastive_weight: f64,
    /// Sequences per batch that also receive a prepended nested block.
    pub contrastive_samples: usize,
    pub log_every: usize,
    pub eval_every: usize,
    pub eval_items: usize,
    /// Stop once validation accuracy reaches this value.
    pub target_accuracy: Option<f64>,
    /// Records β on each evaluation (minimal mode only).
    pub track_beta: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 20_000,
            batch_size: 64,
            adam: AdamConfig::default(),
            loss: LossKind::CrossEntropy,
            corpus: Corpus::Prefixes,
            weight_decay: 0.0,
            contrastive_weight: 0.0,
            contrastive_samples: 16,
            log_every: 100,
            eval_every: 500,
            eval_items: 500,
            target_accuracy: None,
            track_beta: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub beta: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<MetricsRow>,
    pub steps_run: usize,
    /// Last validation accuracy, if any evaluation ran.
    pub accuracy: Option<f64>,
}

/// Objective value and gradients (one per trainable tensor, in
/// `tensors_mut` order; `None` for frozen tensors) on one batch.
pub(crate) struct StepResult {
    pub objective: f64,
    pub data_loss: f64,
    pub grads: Vec<Option<Matrix>>,
}

/// Total objective: data loss + contrastive penalty + `(λ/2)‖θ‖²` over trainable tensors.
pub(crate) fn objective_and_grads(
    params: &ModelParams,
    inputs: &[Vec<usize>],
    targets: &[Vec<usize>],
    blocks: &[Vec<usize>],
    tc: &TrainConfig,
) -> Result<StepResult> {
    let n_main = inputs.len();
    let mut seqs: Vec<Vec<usize>> = inputs.to_vec();
    for (i, b) in blocks.iter().enumerate() {
        let mut j = b.clone();
        j.extend_from_slice(&inputs[i]);
        seqs.push(j);
    }
    let refs: Vec<&[usize]> = seqs.iter().map(|s| s.as_slice()).collect();
    let mut tape = Tape::new();
    let g = build_graph(&mut tape, params, &refs, true);
    let total_cols = g.blocks.iter().map(|b| b.len).sum();
    let mut tgt = vec![None; total_cols];
    for (b, t) in g.blocks[..n_main].iter().zip(targets) {
        for (i, &tok) in t.iter().enumerate() {
            tgt[b.start + i] = Some(tok - 1);
        }
    }
    let data = match tc.loss {
        LossKind::Squared => tape.squared_loss(g.logits, tgt),
        LossKind::CrossEntropy => tape.cross_entropy(g.logits, tgt),
    };
    let mut obj: Var = data;
    if !blocks.is_empty() && tc.contrastive_weight != 0.0 {
        let mut base = Vec::new();
        let mut ext = Vec::new();
        for (i, b) in blocks.iter().enumerate() {
            let len = inputs[i].len();
            base.extend(s_columns(g.blocks[i].start, 0, len));
            ext.extend(s_columns(g.blocks[n_main + i].start, b.len(), len));
        }
        let a = tape.select_cols(g.logits, base);
        let b = tape.select_cols(g.logits, ext);
        let d = tape.sub(b, a);
        let sq = tape.sum_sq(d);
        let pen = tape.scale(sq, tc.contrastive_weight / blocks.len() as f64);
        obj = tape.add(obj, pen);
    }
    let data_loss = tape.scalar(data);
    let mut objective = tape.scalar(obj);
    let mut grads = tape.backward(obj)?.slots;
    let tensors = params.named_tensors();
    let flags = params.trainable_flags();
    grads.resize(tensors.len(), None);
    for (((_, t), trainable), g) in tensors.into_iter().zip(flags).zip(grads.iter_mut()) {
        if !trainable {
            *g = None;
            continue;
        }
        let gm = g.get_or_insert_with(|| Matrix::zeros(t.rows(), t.cols()));
        if tc.weight_decay != 0.0 {
            gm.axpy(tc.weight_decay, t);
            objective += 0.5 * tc.weight_decay * t.frobenius_sq();
        }
    }
    Ok(StepResult { objective, data_loss, grads })
}

/// Trains from a seeded initialization on freshly sampled prefixes of
/// `grammar.n` tokens. Validation uses `val` (early stopping and the log).
pub fn train(
    config: &ModelConfig,
    grammar: &GrammarParams,
    tc: &TrainConfig,
    val: &[EvalItem],
    seed: u64,
) -> Result<TrainOutcome> {
    grammar.validate()?;
    if grammar.k != config.k || grammar.d > config.depth {
        return input("grammar and model disagree on k or depth");
    }
    if tc.batch_size == 0 {
        return input("batch_size must be positive");
    }
    let mut init_rng = Rng::stream(seed, 1);
    let mut data_rng = Rng::stream(seed, 2);
    let mut block_rng = Rng::stream(seed, 3);
    let mut params = ModelParams::init(config, &mut init_rng)?;
    let word_grammar = grammar.with_length(grammar.n.div_ceil(2) * 2);
    let shapes: Vec<(usize, usize)> = params.tensors_mut().iter().map(|(t, _)| t.shape()).collect();
    let mut adam = AdamState::new(tc.adam, &shapes);
    let mut log = Vec::new();
    let mut accuracy = None;
    let evaluate = |p: &ModelParams, step: usize, loss: f64| -> Result<MetricsRow> {
        let acc = if val.is_empty() { None } else { Some(evaluate_accuracy(p, val)?) };
        let beta = if tc.track_beta && p.config.is_minimal() { crate::balance::beta(p).ok() } else { None };
        Ok(MetricsRow { step, loss, accuracy: acc, beta })
    };
    let mut steps_run = 0;
    for step in 1..=tc.steps {
        let mut inputs = Vec::with_capacity(tc.batch_size);
        let mut targets = Vec::with_capacity(tc.batch_size);
        for _ in 0..tc.batch_size {
            let p = match tc.corpus {
                Corpus::Prefixes => sample_prefix(grammar, &mut data_rng),
                Corpus::Balanced => sample_balanced_prefix(&word_grammar, &mut data_rng)?,
                Corpus::Words => {
                    let n = 2 * data_rng.range_inclusive(1, word_grammar.n / 2);
                    sample_balanced_prefix(&word_grammar.with_length(n), &mut data_rng)?
                }
            };
            let t = p.tokens().to_vec();
            inputs.push(t[..t.len() - 1].to_vec());
            targets.push(t);
        }
        let blocks: Vec<Vec<usize>> = if tc.contrastive_weight != 0.0 {
            (0..tc.contrastive_samples.min(tc.batch_size))
                .map(|_| {
                    let r = 1 + block_rng.below(config.depth);
                    nested_block(config.k, r, &mut block_rng)
                })
                .collect()
        } else {
            Vec::new()
        };
        let res = objective_and_grads(&params, &inputs, &targets, &blocks, tc)?;
        if !res.objective.is_finite() {
            return Err(Error::Diverged { step, loss: res.objective });
        }
        let mut refs = Vec::new();
        let mut gs = Vec::new();
        for ((t, trainable), g) in params.tensors_mut().into_iter().zip(res.grads) {
            let g = g.unwrap_or_else(|| Matrix::zeros(t.rows(), t.cols()));
            // Frozen tensors receive a zero gradient, which Adam leaves in place.
            gs.push(if trainable { g } else { Matrix::zeros(t.rows(), t.cols()) });
            refs.push(t);
        }
        adam.step(&mut refs, &gs)?;
        steps_run = step;
        let eval_now = tc.eval_every > 0 && step % tc.eval_every == 0;
        if eval_now {
            let row = evaluate(&params, step, res.data_loss)?;
            accuracy = row.accuracy;
            log.push(row);
            if let (Some(target), Some(acc)) = (tc.target_accuracy, accuracy) {
                if acc >= target {
                    break;
                }
            }
        } else if tc.log_every > 0 && step % tc.log_every == 0 {
            log.push(MetricsRow { step, loss: res.data_loss, accuracy: None, beta: None });
        }
    }
    if steps_run > 0 && log.last().is_none_or(|r| r.step != steps_run || r.accuracy.is_none()) && !val.is_empty() {
        let row = evaluate(&params, steps_run, f64::NAN)?;
        accuracy = row.accuracy;
        log.push(row);
    }
    Ok(TrainOutcome { params, log, steps_run, accuracy })
}

/// Fraction of items whose label is the argmax of the final-position output.
pub fn evaluate_accuracy(params: &ModelParams, items: &[EvalItem]) -> Result<f64> {
    if items.is_empty() {
        return input("empty evaluation set");
    }
    let refs: Vec<&[usize]> = items.iter().map(|it| it.input.tokens()).collect();
    let outs = final_outputs(params, &refs)?;
    let correct = outs.iter().zip(items).filter(|(o, it)| argmax(o) + 1 == it.label).count();
    Ok(correct as f64 / items.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientCheck {
    pub probes: usize,
    pub max_rel_error: f64,
    /// Tensor and entry with the largest relative error.
    pub worst: String,
}

/// Central differences (step `h`) against the analytic gradient of the full
/// training objective, at `per_tensor` random entries of every trainable
/// tensor. The batch holds `batch` sampled prefixes of `grammar.n` tokens and,
/// when the contrastive term is on, one nested block per prefix.
/// Relative error is `|fd − an| / max(|fd|, |an|, 1e-6)`.
pub fn gradient_check(
    params: &ModelParams,
    grammar: &GrammarParams,
    tc: &TrainConfig,
    batch: usize,
    per_tensor: usize,
    h: f64,
    rng: &mut Rng,
) -> Result<GradientCheck> {
    let mut inputs = Vec::with_capacity(batch);
    let mut targets = Vec::with_capacity(batch);
    for _ in 0..batch {
        let t = sample_prefix(grammar, rng).tokens().to_vec();
        inputs.push(t[..t.len() - 1].to_vec());
        targets.push(t);
    }
    let blocks: Vec<Vec<usize>> = if tc.contrastive_weight != 0.0 {
        (0..batch).map(|_| nested_block(params.config.k, rng.range_inclusive(1, params.config.depth), rng)).collect()
    } else {
        Vec::new()
    };
    let res = objective_and_grads(params, &inputs, &targets, &blocks, tc)?;
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let mut out = GradientCheck { probes: 0, max_rel_error: 0.0, worst: String::new() };
    let mut q = params.clone();
    for (ti, name) in names.iter().enumerate() {
        let Some(grad) = res.grads[ti].as_ref() else { continue };
        let (r, c) = grad.shape();
        for _ in 0..per_tensor {
            let (i, j) = (rng.below(r), rng.below(c));
            let mut at = |delta: f64| -> Result<f64> {
                q.tensors_mut()[ti].0[(i, j)] += delta;
                let v = objective_and_grads(&q, &inputs, &targets, &blocks, tc)?.objective;
                q.tensors_mut()[ti].0[(i, j)] -= delta;
                Ok(v)
            };
            let fd = (at(h)? - at(-h)?) / (2.0 * h);
            let an = grad[(i, j)];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            out.probes += 1;
            if rel > out.max_rel_error || rel.is_nan() {
                out.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                out.worst = format!("{name}[{i},{j}]: fd {fd:e}, analytic {an:e}");
            }
        }
    }
    Ok(out)
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyck::{closing_eval_set, DyckPrefix};
    use crate::transformer::config::EmbeddingKind;
    use crate::transformer::forward::forward;

    fn tiny() -> ModelConfig {
        ModelConfig { dim: 6, attn_dim: 4, ffn_width: 5, ..Default::default() }
    }

    #[test]
    fn loss_examples() {
        let onehot = Matrix::from_columns(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(loss(&onehot, &[1, 3], LossKind::Squared).unwrap(), 0.0);
        let uni = Matrix::zeros(4, 3);
        assert!((loss(&uni, &[1, 3, 4], LossKind::CrossEntropy).unwrap() - 4f64.ln()).abs() < 1e-15);
        let one = Matrix::col_vector(&[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(loss(&one, &[2], LossKind::Squared).unwrap(), 2.0);
        assert!(loss(&one, &[1, 2], LossKind::Squared).is_err());
    }

    #[test]
    fn contrastive_vanishes_for_uniform_minimal_models_and_empty_blocks() {
        let mut cfg = ModelConfig::minimal(2, 4, EmbeddingKind::OnehotJoint);
        cfg.frozen_uniform_attention = true;
        let mut p = ModelParams::init(&cfg, &mut Rng::seed(1)).unwrap();
        // Zero values: the output depends on (type, depth) only.
        p.layers[0].wv = Matrix::zeros(p.dim(), p.dim());
        let s = [1, 3, 4, 1];
        let v = contrastive_regularizer(&p, &s, &mut Rng::seed(2), 8).unwrap();
        assert!(v < 1e-24, "{v}");
        let q = ModelParams::init(&tiny(), &mut Rng::seed(3)).unwrap();
        assert_eq!(contrastive_term(&q, &s, &[]).unwrap(), 0.0);
        assert!(contrastive_term(&q, &s, &[1, 3, 4, 2]).unwrap() > 0.0);
    }

    #[test]
    fn contrastive_estimates_agree_across_seeds() {
        let p = ModelParams::init(&tiny(), &mut Rng::seed(4)).unwrap();
        let s = [1, 3, 4, 2, 3];
        let n = 200;
        let a = contrastive_samples(&p, &s, &mut Rng::seed(5), n).unwrap();
        let b = contrastive_samples(&p, &s, &mut Rng::seed(6), n).unwrap();
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            (m, var / v.len() as f64)
        };
        let ((ma, va), (mb, vb)) = (stats(&a), stats(&b));
        assert!((ma - mb).abs() <= 3.0 * (va + vb).sqrt(), "{ma} vs {mb}");
    }

    fn batch(g: &GrammarParams, n: usize, rng: &mut Rng) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for _ in 0..n {
            let t = sample_prefix(g, rng).tokens().to_vec();
            inputs.push(t[..t.len() - 1].to_vec());
            targets.push(t);
        }
        (inputs, targets)
    }

    #[test]
    fn total_objective_gradient_matches_finite_differences() {
        let g = GrammarParams::new(2, 4, 7, 0.5).unwrap();
        let mut rng = Rng::seed(7);
        for (cfg, kind) in [
            (tiny(), LossKind::CrossEntropy),
            (ModelConfig { arch: crate::transformer::ArchVariant::Gpt2, ln_c: 0.5, ..tiny() }, LossKind::Squared),
        ] {
            let p = ModelParams::init(&cfg, &mut rng).unwrap();
            let (inputs, targets) = batch(&g, 3, &mut rng);
            let blocks = vec![nested_block(2, 2, &mut rng), nested_block(2, 1, &mut rng)];
            let tc = TrainConfig { loss: kind, weight_decay: 0.03, contrastive_weight: 0.7, ..Default::default() };
            let res = objective_and_grads(&p, &inputs, &targets, &blocks, &tc).unwrap();
            let names: Vec<String> = p.named_tensors().into_iter().map(|(n, _)| n).collect();
            let h = 1e-5;
            for (ti, name) in names.iter().enumerate() {
                let grad = res.grads[ti].as_ref().unwrap();
                for probe in 0..3 {
                    let mut q = p.clone();
                    let (r, c) = grad.shape();
                    let (i, j) = ((probe * 7 + ti) % r, (probe * 3 + 2 * ti) % c);
                    let f = |q: &mut ModelParams, delta: f64| {
                        let mut t = q.tensors_mut();
                        t[ti].0[(i, j)] += delta;
                        drop(t);
                        objective_and_grads(q, &inputs, &targets, &blocks, &tc).unwrap().objective
                    };
                    let up = f(&mut q, h);
                    let down = f(&mut q, -2.0 * h);
                    let fd = (up - down) / (2.0 * h);
                    let an = grad[(i, j)];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                    assert!(rel <= 1e-4, "{name}[{i},{j}]: fd {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn frozen_tensors_get_no_gradient() {
        let mut cfg = ModelConfig::minimal(2, 3, EmbeddingKind::OnehotJoint);
        cfg.frozen_uniform_attention = true;
        let p = ModelParams::init(&cfg, &mut Rng::seed(8)).unwrap();
        let g = GrammarParams::new(2, 3, 6, 0.5).unwrap();
        let (inputs, targets) = batch(&g, 2, &mut Rng::seed(9));
        let res = objective_and_grads(&p, &inputs, &targets, &[], &TrainConfig::default()).unwrap();
        assert!(res.grads[0].is_none() && res.grads[1].is_none() && res.grads[2].is_none());
        assert!(res.grads[3].is_some());
    }

    fn quick(steps: usize) -> TrainConfig {
        TrainConfig { steps, batch_size: 8, eval_every: 0, log_every: 5, ..Default::default() }
    }

    #[test]
    fn zero_steps_returns_the_initialization() {
        let g = GrammarParams::new(2, 4, 10, 0.5).unwrap();
        let out = train(&tiny(), &g, &quick(0), &[], 17).unwrap();
        let init = ModelParams::init(&tiny(), &mut Rng::stream(17, 1)).unwrap();
        assert_eq!(out.params, init);
        assert_eq!(out.steps_run, 0);
    }

    #[test]
    fn training_is_deterministic() {
        let g = GrammarParams::new(2, 4, 10, 0.5).unwrap();
        let tc = TrainConfig { contrastive_weight: 0.1, contrastive_samples: 2, ..quick(12) };
        let a = train(&tiny(), &g, &tc, &[], 3).unwrap();
        let b = train(&tiny(), &g, &tc, &[], 3).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
        let c = train(&tiny(), &g, &tc, &[], 4).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn strong_weight_decay_shrinks_parameters() {
        let g = GrammarParams::new(2, 4, 10, 0.5).unwrap();
        let tc = TrainConfig { weight_decay: 1e3, adam: AdamConfig { lr: 1e-2, ..Default::default() }, ..quick(0) };
        let mut norms = Vec::new();
        for steps in [50, 100, 200, 400] {
            let out = train(&tiny(), &g, &TrainConfig { steps, ..tc.clone() }, &[], 5).unwrap();
            norms.push(out.params.parameter_norm_sq());
        }
        assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
        assert!(norms[3] < 0.05 * norms[0]);
    }

    #[test]
    fn divergence_is_reported() {
        let g = GrammarParams::new(2, 4, 10, 0.5).unwrap();
        let tc = TrainConfig { weight_decay: f64::INFINITY, ..quick(3) };
        assert!(matches!(train(&tiny(), &g, &tc, &[], 1), Err(Error::Diverged { step: 1, .. })));
    }

    #[test]
    fn accuracy_examples() {
        let g = GrammarParams::new(2, 4, 12, 0.5).unwrap();
        let items = closing_eval_set(&g, 300, 2..=12, &mut Rng::seed(10)).unwrap();
        // Head that always prefers token 2: correct exactly on type-1 labels.
        let mut p = ModelParams::init(&tiny(), &mut Rng::seed(11)).unwrap();
        p.head_w = Matrix::zeros(4, 6);
        p.head_b = Some(Matrix::col_vector(&[0.0, 1.0, 0.0, 0.0]));
        let want = items.iter().filter(|it| it.label == 2).count() as f64 / 300.0;
        assert_eq!(evaluate_accuracy(&p, &items).unwrap(), want);
        assert!((want - 0.5).abs() < 0.1);
        assert!(evaluate_accuracy(&p, &[]).is_err());
        // The oracle distribution always puts its mass on the label.
        for it in &items {
            let d = crate::dyck::next_token_distribution(&it.input, &g).unwrap();
            assert_eq!(argmax(&d) + 1, it.label);
        }
        let _ = forward(&p, DyckPrefix::empty().tokens()).unwrap();
    }
}
