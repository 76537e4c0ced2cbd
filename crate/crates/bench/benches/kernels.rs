use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use dyckformer::balance::{balance_report, BalanceModel};
use dyckformer::constructions::build_uniform_attention_model;
use dyckformer::dyck::{next_token_distribution, sample_prefix};
use dyckformer::pruning::linear::random_uniform;
use dyckformer::pruning::{prune_to_linear, subset_sum_select, HiddenActivation, PruneConfig};
use dyckformer::transformer::{final_outputs, forward, EmbeddingKind};
use dyckformer::{GrammarParams, Matrix, ModelConfig, ModelParams, Rng};
use std::hint::black_box;

fn numerics(c: &mut Criterion) {
    let mut r = Rng::seed(1);
    let a = Matrix::from_fn(64, 64, |_, _| r.normal());
    let b = Matrix::from_fn(64, 64, |_, _| r.normal());
    c.bench_function("matmul_64", |bench| bench.iter(|| black_box(&a).matmul(black_box(&b))));
    let pool: Vec<f64> = (0..24).map(|_| r.uniform() * 2.0 - 1.0).collect();
    c.bench_function("subset_sum_24", |bench| bench.iter(|| subset_sum_select(black_box(&pool), 0.3141, 1e-3)));
}

fn grammar(c: &mut Criterion) {
    let g = GrammarParams::new(2, 4, 27, 0.5).unwrap();
    let mut r = Rng::seed(2);
    c.bench_function("sample_prefix_27", |bench| bench.iter(|| sample_prefix(black_box(&g), &mut r)));
    let p = sample_prefix(&g, &mut r);
    c.bench_function("next_token_distribution", |bench| bench.iter(|| next_token_distribution(black_box(&p), &g)));
}

fn model(c: &mut Criterion) {
    let g = GrammarParams::new(2, 4, 27, 0.5).unwrap();
    let mut r = Rng::seed(3);
    let params = ModelParams::init(&ModelConfig::default(), &mut r).unwrap();
    let p = sample_prefix(&g, &mut r);
    c.bench_function("forward_standard_27", |bench| bench.iter(|| forward(black_box(&params), p.tokens())));
    let batch: Vec<_> = (0..32).map(|_| sample_prefix(&g, &mut r)).collect();
    let refs: Vec<&[usize]> = batch.iter().map(|p| p.tokens()).collect();
    c.bench_function("final_outputs_batch_32", |bench| bench.iter(|| final_outputs(black_box(&params), &refs)));

    let built = build_uniform_attention_model(&GrammarParams::new(2, 3, 1, 0.5).unwrap(), 0).unwrap();
    let long = sample_prefix(&GrammarParams::new(2, 3, 256, 0.5).unwrap(), &mut r);
    c.bench_function("forward_uniform_construction_256", |bench| bench.iter(|| forward(black_box(&built.params), long.tokens())));

    let minimal = ModelParams::init(&ModelConfig::minimal(2, 4, EmbeddingKind::OnehotJoint), &mut r).unwrap();
    let bm = BalanceModel::from_minimal(&minimal).unwrap();
    c.bench_function("balance_report_k2_d4", |bench| bench.iter(|| balance_report(black_box(&bm))));
}

fn pruning(c: &mut Criterion) {
    let mut r = Rng::seed(4);
    let target = Matrix::from_fn(2, 2, |_, _| r.normal() / 2.0);
    let (w1, w2) = (random_uniform(400, 2, &mut r), random_uniform(2, 400, &mut r));
    let cfg = PruneConfig::default();
    c.bench_function("prune_to_linear_h400", |bench| {
        bench.iter_batched(
            || Rng::seed(5),
            |mut rng| prune_to_linear(&target, &w1, &w2, HiddenActivation::Relu, 0.05, &cfg, &mut rng),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, numerics, grammar, model, pruning);
criterion_main!(benches);
