use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use faithkit::data::gen_keyword_sentiment;
use faithkit::explain::{
    explain_gradient, explain_integrated_gradient, explain_kernel_shap, PNorm, ScoreKind, ShapMode,
};
use faithkit::model::{AttentionClassifier, Classifier};
use faithkit::rng::seeded;

fn model_and_input(seq_len: usize) -> (AttentionClassifier, faithkit::data::TokenSequence) {
    let split = gen_keyword_sentiment(64, seq_len, 1).unwrap();
    let model = AttentionClassifier::new_random(split.vocab.len(), 16, 2, &mut seeded(2));
    (model, split.test[0].sequence.clone())
}

fn forward_and_grad(c: &mut Criterion) {
    let (model, seq) = model_and_input(32);
    c.bench_function("forward/len32", |b| b.iter(|| model.forward(black_box(&seq)).unwrap()));
    c.bench_function("gradient/len32", |b| b.iter(|| explain_gradient(&model, black_box(&seq), 1, PNorm::L2).unwrap()));
}

fn integrated_gradient(c: &mut Criterion) {
    let (model, seq) = model_and_input(32);
    let mut g = c.benchmark_group("integrated-gradient");
    for steps in [16, 64, 256] {
        g.bench_with_input(BenchmarkId::from_parameter(steps), &steps, |b, &k| {
            b.iter(|| explain_integrated_gradient(&model, &seq, 1, k, ScoreKind::Signed).unwrap())
        });
    }
    g.finish();
}

fn kernel_shap(c: &mut Criterion) {
    let mut g = c.benchmark_group("kernel-shap");
    for len in [6, 10] {
        let (model, seq) = model_and_input(len);
        g.bench_with_input(BenchmarkId::new("exact", len), &seq, |b, s| {
            b.iter(|| explain_kernel_shap(&model, s, 1, ShapMode::Exact, &mut seeded(3)).unwrap())
        });
    }
    let (model, seq) = model_and_input(32);
    g.bench_function("sampled-500/32", |b| {
        b.iter(|| explain_kernel_shap(&model, &seq, 1, ShapMode::Sampled(500), &mut seeded(3)).unwrap())
    });
    g.finish();
}

criterion_group!(benches, forward_and_grad, integrated_gradient, kernel_shap);
criterion_main!(benches);
