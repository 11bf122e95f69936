use criterion::{black_box, criterion_group, criterion_main, Criterion};
use faithkit::data::gen_keyword_sentiment;
use faithkit::explain::{ImportanceMeasure, ScoreKind};
use faithkit::faith::{recursive_eval, ExplainTarget, RecursiveEvalOptions};
use faithkit::model::{AttentionClassifier, Classifier};
use faithkit::ood::{masf_calibrate, masf_pvalues, LayerEmbeddings};
use faithkit::rng::seeded;

fn masf(c: &mut Criterion) {
    let split = gen_keyword_sentiment(1200, 12, 1).unwrap();
    let model = AttentionClassifier::new_random(split.vocab.len(), 16, 2, &mut seeded(2));
    let embed = |data: &[faithkit::data::LabeledExample]| -> Vec<LayerEmbeddings> {
        data.iter().map(|ex| model.forward(&ex.sequence).unwrap().embeddings).collect()
    };
    let cal_obs = embed(&split.train);
    let test_obs = embed(&split.test);
    c.bench_function("masf/calibrate", |b| b.iter(|| masf_calibrate(black_box(&cal_obs)).unwrap()));
    let cal = masf_calibrate(&cal_obs).unwrap();
    c.bench_function("masf/pvalues", |b| b.iter(|| masf_pvalues(&cal, black_box(&test_obs)).unwrap()));
}

fn recursive(c: &mut Criterion) {
    let split = gen_keyword_sentiment(400, 10, 1).unwrap();
    let model = AttentionClassifier::new_random(split.vocab.len(), 8, 2, &mut seeded(2));
    let opts = RecursiveEvalOptions {
        delta: 0.1,
        seed: 4,
        target: ExplainTarget::Gold,
        metric: split.metric,
        n_labels: split.n_labels(),
        masked_fine_tuned: true,
    };
    let mut g = c.benchmark_group("recursive-eval");
    g.sample_size(20);
    for im in [
        ImportanceMeasure::Random,
        ImportanceMeasure::LeaveOneOut { kind: ScoreKind::Signed },
        ImportanceMeasure::IntegratedGradient { kind: ScoreKind::Signed, steps: 32 },
    ] {
        g.bench_function(im.name(), |b| b.iter(|| recursive_eval(&im, &model, &split.test, &opts).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, masf, recursive);
criterion_main!(benches);
