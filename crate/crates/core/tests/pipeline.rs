use faithkit::data::{class_majority, gen_keyword_sentiment, io, DatasetSplit, LabeledExample};
use faithkit::explain::{explain_lime, ImportanceMeasure};
use faithkit::faith::{recursive_eval, roar_retrain, ExplainTarget, RecursiveEvalOptions, RoarOptions};
use faithkit::model::{evaluate, train, AttentionClassifier, Checkpoint, MaskingMode, SavedModel, TrainConfig};
use faithkit::ood::{masf_calibrate, masf_pvalues, MasfCalibration};
use faithkit::rng::seeded;
use std::sync::OnceLock;

fn toy() -> &'static (DatasetSplit, AttentionClassifier) {
    static TOY: OnceLock<(DatasetSplit, AttentionClassifier)> = OnceLock::new();
    TOY.get_or_init(|| {
        let split = gen_keyword_sentiment(1000, 10, 5).unwrap();
        let init = AttentionClassifier::new_random(split.vocab.len(), 8, 2, &mut seeded(1));
        let cfg = TrainConfig { epochs: 20, seed: 2, ..TrainConfig::default() };
        let (model, _) = train(init, &split, &cfg).unwrap();
        (split, model)
    })
}

fn options(delta: f64, seed: u64) -> RecursiveEvalOptions {
    let (split, _) = toy();
    RecursiveEvalOptions {
        delta,
        seed,
        target: ExplainTarget::Gold,
        metric: split.metric,
        n_labels: split.n_labels(),
        masked_fine_tuned: true,
    }
}

#[test]
fn trained_toy_is_accurate() {
    let (split, model) = toy();
    let acc = evaluate(model, &split.test, split.metric, split.n_labels()).unwrap();
    assert!(acc >= 0.95, "accuracy {acc}");
}

#[test]
fn unit_step_gives_two_points() {
    let (split, model) = toy();
    let r = recursive_eval(&ImportanceMeasure::Random, model, &split.test, &options(1.0, 3)).unwrap();
    assert_eq!(r.curve.ratios(), vec![0.0, 1.0]);
    assert!(r.levels[1].iter().all(|ex| ex.sequence.masked_count() == ex.sequence.len()));
}

#[test]
fn random_explanation_ends_at_majority() {
    let (split, model) = toy();
    let (_, majority) = class_majority(split).unwrap();
    let r = recursive_eval(&ImportanceMeasure::Random, model, &split.test, &options(0.1, 4)).unwrap();
    let last = *r.curve.performances().last().unwrap();
    assert!((last - majority).abs() <= 0.03, "last {last} majority {majority}");
}

#[test]
fn keyword_oracle_drops_at_first_step() {
    let (split, model) = toy();
    let (_, majority) = class_majority(split).unwrap();
    let im = ImportanceMeasure::Oracle { tokens: split.signal_tokens.clone() };
    let r = recursive_eval(&im, model, &split.test, &options(0.1, 5)).unwrap();
    let perf = r.curve.performances();
    assert!(perf[0] >= 0.95);
    assert!((perf[1] - majority).abs() <= 0.05, "first step {} majority {majority}", perf[1]);
}

#[test]
fn recursive_eval_is_reproducible() {
    let (split, model) = toy();
    let im = ImportanceMeasure::LeaveOneOut { kind: faithkit::explain::ScoreKind::Signed };
    let a = recursive_eval(&im, model, &split.test[..40], &options(0.25, 9)).unwrap();
    let b = recursive_eval(&im, model, &split.test[..40], &options(0.25, 9)).unwrap();
    assert_eq!(a.curve, b.curve);
}

#[test]
fn lime_finds_the_keyword() {
    let (split, model) = toy();
    let mut rng = seeded(13);
    let mut hits = 0;
    let examples: Vec<&LabeledExample> = split.test.iter().take(20).collect();
    for ex in &examples {
        let e = explain_lime(model, &ex.sequence, ex.gold, 300, 1e-3, &mut rng).unwrap();
        let top = (0..e.scores.len()).max_by(|&a, &b| e.scores[a].abs().total_cmp(&e.scores[b].abs())).unwrap();
        hits += usize::from(split.signal_tokens.contains(&ex.sequence.tokens()[top]));
    }
    assert!(hits >= 19, "keyword ranked first in {hits}/20");
}

#[test]
fn roar_retrain_masks_and_retrains() {
    let split = gen_keyword_sentiment(600, 8, 21).unwrap();
    let trainer = |s: &DatasetSplit, seed: u64| {
        let init = AttentionClassifier::new_random(s.vocab.len(), 6, 2, &mut seeded(seed));
        let cfg = TrainConfig { epochs: 15, seed, masking: MaskingMode::Plain, ..TrainConfig::default() };
        train(init, s, &cfg).map(|(m, _)| m)
    };
    let im = ImportanceMeasure::Oracle { tokens: split.signal_tokens.clone() };
    for recursive in [false, true] {
        let opts = RoarOptions { delta: 0.5, recursive, seed: 3, target: ExplainTarget::Gold };
        let curve = roar_retrain(&im, trainer, &split, &opts).unwrap();
        let perf = curve.performances();
        assert_eq!(perf.len(), 3);
        assert!(perf[0] >= 0.9, "{perf:?}");
        // once the keyword is gone the retrained model is at chance
        assert!(perf[1] <= 0.7 && perf[2] <= 0.7, "{perf:?}");
    }
}

#[test]
fn masf_flags_masked_inputs_for_plain_model() {
    let split = gen_keyword_sentiment(600, 10, 8).unwrap();
    let init = AttentionClassifier::new_random(split.vocab.len(), 8, 2, &mut seeded(4));
    let cfg = TrainConfig {
        epochs: 10,
        seed: 4,
        masking: MaskingMode::Plain,
        validation: faithkit::model::ValidationMode::Plain,
        ..TrainConfig::default()
    };
    let (model, _) = train(init, &split, &cfg).unwrap();
    let embed = |data: &[LabeledExample]| -> Vec<_> {
        use faithkit::model::Classifier;
        data.iter().map(|ex| model.forward(&ex.sequence).unwrap().embeddings).collect()
    };
    let cal = masf_calibrate(&embed(&split.validation)).unwrap();
    let masked: Vec<LabeledExample> =
        split.test.iter().map(|ex| LabeledExample { sequence: ex.sequence.fully_masked(), ..ex.clone() }).collect();
    let ps = masf_pvalues(&cal, &embed(&masked)).unwrap();
    let p = faithkit::ood::dataset_pvalue(&ps).unwrap();
    assert!(p < 0.05, "dataset p {p}");
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (split, model) = toy();

    let mut buf = Vec::new();
    io::write_dataset(split, &mut buf).unwrap();
    let back = io::read_dataset(std::io::Cursor::new(&buf)).unwrap();
    assert_eq!(back.test, split.test);
    assert_eq!(back.vocab.tokens(), split.vocab.tokens());

    let path = dir.path().join("model.json");
    Checkpoint::new(SavedModel::Attention(model.clone()), &split.vocab, 2).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let SavedModel::Attention(m) = loaded.model else { panic!("wrong model kind") };
    assert_eq!(
        evaluate(&m, &split.test, split.metric, 2).unwrap(),
        evaluate(model, &split.test, split.metric, 2).unwrap()
    );

    let cal = {
        use faithkit::model::Classifier;
        let obs: Vec<_> = split.validation.iter().map(|ex| model.forward(&ex.sequence).unwrap().embeddings).collect();
        masf_calibrate(&obs).unwrap()
    };
    let path = dir.path().join("masf.json");
    cal.save(&path).unwrap();
    assert_eq!(MasfCalibration::load(&path).unwrap(), cal);
}
