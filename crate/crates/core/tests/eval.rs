use pelican::data::BinaryLabel;
use pelican::eval::{
    balanced_accuracy, bleu4, bleu4_text, emit_report, eval_examples, evaluate, EvalOptions, EvalReport,
};
use pelican::geometry::OverlapConfig;
use pelican::model::{label_accuracy, AblationConfig, ModelConfig, PelicanParams};
use pelican::synth;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

#[test]
fn bleu_of_identical_corpora_is_one() {
    let corpus = ["a b c d e", "the cat sat on the mat", "one two three four"];
    let hyps: Vec<_> = corpus.iter().map(|s| words(s)).collect();
    let refs: Vec<_> = corpus.iter().map(|s| vec![words(s)]).collect();
    assert!((bleu4(&hyps, &refs).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn bleu_brevity_case() {
    // Precisions 4/4, 3/3, 2/2, 1/1 and a brevity penalty of exp(1 - 5/4).
    let got = bleu4(&[words("a b c d")], &[vec![words("a b c d e")]]).unwrap();
    assert!((got - 0.7788).abs() < 1e-4, "{got}");
    assert!((got - (-0.25f64).exp()).abs() < 1e-12);
}

#[test]
fn bleu_hand_computed_precisions() {
    // One substituted final word: 5/6, 4/5, 3/4, 2/3, equal lengths.
    let got = bleu4(&[words("a b c d e f")], &[vec![words("a b c d e x")]]).unwrap();
    let expected = (5.0 / 6.0 * 4.0 / 5.0 * 3.0 / 4.0 * 2.0 / 3.0f64).powf(0.25);
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    // Clipping: repeated words count only as often as in the reference.
    assert_eq!(
        bleu4(&[words("the the the the")], &[vec![words("the cat is here")]]).unwrap(),
        0.0
    );
}

#[test]
fn bleu_uses_the_closest_reference_length() {
    let hyp = words("a b c d");
    let short = bleu4(
        std::slice::from_ref(&hyp),
        &[vec![words("a b c d x y z w"), words("a b c d")]],
    )
    .unwrap();
    assert!((short - 1.0).abs() < 1e-12);
}

#[test]
fn bleu_is_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let vocab = ["a", "b", "c", "d", "e", "f"];
    let sentence = |rng: &mut ChaCha8Rng| -> Vec<String> {
        (0..rng.gen_range(4..10))
            .map(|_| vocab[rng.gen_range(0..vocab.len())].to_string())
            .collect()
    };
    let mut pairs: Vec<(Vec<String>, Vec<Vec<String>>)> = (0..30)
        .map(|_| (sentence(&mut rng), vec![sentence(&mut rng), sentence(&mut rng)]))
        .collect();
    let score = |pairs: &[(Vec<String>, Vec<Vec<String>>)]| {
        let (h, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        bleu4(&h, &r).unwrap()
    };
    let base = score(&pairs);
    assert!((0.0..=1.0).contains(&base));
    for _ in 0..10 {
        pairs.shuffle(&mut rng);
        assert!((score(&pairs) - base).abs() < 1e-12);
    }
}

#[test]
fn bleu_text_splits_punctuation() {
    let got = bleu4_text(&["a b, c d."], &[vec!["a b , c d ."]]).unwrap();
    assert!((got - 1.0).abs() < 1e-12);
}

#[test]
fn coin_flips_score_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let golds: Vec<BinaryLabel> = (0..100)
        .map(|i| {
            if i % 2 == 0 {
                BinaryLabel::Positive
            } else {
                BinaryLabel::Negative
            }
        })
        .collect();
    let trials = 10_000;
    let mut total = 0.0;
    for _ in 0..trials {
        let preds: Vec<BinaryLabel> = (0..golds.len())
            .map(|_| {
                if rng.gen_bool(0.5) {
                    BinaryLabel::Positive
                } else {
                    BinaryLabel::Negative
                }
            })
            .collect();
        total += balanced_accuracy(&preds, &golds).unwrap().accuracy;
    }
    let mean = total / trials as f64;
    assert!((0.48..=0.52).contains(&mean), "{mean}");
}

#[test]
fn predictions_equal_to_golds_score_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let p: Vec<BinaryLabel> = (0..rng.gen_range(1..50))
            .map(|_| {
                if rng.gen_bool(0.3) {
                    BinaryLabel::Positive
                } else {
                    BinaryLabel::Negative
                }
            })
            .collect();
        assert_eq!(balanced_accuracy(&p, &p).unwrap().accuracy, 1.0);
    }
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        max_regions: 8,
        max_tokens: 64,
        feature_dim: 16,
        ..ModelConfig::default()
    }
}

#[test]
fn untrained_models_classify_at_chance() {
    let images = synth::synth_dataset(1000, 4, 16).unwrap();
    let inputs = synth::synth_inputs(&images, &OverlapConfig::default(), true).unwrap();
    assert_eq!(inputs.len(), 1000);
    let mut total = 0.0;
    for seed in 0..3 {
        let params = PelicanParams::new(tiny_model(), seed).unwrap();
        total += label_accuracy(&params, &inputs, &AblationConfig::full()).unwrap();
    }
    let mean = total / 3.0;
    assert!((0.45..=0.55).contains(&mean), "{mean}");
}

#[test]
fn reports_are_deterministic() {
    let images = synth::synth_dataset(12, 5, 16).unwrap();
    let records: Vec<_> = images.iter().map(|i| i.record.clone()).collect();
    let sources: Vec<_> = images.iter().map(|i| i.source.clone()).collect();
    let edited: Vec<_> = images.iter().map(|i| i.edited.clone()).collect();
    let examples = eval_examples(&records, &sources, &edited, &OverlapConfig::default()).unwrap();
    let params = PelicanParams::new(tiny_model(), 5).unwrap();
    let options = EvalOptions {
        generate: true,
        ..EvalOptions::default()
    };
    let render = || {
        let rows = evaluate("tiny", &params, &examples, &AblationConfig::full(), &options).unwrap();
        emit_report(&EvalReport {
            manifest: [("seed".to_string(), "5".to_string())].into(),
            rows,
            curves: Vec::new(),
        })
        .unwrap()
    };
    let a = render();
    assert_eq!(a, render());
    let mut lines = a.csv.lines();
    assert_eq!(
        lines.next(),
        Some("model,ablation_flags,qtype,n,accuracy,bleu4,perplexity")
    );
    let last = a.csv.lines().last().unwrap();
    assert!(last.starts_with("tiny,full,all,12,"), "{last}");
    assert!(a.table.starts_with("# seed: 5\n"));
}
