use pelican::geometry::OverlapConfig;
use pelican::graph::{Priority, PriorityAssignment};
use pelican::model::{forward, perplexity, AblationConfig, BatchObjective, ModelConfig, PelicanInput, PelicanParams};
use pelican::nn::loss::log_softmax;
use pelican::nn::tokenizer::{Tokenizer, NO, VOCAB_SIZE, YES};
use pelican::nn::{grad_check, Adam, AdamConfig, Parameter, Tensor};
use pelican::synth;

const DIM: usize = 8;

fn config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        max_regions: 8,
        max_tokens: 64,
        feature_dim: DIM,
        ..ModelConfig::default()
    }
}

fn inputs(n: usize, seed: u64) -> Vec<PelicanInput> {
    let images = synth::synth_dataset(n, seed, DIM).unwrap();
    synth::synth_inputs(&images, &OverlapConfig::default(), true).unwrap()
}

/// Logits of every token position.
fn logits(input: &PelicanInput, params: &PelicanParams, ablation: &AblationConfig) -> Tensor {
    let fwd = forward(input, params, ablation).unwrap();
    pelican::model::forward::token_logits(&fwd, params, 0).unwrap()
}

fn close(a: &Tensor, b: &Tensor, tol: f64) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn gradients_match_central_differences_under_every_ablation() {
    let mut batch: Vec<PelicanInput> = inputs(2, 3);
    for input in &mut batch {
        input.target.as_mut().unwrap().truncate(3);
    }
    for ablation in [
        AblationConfig::full(),
        AblationConfig::without_priority_graph(),
        AblationConfig::without_source_image(),
        AblationConfig::cross_modal(),
        AblationConfig::text_only(),
    ] {
        let mut objective = BatchObjective {
            params: PelicanParams::new(config(), 9).unwrap(),
            batch: &batch,
            ablation,
        };
        let report = grad_check(&mut objective, 1e-5).unwrap();
        assert!(report.max_relative_error < 1e-4, "{ablation}: {report:?}");
        assert_eq!(report.checked, objective.params.parameter_count());
    }
}

#[test]
fn later_tokens_do_not_change_earlier_logits() {
    let params = PelicanParams::new(config(), 4).unwrap();
    let ablation = AblationConfig::full();
    let input = inputs(1, 4).remove(0);
    let base = logits(&input, &params, &ablation);
    let t = input.token_sequence().len();
    for changed in [t - 1, t - 3, input.sep_position() + 1] {
        let mut other = input.clone();
        // token_sequence = BOS question SEP target[..len-1]
        let target_pos = changed - input.sep_position() - 1;
        other.target.as_mut().unwrap()[target_pos] = b'#' as u32;
        let changed_logits = logits(&other, &params, &ablation);
        assert!(close(
            &base.slice_rows(0, changed),
            &changed_logits.slice_rows(0, changed),
            1e-12
        ));
        assert!(!close(
            &base.slice_rows(changed, t),
            &changed_logits.slice_rows(changed, t),
            1e-12
        ));
    }
}

#[test]
fn unreachable_regions_match_the_graph_free_model() {
    let params = PelicanParams::new(config(), 5).unwrap();
    let mut input = inputs(1, 5).remove(0);
    input.priorities = PriorityAssignment::unreachable(input.edited.len());
    let with_graph = logits(&input, &params, &AblationConfig::full());
    let without = logits(&input, &params, &AblationConfig::without_priority_graph());
    assert!(close(&with_graph, &without, 0.0));
}

#[test]
fn graph_free_model_ignores_priorities() {
    let params = PelicanParams::new(config(), 6).unwrap();
    let ablation = AblationConfig::without_priority_graph();
    let input = inputs(1, 6).remove(0);
    let mut shuffled = input.clone();
    shuffled.priorities.0.reverse();
    shuffled.priorities.0[0] = Priority::Rank(4);
    assert!(close(
        &logits(&input, &params, &ablation),
        &logits(&shuffled, &params, &ablation),
        0.0
    ));
    // The full model does see them.
    let full = AblationConfig::full();
    assert!(!close(
        &logits(&input, &params, &full),
        &logits(&shuffled, &params, &full),
        1e-12
    ));
}

#[test]
fn text_only_model_ignores_images() {
    let params = PelicanParams::new(config(), 7).unwrap();
    let ablation = AblationConfig::text_only();
    let mut all = inputs(2, 7);
    let b = all.pop().unwrap();
    let a = all.pop().unwrap();
    let mut swapped = a.clone();
    swapped.source = b.source.clone();
    swapped.edited = b.edited.clone();
    swapped.priorities = b.priorities.clone();
    assert!(close(
        &logits(&a, &params, &ablation),
        &logits(&swapped, &params, &ablation),
        0.0
    ));
}

#[test]
fn source_free_model_ignores_the_source_image() {
    let params = PelicanParams::new(config(), 8).unwrap();
    let ablation = AblationConfig::without_source_image();
    let mut all = inputs(2, 8);
    let b = all.pop().unwrap();
    let mut a = all.pop().unwrap();
    let base = logits(&a, &params, &ablation);
    a.source = b.source;
    assert!(close(&base, &logits(&a, &params, &ablation), 0.0));
}

#[test]
fn zero_head_gives_uniform_perplexity() {
    let mut params = PelicanParams::new(config(), 1).unwrap();
    params.token_embedding.value.fill(0.0);
    let ppl = perplexity(&params, &inputs(4, 1), &AblationConfig::full()).unwrap();
    assert!((ppl - VOCAB_SIZE as f64).abs() < 1e-9, "{ppl}");
}

#[test]
fn log_softmax_matches_the_definition() {
    let row = [1.0, -2.0, 0.5, 700.0, 699.0];
    let got = log_softmax(&row);
    // Shifted by the maximum so the exponentials stay finite.
    let m = 700.0;
    let z: f64 = row.iter().map(|v| f64::exp(v - m)).sum();
    for (g, v) in got.iter().zip(row) {
        assert!((g - (v - m - z.ln())).abs() < 1e-12);
    }
}

#[test]
fn first_adam_step_moves_by_the_learning_rate() {
    let mut p = Parameter::new("w", Tensor::from_vec(&[3], vec![1.0, -1.0, 0.5]).unwrap());
    p.grad = Tensor::from_vec(&[3], vec![0.3, -2.0, 0.0]).unwrap();
    let mut adam = Adam::new(AdamConfig::default());
    adam.step(&mut [&mut p], 0.1);
    // Bias-corrected moments give m/sqrt(v) = sign(g) on the first step.
    let expected = [1.0 - 0.1 * 0.3 / (0.3 + 1e-8), -1.0 + 0.1 * 2.0 / (2.0 + 1e-8), 0.5];
    for (w, e) in p.value.data().iter().zip(expected) {
        assert!((w - e).abs() < 1e-12);
    }
}

#[test]
fn tokenizer_round_trips_utf8_and_keeps_labels_distinct() {
    let text = "subject2 looks café-ready, subject3 not";
    let ids = Tokenizer.encode(text);
    assert_eq!(Tokenizer.decode(&ids), text);
    assert!(ids.iter().all(|&t| (t as usize) < VOCAB_SIZE));
    assert_ne!(YES, NO);
}
