use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{AblationConfig, ModelConfig};
use super::forward::{self, ExampleOutcome};
use super::input::{token_label, PelicanInput};
use super::params::PelicanParams;
use crate::data::BinaryLabel;
use crate::error::{Error, Result};
use crate::nn::tokenizer::{self, TokenId};
use crate::nn::{Adam, AdamConfig, Differentiable, Parameter};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of all steps spent in linear warm-up; the rate then decays
    /// linearly to zero.
    pub warmup_fraction: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            warmup_fraction: 0.1,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup fraction {} outside [0, 1)",
                self.warmup_fraction
            )));
        }
        Ok(())
    }

    fn rate_at(&self, step: usize, total: usize) -> f64 {
        let warmup = (self.warmup_fraction * total as f64).ceil() as usize;
        let base = self.learning_rate;
        if step < warmup {
            base * (step + 1) as f64 / warmup as f64
        } else {
            let remaining = (total - step) as f64 / (total - warmup).max(1) as f64;
            base * remaining
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean answer-token NLL over the epoch's training updates.
    pub loss: f64,
    pub accuracy: f64,
    pub perplexity: f64,
}

/// Per-epoch training log. Accuracy and perplexity are measured on the
/// evaluation set when one is given, otherwise on the running training
/// pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub tag: String,
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,accuracy,perplexity\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                e.epoch, e.loss, e.accuracy, e.perplexity
            ));
        }
        s
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Tally {
    nll: f64,
    tokens: usize,
    correct: usize,
    labelled: usize,
}

impl Tally {
    fn add(&mut self, o: &ExampleOutcome) {
        self.nll += o.nll_sum;
        self.tokens += o.count;
        if let Some(c) = o.label_correct {
            self.labelled += 1;
            self.correct += c as usize;
        }
    }

    fn loss(&self) -> f64 {
        self.nll / self.tokens.max(1) as f64
    }

    fn accuracy(&self) -> f64 {
        if self.labelled == 0 {
            0.0
        } else {
            self.correct as f64 / self.labelled as f64
        }
    }
}

/// Trains from a seeded initialization. Minibatches follow a seeded shuffle
/// each epoch and gradients are reduced in a fixed order, so equal inputs
/// give bit-identical parameters.
pub fn train(
    dataset: &[PelicanInput],
    eval_set: Option<&[PelicanInput]>,
    model: ModelConfig,
    config: &TrainConfig,
    ablation: &AblationConfig,
    seed: u64,
) -> Result<(PelicanParams, TrainLog)> {
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    config.validate()?;
    let mut params = PelicanParams::new(model, seed)?;
    let mut opt = Adam::new(config.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_da7a);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let batches_per_epoch = dataset.len().div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * config.epochs;
    let mut step = 0;
    let mut log = TrainLog {
        tag: ablation.to_string(),
        epochs: Vec::with_capacity(config.epochs),
    };

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut running = Tally::default();
        for batch in order.chunks(config.batch_size) {
            params.zero_grad();
            let tokens: usize = batch
                .iter()
                .map(|&i| dataset[i].target.as_ref().map_or(0, Vec::len))
                .sum();
            if tokens == 0 {
                return Err(Error::NoSupervisedPositions);
            }
            let weight = 1.0 / tokens as f64;
            for &i in batch {
                let o = forward::accumulate_gradients(&mut params, &dataset[i], ablation, weight)?;
                running.add(&o);
            }
            let lr = config.rate_at(step, total_steps);
            opt.step(&mut params.parameters_mut(), lr);
            step += 1;
        }
        let (accuracy, perplexity) = match eval_set {
            Some(eval) => {
                let t = tally(&params, eval, ablation)?;
                (t.accuracy(), t.loss().exp())
            }
            None => (running.accuracy(), running.loss().exp()),
        };
        log.epochs.push(EpochLog {
            epoch,
            loss: running.loss(),
            accuracy,
            perplexity,
        });
    }
    Ok((params, log))
}

fn tally(params: &PelicanParams, data: &[PelicanInput], ablation: &AblationConfig) -> Result<Tally> {
    let mut t = Tally::default();
    for input in data {
        t.add(&forward::score(params, input, ablation)?);
    }
    Ok(t)
}

/// `exp` of the mean answer-token NLL over a dataset.
pub fn perplexity(params: &PelicanParams, dataset: &[PelicanInput], ablation: &AblationConfig) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("perplexity dataset"));
    }
    Ok(tally(params, dataset, ablation)?.loss().exp())
}

/// Label accuracy (YES vs NO at the label position) over inputs with gold
/// labels.
pub fn label_accuracy(params: &PelicanParams, dataset: &[PelicanInput], ablation: &AblationConfig) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("accuracy dataset"));
    }
    Ok(tally(params, dataset, ablation)?.accuracy())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub label: BinaryLabel,
    /// Two-way softmax probability of YES over {YES, NO}.
    pub p_yes: f64,
}

/// Compares YES and NO logits at the first answer position.
pub fn classify_yes_no(
    input: &PelicanInput,
    params: &PelicanParams,
    ablation: &AblationConfig,
) -> Result<Classification> {
    let query = input.without_target();
    let fwd = forward::forward(&query, params, ablation)?;
    let logits = forward::next_token_logits(&fwd, params)?;
    Ok(classify_logits(&logits))
}

pub fn classify_logits(logits: &[f64]) -> Classification {
    let (yes, no) = (logits[tokenizer::YES as usize], logits[tokenizer::NO as usize]);
    let p_yes = 1.0 / (1.0 + (no - yes).exp());
    let label = token_label(forward::predicted_label(logits)).expect("YES or NO");
    Classification { label, p_yes }
}

/// Greedy decoding after `BOS question SEP prefix`. Returns the prefix
/// followed by at most `max_len` generated tokens, stopping before `EOS`.
pub fn generate(
    input: &PelicanInput,
    params: &PelicanParams,
    ablation: &AblationConfig,
    prefix: &[TokenId],
    max_len: usize,
) -> Result<Vec<TokenId>> {
    let context = input.question.len() + 2 + prefix.len();
    if context + max_len.saturating_sub(1) > params.config.max_tokens {
        return Err(Error::Overflow(format!(
            "generation of {max_len} tokens after {context} context tokens exceeds {} positions",
            params.config.max_tokens
        )));
    }
    let mut out = prefix.to_vec();
    let mut query = input.without_target();
    for _ in 0..max_len {
        // Feed the generated tokens through the target slot; its last entry
        // is never fed, so append a placeholder.
        let mut fed = out.clone();
        fed.push(tokenizer::EOS);
        query.target = Some(fed);
        let fwd = forward::forward(&query, params, ablation)?;
        let logits = forward::next_token_logits(&fwd, params)?;
        let next = argmax(&logits) as TokenId;
        if next == tokenizer::EOS {
            break;
        }
        out.push(next);
    }
    Ok(out)
}

/// The token-weighted mean answer NLL of a fixed batch as a function of the
/// model parameters, for gradient checking.
#[derive(Debug, Clone)]
pub struct BatchObjective<'a> {
    pub params: PelicanParams,
    pub batch: &'a [PelicanInput],
    pub ablation: AblationConfig,
}

impl BatchObjective<'_> {
    fn token_count(&self) -> Result<usize> {
        let n: usize = self.batch.iter().map(|i| i.target.as_ref().map_or(0, Vec::len)).sum();
        if n == 0 {
            return Err(Error::NoSupervisedPositions);
        }
        Ok(n)
    }
}

impl Differentiable for BatchObjective<'_> {
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.params.parameters_mut()
    }

    fn loss(&mut self) -> Result<f64> {
        let n = self.token_count()?;
        Ok(tally(&self.params, self.batch, &self.ablation)?.nll / n as f64)
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        let n = self.token_count()?;
        self.params.zero_grad();
        let mut nll = 0.0;
        for input in self.batch {
            nll += forward::accumulate_gradients(&mut self.params, input, &self.ablation, 1.0 / n as f64)?.nll_sum;
        }
        Ok(nll / n as f64)
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &x)| if x > best.1 { (i, x) } else { best },
        )
        .0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays() {
        let c = TrainConfig {
            learning_rate: 1.0,
            warmup_fraction: 0.1,
            ..TrainConfig::default()
        };
        assert!((c.rate_at(0, 100) - 0.1).abs() < 1e-12);
        assert!((c.rate_at(9, 100) - 1.0).abs() < 1e-12);
        assert!(c.rate_at(50, 100) < 1.0);
        assert!(c.rate_at(99, 100) > 0.0);
    }

    #[test]
    fn argmax_takes_first_maximum() {
        assert_eq!(argmax(&[0.0, 2.0, 2.0, 1.0]), 1);
    }

    #[test]
    fn equal_logits_classify_as_negative_at_half() {
        let c = classify_logits(&vec![0.0; tokenizer::VOCAB_SIZE]);
        assert_eq!(c.label, BinaryLabel::Negative);
        assert_eq!(c.p_yes, 0.5);
    }

    #[test]
    fn invalid_train_config() {
        assert!(TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            warmup_fraction: 1.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
    }
}
