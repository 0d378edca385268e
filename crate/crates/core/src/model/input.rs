use crate::data::{AnnotationRecord, BinaryLabel, QaPair};
use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::geometry::OverlapConfig;
use crate::graph::{self, PriorityAssignment};
use crate::nn::tokenizer::{self, TokenId, Tokenizer};

/// One model input: both region tables, the edited-region priorities, the
/// question and (for training and scoring) the answer.
#[derive(Debug, Clone, PartialEq)]
pub struct PelicanInput {
    pub source: FeatureTable,
    pub edited: FeatureTable,
    pub priorities: PriorityAssignment,
    /// Question tokens, without `BOS`/`SEP`.
    pub question: Vec<TokenId>,
    /// Edited-region index of the question's subject, if any.
    pub subject_region: Option<usize>,
    /// Answer tokens: label token, answer text, `EOS`.
    pub target: Option<Vec<TokenId>>,
}

impl PelicanInput {
    /// Position of `SEP` in the token sequence; the answer's first token is
    /// predicted there.
    pub fn sep_position(&self) -> usize {
        self.question.len() + 1
    }

    /// Tokens fed to the model: `BOS question SEP` followed by all target
    /// tokens except the last.
    pub fn token_sequence(&self) -> Vec<TokenId> {
        let mut seq = Vec::with_capacity(self.question.len() + 2 + self.target.as_ref().map_or(0, Vec::len));
        seq.push(tokenizer::BOS);
        seq.extend_from_slice(&self.question);
        seq.push(tokenizer::SEP);
        if let Some(t) = &self.target {
            if let Some((_, init)) = t.split_last() {
                seq.extend_from_slice(init);
            }
        }
        seq
    }

    /// Gold label token, if the target starts with one.
    pub fn gold_label(&self) -> Option<TokenId> {
        self.target
            .as_ref()
            .and_then(|t| t.first().copied())
            .filter(|&t| t == tokenizer::YES || t == tokenizer::NO)
    }

    pub fn without_target(&self) -> PelicanInput {
        PelicanInput {
            target: None,
            ..self.clone()
        }
    }
}

pub fn label_token(label: BinaryLabel) -> TokenId {
    match label {
        BinaryLabel::Positive => tokenizer::YES,
        BinaryLabel::Negative => tokenizer::NO,
    }
}

pub fn token_label(token: TokenId) -> Option<BinaryLabel> {
    match token {
        tokenizer::YES => Some(BinaryLabel::Positive),
        tokenizer::NO => Some(BinaryLabel::Negative),
        _ => None,
    }
}

/// Answer tokens for a labelled answer text.
pub fn answer_tokens(label: BinaryLabel, text: &str) -> Vec<TokenId> {
    let mut t = vec![label_token(label)];
    t.extend(Tokenizer.encode(text));
    t.push(tokenizer::EOS);
    t
}

/// Assembles the input for one question of a record. The edited table's
/// region metadata must match the record's regions.
pub fn build_input(
    record: &AnnotationRecord,
    pair: &QaPair,
    source: &FeatureTable,
    edited: &FeatureTable,
    overlap: &OverlapConfig,
    with_target: bool,
) -> Result<PelicanInput> {
    if edited.regions.len() != record.regions.len() {
        return Err(Error::invalid(
            &record.image_id,
            format!(
                "edited feature table has {} regions, annotation has {}",
                edited.regions.len(),
                record.regions.len()
            ),
        ));
    }
    let (_, priorities) = graph::prioritize(&record.regions, &pair.question, overlap)?;
    let mut edited = edited.clone();
    edited.regions = record.regions.clone();
    Ok(PelicanInput {
        source: source.clone(),
        edited,
        priorities,
        question: Tokenizer.encode(&pair.question.text),
        subject_region: pair.question.subject_index,
        target: with_target.then(|| answer_tokens(pair.answer.label, &pair.answer.full_text())),
    })
}
