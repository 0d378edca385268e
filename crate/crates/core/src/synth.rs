//! A synthetic edit-reasoning task whose answer depends on region priority.
//!
//! Every edited image holds a subject region (the graph seed), three
//! candidates overlapping it with distinct IoUs and one disjoint candidate.
//! Two candidates are introduced and two altered, so label counts carry no
//! signal. The answer is NO when the highest-priority candidate (the one
//! with the largest IoU against the subject) was introduced and YES when it
//! was altered. Question types alternate and labels alternate within each
//! type, so every question type is exactly balanced.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{AnnotationRecord, Answer, BBox, BinaryLabel, EditLabel, QaPair, Question, QuestionType, Region};
use crate::error::{Error, Result};
use crate::features::{synth_features, FeatureTable};
use crate::geometry::{iou, OverlapConfig};
use crate::graph;
use crate::hash;
use crate::model::{build_input, PelicanInput};

pub const FRAME: f64 = 100.0;
/// IoU range of the overlapping candidates.
pub const CANDIDATE_IOU: (f64, f64) = (0.12, 0.7);
/// Smallest IoU gap between overlapping candidates.
pub const IOU_SPACING: f64 = 0.03;
pub const QUESTION_TYPES: [QuestionType; 2] = [QuestionType::Intent, QuestionType::SubjectEmotion];

const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub record: AnnotationRecord,
    pub source: FeatureTable,
    pub edited: FeatureTable,
}

/// Rationale wording for each question type and label.
pub fn rationale(qtype: QuestionType, label: BinaryLabel) -> &'static str {
    match (qtype, label) {
        (QuestionType::SubjectEmotion, BinaryLabel::Positive) => "subject1 feels altered",
        (QuestionType::SubjectEmotion, BinaryLabel::Negative) => "subject1 feels added",
        (_, BinaryLabel::Positive) => "made to alter an object",
        (_, BinaryLabel::Negative) => "made to add an object",
    }
}

fn clamped_box(w: f64, h: f64, cx: f64, cy: f64) -> Option<BBox> {
    let x1 = (cx - w / 2.0).clamp(0.0, FRAME - w);
    let y1 = (cy - h / 2.0).clamp(0.0, FRAME - h);
    BBox::new(x1, y1, x1 + w, y1 + h).ok()
}

fn overlapping_candidate(rng: &mut ChaCha8Rng, seed: &BBox, taken: &[f64]) -> Result<(BBox, f64)> {
    let (cx, cy) = ((seed.x1 + seed.x2) / 2.0, (seed.y1 + seed.y2) / 2.0);
    for _ in 0..MAX_ATTEMPTS {
        let w = seed.width() * rng.gen_range(0.5..1.5);
        let h = seed.height() * rng.gen_range(0.5..1.5);
        let dx = rng.gen_range(-1.0..1.0) * seed.width();
        let dy = rng.gen_range(-1.0..1.0) * seed.height();
        let Some(b) = clamped_box(w, h, cx + dx, cy + dy) else {
            continue;
        };
        let v = iou(seed, &b);
        if (CANDIDATE_IOU.0..=CANDIDATE_IOU.1).contains(&v) && taken.iter().all(|t| (t - v).abs() >= IOU_SPACING) {
            return Ok((b, v));
        }
    }
    Err(Error::Invariant("could not place an overlapping candidate".into()))
}

fn disjoint_candidate(rng: &mut ChaCha8Rng, seed: &BBox) -> Result<BBox> {
    for _ in 0..MAX_ATTEMPTS {
        let w = rng.gen_range(10.0..30.0);
        let h = rng.gen_range(10.0..30.0);
        let cx = rng.gen_range(0.0..FRAME);
        let cy = rng.gen_range(0.0..FRAME);
        let Some(b) = clamped_box(w, h, cx, cy) else { continue };
        if iou(seed, &b) == 0.0 {
            return Ok(b);
        }
    }
    Err(Error::Invariant("could not place a disjoint candidate".into()))
}

/// Generates image `i` of the dataset seeded by `seed`.
pub fn synth_image(i: usize, seed: u64, feature_dim: usize) -> Result<SynthImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(hash::mix(&[seed, i as u64]));
    let qtype = QUESTION_TYPES[i % QUESTION_TYPES.len()];
    let label = if (i / QUESTION_TYPES.len()).is_multiple_of(2) {
        BinaryLabel::Positive
    } else {
        BinaryLabel::Negative
    };

    let (w, h) = (rng.gen_range(20.0..40.0), rng.gen_range(20.0..40.0));
    let seed_box = BBox::new(0.0, 0.0, w, h)?.translate(rng.gen_range(0.0..FRAME - w), rng.gen_range(0.0..FRAME - h));
    let mut overlapping: Vec<(BBox, f64)> = Vec::with_capacity(3);
    for _ in 0..3 {
        let taken: Vec<f64> = overlapping.iter().map(|c| c.1).collect();
        overlapping.push(overlapping_candidate(&mut rng, &seed_box, &taken)?);
    }
    overlapping.sort_by(|a, b| b.1.total_cmp(&a.1));
    let disjoint = disjoint_candidate(&mut rng, &seed_box)?;

    let top = match label {
        BinaryLabel::Positive => EditLabel::Altered,
        BinaryLabel::Negative => EditLabel::Introduced,
    };
    let mut rest = vec![
        EditLabel::Introduced,
        EditLabel::Introduced,
        EditLabel::Altered,
        EditLabel::Altered,
    ];
    let pos = rest.iter().position(|&l| l == top).expect("label present");
    rest.remove(pos);
    rest.shuffle(&mut rng);

    let mut regions = vec![
        Region::new(0, seed_box, true, EditLabel::None),
        Region::new(0, overlapping[0].0, false, top),
    ];
    let others = overlapping[1..].iter().map(|c| c.0).chain([disjoint]);
    regions.extend(others.zip(rest).map(|(b, l)| Region::new(0, b, false, l)));
    regions.shuffle(&mut rng);
    for (k, r) in regions.iter_mut().enumerate() {
        r.index = k;
    }
    let subject = regions.iter().position(|r| r.is_subject).expect("subject present");

    let image_id = format!("synth-{i:05}");
    let question = Question {
        qtype,
        subject_index: qtype.requires_subject().then_some(subject),
        text: qtype.question_text(Some(1)),
    };
    let record = AnnotationRecord {
        image_id: image_id.clone(),
        source_path: format!("synth/{image_id}_source.png"),
        edited_path: format!("synth/{image_id}_edited.png"),
        source_region_count: 0,
        qa: vec![QaPair {
            question,
            answer: Answer {
                label,
                text: String::new(),
                rationale: rationale(qtype, label).to_string(),
            },
        }],
        regions,
    };
    record.validate()?;

    let mut source_regions: Vec<Region> = record
        .regions
        .iter()
        .filter(|r| r.edit_label != EditLabel::Introduced)
        .cloned()
        .collect();
    for (k, r) in source_regions.iter_mut().enumerate() {
        r.index = k;
        r.edit_label = EditLabel::None;
    }
    let feature_seed = hash::mix(&[seed, i as u64, 1]);
    let mut source = synth_features(&source_regions, feature_seed, feature_dim)?;
    source.image_id = image_id.clone();
    let mut edited = synth_features(&record.regions, feature_seed ^ 0xed17, feature_dim)?;
    edited.image_id = image_id;
    let mut record = record;
    record.source_region_count = source.len();
    Ok(SynthImage { record, source, edited })
}

pub fn synth_dataset(images: usize, seed: u64, feature_dim: usize) -> Result<Vec<SynthImage>> {
    (0..images).map(|i| synth_image(i, seed, feature_dim)).collect()
}

/// Label implied by the priority graph: the answer is NO exactly when the
/// rank-1 region was introduced.
pub fn priority_label(image: &SynthImage, overlap: &OverlapConfig) -> Result<BinaryLabel> {
    let question = &image.record.qa[0].question;
    let (_, priorities) = graph::prioritize(&image.record.regions, question, overlap)?;
    let top = priorities
        .region_at(1)
        .ok_or_else(|| Error::Invariant(format!("{}: no rank-1 region", image.record.image_id)))?;
    Ok(match image.record.regions[top].edit_label {
        EditLabel::Introduced => BinaryLabel::Negative,
        _ => BinaryLabel::Positive,
    })
}

/// Model inputs for every question of every image.
pub fn synth_inputs(images: &[SynthImage], overlap: &OverlapConfig, with_target: bool) -> Result<Vec<PelicanInput>> {
    let mut out = Vec::with_capacity(images.len());
    for img in images {
        for pair in &img.record.qa {
            out.push(build_input(
                &img.record,
                pair,
                &img.source,
                &img.edited,
                overlap,
                with_target,
            )?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gold_label_matches_priority_graph() {
        let cfg = OverlapConfig::default();
        for img in synth_dataset(64, 3, 16).unwrap() {
            assert_eq!(priority_label(&img, &cfg).unwrap(), img.record.qa[0].answer.label);
        }
    }

    #[test]
    fn balanced_per_question_type() {
        let data = synth_dataset(40, 9, 16).unwrap();
        for q in QUESTION_TYPES {
            let of_type: Vec<_> = data.iter().filter(|d| d.record.qa[0].question.qtype == q).collect();
            let yes = of_type
                .iter()
                .filter(|d| d.record.qa[0].answer.label == BinaryLabel::Positive)
                .count();
            assert_eq!(2 * yes, of_type.len());
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(synth_image(5, 1, 16).unwrap(), synth_image(5, 1, 16).unwrap());
        assert_ne!(synth_image(5, 1, 16).unwrap(), synth_image(5, 2, 16).unwrap());
    }
}
