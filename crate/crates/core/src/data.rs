//! Domain types for annotated image pairs and the newline-delimited
//! annotation format, plus dataset splitting and statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash;

/// Most subjects a single image may carry.
pub const MAX_SUBJECTS: usize = 3;

/// Axis-aligned box in image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let coords = [self.x1, self.y1, self.x2, self.y2];
        if coords.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::invalid(
                "bbox",
                format!("{self}: coordinates must be finite and >= 0"),
            ));
        }
        if !(self.x1 < self.x2 && self.y1 < self.y2) {
            return Err(Error::invalid("bbox", format!("{self}: requires x1 < x2 and y1 < y2")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x1, self.y1, self.x2, self.y2)
    }
}

impl Serialize for BBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [x1, y1, x2, y2] = <[f64; 4]>::deserialize(d)?;
        BBox::new(x1, y1, x2, y2).map_err(serde::de::Error::custom)
    }
}

/// How an edit changed a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EditLabel {
    #[default]
    None,
    Introduced,
    Altered,
    Missing,
}

impl EditLabel {
    pub const ALL: [EditLabel; 4] = [
        EditLabel::None,
        EditLabel::Introduced,
        EditLabel::Altered,
        EditLabel::Missing,
    ];

    /// Wire code used by the binary feature format.
    pub fn code(self) -> u8 {
        match self {
            EditLabel::None => 0,
            EditLabel::Introduced => 1,
            EditLabel::Altered => 2,
            EditLabel::Missing => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        EditLabel::ALL.get(code as usize).copied()
    }

    /// Whether the label belongs to the edit taxonomy (anything but `None`).
    pub fn is_edit(self) -> bool {
        self != EditLabel::None
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EditLabel::None => "none",
            EditLabel::Introduced => "introduced",
            EditLabel::Altered => "altered",
            EditLabel::Missing => "missing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub index: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub is_subject: bool,
    pub edit_label: EditLabel,
    #[serde(rename = "class", default, skip_serializing_if = "Option::is_none")]
    pub detector_class: Option<String>,
}

impl Region {
    pub fn new(index: usize, bbox: BBox, is_subject: bool, edit_label: EditLabel) -> Self {
        Region {
            index,
            bbox,
            is_subject,
            edit_label,
            detector_class: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    Intent,
    Implication,
    Disinformation,
    SubjectImplication,
    SubjectEmotion,
}

impl QuestionType {
    pub const ALL: [QuestionType; 5] = [
        QuestionType::Intent,
        QuestionType::Implication,
        QuestionType::Disinformation,
        QuestionType::SubjectImplication,
        QuestionType::SubjectEmotion,
    ];

    pub fn requires_subject(self) -> bool {
        matches!(self, QuestionType::SubjectImplication | QuestionType::SubjectEmotion)
    }

    pub fn tag(self) -> &'static str {
        match self {
            QuestionType::Intent => "intent",
            QuestionType::Implication => "implication",
            QuestionType::Disinformation => "disinformation",
            QuestionType::SubjectImplication => "subject_implication",
            QuestionType::SubjectEmotion => "subject_emotion",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        QuestionType::ALL.into_iter().find(|q| q.tag() == tag)
    }

    /// Canonical question wording. Subject-specific types mention
    /// `subject{k}` for the 1-based subject ordinal `k`.
    pub fn question_text(self, subject_ordinal: Option<usize>) -> String {
        let subject = format!("subject{}", subject_ordinal.unwrap_or(1));
        match self {
            QuestionType::Intent => "Why would someone create this edit?".to_string(),
            QuestionType::Implication => "What are the potential implications of this edit?".to_string(),
            QuestionType::Disinformation => {
                "If the edit was portrayed as real news, how might it mislead the viewer?".to_string()
            }
            QuestionType::SubjectImplication => {
                format!("How could this edit mislead public perception of {subject}?")
            }
            QuestionType::SubjectEmotion => format!("How might this image edit make {subject} feel?"),
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryLabel {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Question {
    pub qtype: QuestionType,
    pub subject_index: Option<usize>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Answer {
    pub label: BinaryLabel,
    pub text: String,
    pub rationale: String,
}

impl Answer {
    /// Free-text response joined with its rationale, the way annotators
    /// separate them.
    pub fn full_text(&self) -> String {
        if self.text.is_empty() {
            self.rationale.clone()
        } else {
            format!("{} because {}", self.text, self.rationale)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaPair {
    pub question: Question,
    pub answer: Answer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub source_path: String,
    pub edited_path: String,
    pub regions: Vec<Region>,
    pub source_region_count: usize,
    pub qa: Vec<QaPair>,
}

impl AnnotationRecord {
    pub fn subject_count(&self) -> usize {
        self.regions.iter().filter(|r| r.is_subject).count()
    }

    /// 1-based ordinal of a subject region among the image's subjects.
    pub fn subject_ordinal(&self, region_index: usize) -> Option<usize> {
        self.regions
            .iter()
            .filter(|r| r.is_subject)
            .position(|r| r.index == region_index)
            .map(|p| p + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let id = self.image_id.as_str();
        if id.is_empty() {
            return Err(Error::invalid("<unnamed>", "empty image_id"));
        }
        for (pos, region) in self.regions.iter().enumerate() {
            if region.index != pos {
                return Err(Error::invalid(
                    id,
                    format!(
                        "region at position {pos} has index {}; indices must be 0-based ordinals",
                        region.index
                    ),
                ));
            }
            region
                .bbox
                .validate()
                .map_err(|e| Error::invalid(id, format!("region {pos}: {e}")))?;
        }
        let subjects = self.subject_count();
        if subjects > MAX_SUBJECTS {
            return Err(Error::invalid(
                id,
                format!("{subjects} subjects; at most {MAX_SUBJECTS} allowed"),
            ));
        }
        for (k, pair) in self.qa.iter().enumerate() {
            let q = &pair.question;
            match (q.qtype.requires_subject(), q.subject_index) {
                (true, None) => {
                    return Err(Error::invalid(
                        id,
                        format!("qa {k}: {} requires a subject_index", q.qtype),
                    ))
                }
                (false, Some(_)) => {
                    return Err(Error::invalid(
                        id,
                        format!("qa {k}: {} forbids a subject_index", q.qtype),
                    ))
                }
                (true, Some(s)) => match self.regions.get(s) {
                    Some(r) if r.is_subject => {}
                    _ => return Err(Error::invalid(id, format!("qa {k}: unresolved subject {s}"))),
                },
                (false, None) => {}
            }
            if pair.answer.rationale.trim().is_empty() {
                return Err(Error::invalid(id, format!("qa {k}: empty rationale")));
            }
        }
        Ok(())
    }
}

// Wire representation of one annotation line.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordWire {
    image_id: String,
    source_path: String,
    edited_path: String,
    regions: Vec<Region>,
    #[serde(default, skip_serializing_if = "is_zero")]
    source_region_count: usize,
    qa: Vec<QaWire>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QaWire {
    #[serde(rename = "type")]
    qtype: QuestionType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subject_index: Option<usize>,
    question: String,
    label: BinaryLabel,
    answer: String,
    rationale: String,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

impl From<RecordWire> for AnnotationRecord {
    fn from(w: RecordWire) -> Self {
        AnnotationRecord {
            image_id: w.image_id,
            source_path: w.source_path,
            edited_path: w.edited_path,
            regions: w.regions,
            source_region_count: w.source_region_count,
            qa: w
                .qa
                .into_iter()
                .map(|q| QaPair {
                    question: Question {
                        qtype: q.qtype,
                        subject_index: q.subject_index,
                        text: q.question,
                    },
                    answer: Answer {
                        label: q.label,
                        text: q.answer,
                        rationale: q.rationale,
                    },
                })
                .collect(),
        }
    }
}

impl From<&AnnotationRecord> for RecordWire {
    fn from(r: &AnnotationRecord) -> Self {
        RecordWire {
            image_id: r.image_id.clone(),
            source_path: r.source_path.clone(),
            edited_path: r.edited_path.clone(),
            regions: r.regions.clone(),
            source_region_count: r.source_region_count,
            qa: r
                .qa
                .iter()
                .map(|p| QaWire {
                    qtype: p.question.qtype,
                    subject_index: p.question.subject_index,
                    question: p.question.text.clone(),
                    label: p.answer.label,
                    answer: p.answer.text.clone(),
                    rationale: p.answer.rationale.clone(),
                })
                .collect(),
        }
    }
}

/// Parses a newline-delimited annotation stream. Blank lines are skipped;
/// line numbers in errors are 1-based.
pub fn parse_annotations(stream: &[u8]) -> Result<Vec<AnnotationRecord>> {
    let text = std::str::from_utf8(stream).map_err(|e| {
        let line = stream[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        Error::Malformed {
            line,
            message: "invalid UTF-8".into(),
        }
    })?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let wire: RecordWire = serde_json::from_str(line).map_err(|e| Error::Malformed {
            line: n + 1,
            message: e.to_string(),
        })?;
        let record = AnnotationRecord::from(wire);
        record.validate()?;
        out.push(record);
    }
    Ok(out)
}

/// Canonical encoding: one compact JSON object per line, fields in schema
/// order, trailing newline after every record.
pub fn serialize_annotations(records: &[AnnotationRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, &RecordWire::from(r)).expect("in-memory JSON encoding cannot fail");
        out.push(b'\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const STANDARD: SplitRatios = SplitRatios {
        train: 0.8,
        val: 0.1,
        test: 0.1,
    };

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Config(format!("split ratios must be positive, got {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<AnnotationRecord>,
    pub val: Vec<AnnotationRecord>,
    pub test: Vec<AnnotationRecord>,
}

/// Partitions records at the image level. Image ids are ordered by a
/// seeded hash and cut at the ratio boundaries, so the assignment does not
/// depend on input order. Records keep their input order within a split.
pub fn split_dataset(records: &[AnnotationRecord], ratios: SplitRatios, seed: u64) -> Result<Splits> {
    ratios.validate()?;
    let ids: BTreeSet<&str> = records.iter().map(|r| r.image_id.as_str()).collect();
    let mut keyed: Vec<(u64, &str)> = ids
        .into_iter()
        .map(|id| (hash::mix(&[seed, hash::fnv1a(id.as_bytes())]), id))
        .collect();
    keyed.sort_unstable();

    let n = keyed.len();
    let n_train = ((n as f64) * ratios.train).round() as usize;
    let n_val = (((n as f64) * ratios.val).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);

    let assignment: HashMap<&str, usize> = keyed
        .iter()
        .enumerate()
        .map(|(rank, (_, id))| {
            let bucket = if rank < n_train {
                0
            } else if rank < n_train + n_val {
                1
            } else {
                2
            };
            (*id, bucket)
        })
        .collect();

    let mut splits = Splits::default();
    for r in records {
        match assignment[r.image_id.as_str()] {
            0 => splits.train.push(r.clone()),
            1 => splits.val.push(r.clone()),
            _ => splits.test.push(r.clone()),
        }
    }
    Ok(splits)
}

/// Fraction of questions of each type. All five types are present in the
/// result; an input without questions yields zeros.
pub fn question_type_distribution(records: &[AnnotationRecord]) -> BTreeMap<QuestionType, f64> {
    let mut counts: BTreeMap<QuestionType, usize> = QuestionType::ALL.iter().map(|&q| (q, 0)).collect();
    for pair in records.iter().flat_map(|r| &r.qa) {
        *counts.get_mut(&pair.question.qtype).expect("all types present") += 1;
    }
    let total: usize = counts.values().sum();
    counts
        .into_iter()
        .map(|(q, c)| (q, if total == 0 { 0.0 } else { c as f64 / total as f64 }))
        .collect()
}
