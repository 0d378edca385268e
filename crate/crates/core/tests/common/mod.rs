#![allow(dead_code)]

use pelican::data::{AnnotationRecord, Answer, BBox, BinaryLabel, EditLabel, QaPair, Question, QuestionType, Region};
use rand::Rng;

pub fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
    BBox::new(x1, y1, x2, y2).unwrap()
}

/// Counts unit cells covered by each box on an integer grid.
pub fn raster_iou(a: [i64; 4], b: [i64; 4]) -> f64 {
    let inside = |r: [i64; 4], x: i64, y: i64| x >= r[0] && x < r[2] && y >= r[1] && y < r[3];
    let (mut inter, mut union) = (0u64, 0u64);
    for x in 0..=64 {
        for y in 0..=64 {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
    }
    inter as f64 / union as f64
}

pub fn int_box<R: Rng>(rng: &mut R) -> [i64; 4] {
    let x1 = rng.gen_range(0..63);
    let y1 = rng.gen_range(0..63);
    [x1, y1, rng.gen_range(x1 + 1..=64), rng.gen_range(y1 + 1..=64)]
}

pub fn to_bbox(r: [i64; 4]) -> BBox {
    bx(r[0] as f64, r[1] as f64, r[2] as f64, r[3] as f64)
}

pub fn random_box<R: Rng>(rng: &mut R, frame: f64) -> BBox {
    let x1 = rng.gen_range(0.0..frame - 1.0);
    let y1 = rng.gen_range(0.0..frame - 1.0);
    let x2 = rng.gen_range(x1 + 0.5..frame);
    let y2 = rng.gen_range(y1 + 0.5..frame);
    bx(x1, y1, x2, y2)
}

pub fn random_regions<R: Rng>(rng: &mut R, n: usize) -> Vec<Region> {
    let mut subjects = 0;
    (0..n)
        .map(|i| {
            let subject = subjects < 3 && rng.gen_bool(0.2);
            subjects += subject as usize;
            let label = EditLabel::ALL[rng.gen_range(0..4)];
            Region::new(i, random_box(rng, 100.0), subject, label)
        })
        .collect()
}

pub fn question(qtype: QuestionType, subject_index: Option<usize>, ordinal: Option<usize>) -> Question {
    Question {
        qtype,
        subject_index,
        text: qtype.question_text(ordinal),
    }
}

pub fn qa(
    qtype: QuestionType,
    subject_index: Option<usize>,
    label: BinaryLabel,
    answer: &str,
    rationale: &str,
) -> QaPair {
    QaPair {
        question: question(qtype, subject_index, subject_index.map(|_| 1)),
        answer: Answer {
            label,
            text: answer.to_string(),
            rationale: rationale.to_string(),
        },
    }
}

/// Subject A, introduced B overlapping it with IoU 1/7, unlabeled C far away.
pub fn three_region_record() -> AnnotationRecord {
    AnnotationRecord {
        image_id: "fixture-abc".into(),
        source_path: "fixture/abc_source.png".into(),
        edited_path: "fixture/abc_edited.png".into(),
        regions: vec![
            Region::new(0, bx(0.0, 0.0, 2.0, 2.0), true, EditLabel::None),
            Region::new(1, bx(1.0, 1.0, 3.0, 3.0), false, EditLabel::Introduced),
            Region::new(2, bx(10.0, 10.0, 12.0, 12.0), false, EditLabel::None),
        ],
        source_region_count: 2,
        qa: vec![qa(
            QuestionType::SubjectEmotion,
            Some(0),
            BinaryLabel::Negative,
            "embarrassed",
            "an object was added next to subject1",
        )],
    }
}

/// 999 questions over 200 images in the proportions of the dataset's
/// question-type table: 215 intent, 221 implication, 89 disinformation,
/// 158 subject-implication and 316 subject-emotion questions. The published
/// percentages sum to 99.9.
pub fn table_one_records() -> Vec<AnnotationRecord> {
    let counts = [
        (QuestionType::Intent, 215),
        (QuestionType::Implication, 221),
        (QuestionType::Disinformation, 89),
        (QuestionType::SubjectImplication, 158),
        (QuestionType::SubjectEmotion, 316),
    ];
    let mut pool: Vec<QuestionType> = counts.iter().flat_map(|&(q, n)| std::iter::repeat_n(q, n)).collect();
    let mut records = Vec::new();
    let mut i = 0;
    while !pool.is_empty() {
        let take: Vec<QuestionType> = pool.drain(..pool.len().min(5)).collect();
        let qa = take
            .iter()
            .enumerate()
            .map(|(k, &q)| {
                let label = if (i + k) % 2 == 0 {
                    BinaryLabel::Positive
                } else {
                    BinaryLabel::Negative
                };
                let subject = q.requires_subject().then_some(0);
                self::qa(q, subject, label, "it changes the story", "the scene was edited")
            })
            .collect();
        records.push(AnnotationRecord {
            image_id: format!("t1-{i:04}"),
            source_path: format!("t1/{i}_s.png"),
            edited_path: format!("t1/{i}_e.png"),
            regions: vec![
                Region::new(0, bx(0.0, 0.0, 10.0, 10.0), true, EditLabel::None),
                Region::new(1, bx(5.0, 5.0, 20.0, 20.0), false, EditLabel::Altered),
            ],
            source_region_count: 2,
            qa,
        });
        i += 1;
    }
    records
}
