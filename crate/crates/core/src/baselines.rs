//! Reference systems: nearest-neighbour answer retrieval over pooled region
//! features, a text-only language model and a cross-modal prefix model.
//! The two language models are the main model under ablation flags.

use crate::data::{AnnotationRecord, BBox, EditLabel, QaPair, Region};
use crate::error::{Error, Result};
use crate::features::{self, FeatureTable};
use crate::model::{train, AblationConfig, ModelConfig, PelicanInput, PelicanParams, TrainConfig, TrainLog};
use crate::nn::ops::dot;

/// Mean of the table's region rows.
pub fn pool_features(t: &FeatureTable) -> Result<Vec<f64>> {
    if t.is_empty() {
        return Err(Error::Empty("feature table"));
    }
    let mut mean = vec![0.0; t.dim];
    for i in 0..t.len() {
        for (m, &v) in mean.iter_mut().zip(t.row(i)) {
            *m += v;
        }
    }
    let n = t.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexRow {
    pub image_id: String,
    pub vector: Vec<f64>,
    pub answers: Vec<QaPair>,
}

/// Pooled edited-image vectors of the training images with their answers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievalIndex {
    rows: Vec<IndexRow>,
    norms: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub row: usize,
    pub cosine: f64,
}

impl RetrievalIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> &[IndexRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.rows.first().map(|r| r.vector.len())
    }

    /// Adds a row. Zero vectors have no direction and are skipped; the
    /// return value says whether the row was kept.
    pub fn insert(&mut self, image_id: impl Into<String>, vector: Vec<f64>, answers: Vec<QaPair>) -> Result<bool> {
        if let Some(d) = self.dim() {
            if vector.len() != d {
                return Err(Error::shape(
                    "retrieval index",
                    format!("vector of dimension {} in an index of dimension {d}", vector.len()),
                ));
            }
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("retrieval vector"));
        }
        let norm = dot(&vector, &vector).sqrt();
        if norm == 0.0 {
            return Ok(false);
        }
        self.rows.push(IndexRow {
            image_id: image_id.into(),
            vector,
            answers,
        });
        self.norms.push(norm);
        Ok(true)
    }

    /// Index over the pooled edited features of each record.
    pub fn build(records: &[AnnotationRecord], edited: &[FeatureTable]) -> Result<Self> {
        if records.len() != edited.len() {
            return Err(Error::SizeMismatch(format!(
                "{} records but {} feature tables",
                records.len(),
                edited.len()
            )));
        }
        let mut index = RetrievalIndex::new();
        for (r, t) in records.iter().zip(edited) {
            index.insert(r.image_id.clone(), pool_features(t)?, r.qa.clone())?;
        }
        Ok(index)
    }

    /// Highest cosine similarity; the earliest inserted row wins ties.
    pub fn nearest(&self, query: &[f64]) -> Result<Hit> {
        let d = self.dim().ok_or(Error::Empty("retrieval index"))?;
        if query.len() != d {
            return Err(Error::shape(
                "retrieval query",
                format!("query of dimension {} against an index of dimension {d}", query.len()),
            ));
        }
        let qn = dot(query, query).sqrt();
        let mut best = Hit {
            row: 0,
            cosine: f64::NEG_INFINITY,
        };
        for (i, (row, &n)) in self.rows.iter().zip(&self.norms).enumerate() {
            let c = if qn == 0.0 {
                0.0
            } else {
                dot(query, &row.vector) / (qn * n)
            };
            if c > best.cosine {
                best = Hit { row: i, cosine: c };
            }
        }
        Ok(best)
    }

    /// Rows as an EMUF table (one unit-box region per image, in insertion
    /// order) plus the answers as annotation records.
    pub fn to_parts(&self) -> (Vec<u8>, Vec<AnnotationRecord>) {
        let d = self.dim().unwrap_or(0);
        let unit = BBox::new(0.0, 0.0, 1.0, 1.0).expect("unit box");
        let regions = (0..self.len())
            .map(|i| Region::new(i, unit, false, EditLabel::None))
            .collect();
        let table = FeatureTable {
            image_id: String::new(),
            regions,
            features: self.rows.iter().flat_map(|r| r.vector.iter().copied()).collect(),
            dim: d,
        };
        let records = self
            .rows
            .iter()
            .map(|r| AnnotationRecord {
                image_id: r.image_id.clone(),
                source_path: String::new(),
                edited_path: String::new(),
                regions: Vec::new(),
                source_region_count: 0,
                qa: r.answers.clone(),
            })
            .collect();
        (features::write_features(&table), records)
    }

    pub fn from_parts(table_bytes: &[u8], records: &[AnnotationRecord]) -> Result<Self> {
        let table = features::read_features(table_bytes)?;
        if table.len() != records.len() {
            return Err(Error::SizeMismatch(format!(
                "index table has {} rows, answer file {}",
                table.len(),
                records.len()
            )));
        }
        let mut index = RetrievalIndex::new();
        for (i, r) in records.iter().enumerate() {
            if !index.insert(r.image_id.clone(), table.row(i).to_vec(), r.qa.clone())? {
                return Err(Error::invalid(&r.image_id, "zero vector in a stored index"));
            }
        }
        Ok(index)
    }
}

/// Answers of the most similar indexed image.
pub fn retrieval_predict<'a>(query: &[f64], index: &'a RetrievalIndex) -> Result<&'a IndexRow> {
    let hit = index.nearest(query)?;
    Ok(&index.rows[hit.row])
}

/// The model with both region blocks removed: a language model over the
/// question alone.
pub fn text_only_lm(
    train_set: &[PelicanInput],
    model: ModelConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<(PelicanParams, TrainLog)> {
    train(train_set, None, model, config, &AblationConfig::text_only(), seed)
}

/// Regions as a flat prefix without priorities or edit labels, with the
/// subject's region vector appended for subject questions.
pub fn cross_modal_lm(
    train_set: &[PelicanInput],
    model: ModelConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<(PelicanParams, TrainLog)> {
    train(train_set, None, model, config, &AblationConfig::cross_modal(), seed)
}
