//! Embedding, the masked transformer pass, the tied language-model head and
//! the matching backward pass.
//!
//! The sequence is laid out as
//!
//! ```text
//! [source regions] [edited regions] [appended subject region] [tokens]
//! ```
//!
//! Region rows attend to every region row and never to tokens. Token rows
//! attend to every region row and causally to tokens.

use super::config::AblationConfig;
use super::input::PelicanInput;
use super::params::PelicanParams;
use crate::error::{Error, Result};
use crate::graph::Priority;
use crate::nn::layers::{AttentionMask, BlockCache};
use crate::nn::loss::cross_entropy;
use crate::nn::ops::{self, LayerNormCache};
use crate::nn::tokenizer::{self, TokenId};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub source: usize,
    pub edited: usize,
    pub appended: usize,
    pub tokens: usize,
}

impl Layout {
    pub fn regions(&self) -> usize {
        self.source + self.edited + self.appended
    }

    pub fn len(&self) -> usize {
        self.regions() + self.tokens
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mask(&self) -> AttentionMask {
        let r = self.regions();
        AttentionMask::from_limits((0..self.len()).map(|i| if i < r { r } else { i + 1 }).collect())
    }
}

/// The embedded input sequence plus what backward needs to route gradients
/// to embedding tables.
#[derive(Debug, Clone)]
pub struct Embedded {
    pub x: Tensor,
    pub layout: Layout,
    /// Feature rows of every region row, in sequence order.
    region_features: Tensor,
    /// Priority rank added to each edited row, if any.
    priority_rows: Vec<Option<usize>>,
    /// Edit-label row added to each edited row, if any.
    label_rows: Vec<Option<usize>>,
    token_ids: Vec<TokenId>,
}

impl Embedded {
    pub fn token_ids(&self) -> &[TokenId] {
        &self.token_ids
    }
}

pub fn embed_inputs(input: &PelicanInput, params: &PelicanParams, ablation: &AblationConfig) -> Result<Embedded> {
    let cfg = &params.config;
    let d = cfg.d_model;
    let tokens = input.token_sequence();
    if tokens.len() > cfg.max_tokens {
        return Err(Error::Overflow(format!(
            "token overflow: {} tokens, model allows {}",
            tokens.len(),
            cfg.max_tokens
        )));
    }
    if let Some(&t) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::Overflow(format!("token id {t} outside vocabulary")));
    }
    if let Some(&t) = input.target.iter().flatten().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::Overflow(format!("target id {t} outside vocabulary")));
    }
    for (name, table) in [("source", &input.source), ("edited", &input.edited)] {
        if table.len() > cfg.max_regions {
            return Err(Error::Overflow(format!(
                "region overflow: {} {name} regions, model allows {}",
                table.len(),
                cfg.max_regions
            )));
        }
        if !table.is_empty() && table.dim != cfg.feature_dim {
            return Err(Error::shape(
                "embed_inputs",
                format!(
                    "{name} features have dimension {}, model expects {}",
                    table.dim, cfg.feature_dim
                ),
            ));
        }
    }
    if input.priorities.len() != input.edited.len() {
        return Err(Error::invalid(
            &input.edited.image_id,
            format!(
                "{} priorities for {} edited regions",
                input.priorities.len(),
                input.edited.len()
            ),
        ));
    }

    let n_src = if ablation.use_source_image {
        input.source.len()
    } else {
        0
    };
    let n_edit = if ablation.use_edited_image {
        input.edited.len()
    } else {
        0
    };
    let appended_row = if ablation.append_subject_region {
        input.subject_region.filter(|&s| s < input.edited.len())
    } else {
        None
    };
    let layout = Layout {
        source: n_src,
        edited: n_edit,
        appended: appended_row.is_some() as usize,
        tokens: tokens.len(),
    };

    let mut feats = Vec::with_capacity(layout.regions() * cfg.feature_dim);
    for i in 0..n_src {
        feats.extend_from_slice(input.source.row(i));
    }
    for i in 0..n_edit {
        feats.extend_from_slice(input.edited.row(i));
    }
    if let Some(s) = appended_row {
        feats.extend_from_slice(input.edited.row(s));
    }
    let region_features = Tensor::from_vec(&[layout.regions(), cfg.feature_dim], feats)?;
    region_features.ensure_finite("region features")?;

    let mut x = Tensor::zeros(&[layout.len(), d]);
    if layout.regions() > 0 {
        let projected = params.feature_proj.forward(&region_features)?;
        for i in 0..layout.regions() {
            x.row_mut(i).copy_from_slice(projected.row(i));
        }
    }
    let add = |x: &mut Tensor, row: usize, table: &Tensor, k: usize| {
        x.row_mut(row).iter_mut().zip(table.row(k)).for_each(|(a, b)| *a += b);
    };
    for i in 0..n_src {
        add(&mut x, i, &params.source_marker.value, 0);
    }
    let mut priority_rows = Vec::with_capacity(n_edit);
    let mut label_rows = Vec::with_capacity(n_edit);
    for i in 0..n_edit {
        let row = n_src + i;
        add(&mut x, row, &params.region_position.value, i);
        let rank = match input.priorities.get(i) {
            Priority::Rank(k) if ablation.use_priority_graph => Some(k),
            _ => None,
        };
        if let Some(k) = rank {
            if k >= cfg.max_regions {
                return Err(Error::Overflow(format!(
                    "priority rank {k} exceeds table of {}",
                    cfg.max_regions
                )));
            }
            add(&mut x, row, &params.priority.value, k);
        }
        let label = ablation
            .use_annotated_features
            .then(|| input.edited.regions[i].edit_label.code() as usize);
        if let Some(l) = label {
            add(&mut x, row, &params.edit_label.value, l);
        }
        priority_rows.push(rank);
        label_rows.push(label);
    }
    let r = layout.regions();
    for (t, &id) in tokens.iter().enumerate() {
        add(&mut x, r + t, &params.token_embedding.value, id as usize);
        add(&mut x, r + t, &params.token_position.value, t);
    }
    x.ensure_finite("embed_inputs")?;

    Ok(Embedded {
        x,
        layout,
        region_features,
        priority_rows,
        label_rows,
        token_ids: tokens,
    })
}

/// Result of a full forward pass, kept for backward.
#[derive(Debug, Clone)]
pub struct Forward {
    pub embedded: Embedded,
    block_caches: Vec<BlockCache>,
    final_cache: LayerNormCache,
    /// Final hidden states for every sequence position.
    pub z: Tensor,
}

impl Forward {
    pub fn layout(&self) -> Layout {
        self.embedded.layout
    }

    /// Hidden states of the token positions.
    pub fn language_states(&self) -> Tensor {
        let l = self.layout();
        self.z.slice_rows(l.regions(), l.len())
    }

    pub fn block_cache(&self, layer: usize) -> &BlockCache {
        &self.block_caches[layer]
    }
}

pub fn forward(input: &PelicanInput, params: &PelicanParams, ablation: &AblationConfig) -> Result<Forward> {
    let embedded = embed_inputs(input, params, ablation)?;
    let mask = embedded.layout.mask();
    let mut h = embedded.x.clone();
    let mut block_caches = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let (next, cache) = block.forward(&h, &mask)?;
        block_caches.push(cache);
        h = next;
    }
    let (z, final_cache) = params.final_ln.forward(&h)?;
    z.ensure_finite("forward")?;
    Ok(Forward {
        embedded,
        block_caches,
        final_cache,
        z,
    })
}

/// Logits for token positions `from..` (relative to the first token).
pub fn token_logits(fwd: &Forward, params: &PelicanParams, from: usize) -> Result<Tensor> {
    let l = fwd.layout();
    let states = fwd.z.slice_rows(l.regions() + from, l.len());
    ops::matmul_nt(&states, &params.token_embedding.value)
}

/// Logits for the token following the last token position.
pub fn next_token_logits(fwd: &Forward, params: &PelicanParams) -> Result<Vec<f64>> {
    let l = fwd.layout();
    if l.tokens == 0 {
        return Err(Error::Empty("token positions"));
    }
    Ok(token_logits(fwd, params, l.tokens - 1)?.row(0).to_vec())
}

/// Routes `dlogits` for token positions `from..` back into parameter
/// gradients.
pub fn backward(params: &mut PelicanParams, fwd: &Forward, from: usize, dlogits: &Tensor) -> Result<()> {
    let l = fwd.layout();
    let start = l.regions() + from;
    let states = fwd.z.slice_rows(start, l.len());
    let (dstates, dtable) = ops::matmul_nt_backward(&states, &params.token_embedding.value, dlogits)?;
    params.token_embedding.grad.add_assign(&dtable)?;

    let mut dz = Tensor::zeros(fwd.z.shape());
    for i in 0..dstates.rows() {
        dz.row_mut(start + i).copy_from_slice(dstates.row(i));
    }
    let mut dh = params.final_ln.backward(&fwd.final_cache, &dz)?;
    for (block, cache) in params.blocks.iter_mut().zip(&fwd.block_caches).rev() {
        dh = block.backward(cache, &dh)?;
    }
    embed_backward(params, &fwd.embedded, &dh)
}

fn embed_backward(params: &mut PelicanParams, emb: &Embedded, dx: &Tensor) -> Result<()> {
    let l = emb.layout;
    let accumulate = |table: &mut Tensor, k: usize, g: &[f64]| {
        table.row_mut(k).iter_mut().zip(g).for_each(|(a, b)| *a += b);
    };
    if l.regions() > 0 {
        let dproj = dx.slice_rows(0, l.regions());
        params.feature_proj.backward(&emb.region_features, &dproj)?;
    }
    for i in 0..l.source {
        accumulate(&mut params.source_marker.grad, 0, dx.row(i));
    }
    for i in 0..l.edited {
        let g = dx.row(l.source + i);
        accumulate(&mut params.region_position.grad, i, g);
        if let Some(k) = emb.priority_rows[i] {
            accumulate(&mut params.priority.grad, k, g);
        }
        if let Some(c) = emb.label_rows[i] {
            accumulate(&mut params.edit_label.grad, c, g);
        }
    }
    let r = l.regions();
    for (t, &id) in emb.token_ids.iter().enumerate() {
        let g = dx.row(r + t);
        accumulate(&mut params.token_embedding.grad, id as usize, g);
        accumulate(&mut params.token_position.grad, t, g);
    }
    Ok(())
}

/// Per-example loss statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleOutcome {
    pub nll_sum: f64,
    pub count: usize,
    /// Whether YES-vs-NO at the label position matched the gold label.
    pub label_correct: Option<bool>,
}

/// YES if its logit is strictly larger than NO's; ties go to NO.
pub fn predicted_label(logits: &[f64]) -> TokenId {
    if logits[tokenizer::YES as usize] > logits[tokenizer::NO as usize] {
        tokenizer::YES
    } else {
        tokenizer::NO
    }
}

fn supervised(input: &PelicanInput) -> Result<(&[TokenId], usize)> {
    let target = input.target.as_deref().ok_or(Error::NoSupervisedPositions)?;
    if target.is_empty() {
        return Err(Error::NoSupervisedPositions);
    }
    Ok((target, input.sep_position()))
}

fn outcome(input: &PelicanInput, logits: &Tensor, nll_sum: f64, count: usize) -> ExampleOutcome {
    let label_correct = input.gold_label().map(|gold| predicted_label(logits.row(0)) == gold);
    ExampleOutcome {
        nll_sum,
        count,
        label_correct,
    }
}

/// Loss statistics without touching gradients.
pub fn score(params: &PelicanParams, input: &PelicanInput, ablation: &AblationConfig) -> Result<ExampleOutcome> {
    let (target, sep) = supervised(input)?;
    let fwd = forward(input, params, ablation)?;
    let logits = token_logits(&fwd, params, sep)?;
    let targets: Vec<Option<usize>> = target.iter().map(|&t| Some(t as usize)).collect();
    let ce = cross_entropy(&logits, &targets)?;
    Ok(outcome(input, &logits, ce.nll_sum, ce.count))
}

/// Adds the gradient of `weight × (summed answer-token NLL)` to the
/// parameters' gradient buffers.
pub fn accumulate_gradients(
    params: &mut PelicanParams,
    input: &PelicanInput,
    ablation: &AblationConfig,
    weight: f64,
) -> Result<ExampleOutcome> {
    let (target, sep) = supervised(input)?;
    let fwd = forward(input, params, ablation)?;
    let logits = token_logits(&fwd, params, sep)?;
    let targets: Vec<Option<usize>> = target.iter().map(|&t| Some(t as usize)).collect();
    let ce = cross_entropy(&logits, &targets)?;
    let mut dlogits = ce.grad;
    let scale = weight * ce.count as f64;
    dlogits.data_mut().iter_mut().for_each(|g| *g *= scale);
    backward(params, &fwd, sep, &dlogits)?;
    Ok(outcome(input, &logits, ce.nll_sum, ce.count))
}
