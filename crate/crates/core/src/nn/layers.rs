//! Trainable layers with cached forward passes and explicit backward passes.
//! Backward calls accumulate into the parameters' gradient buffers.

use rand::Rng;

use super::ops::{self, LayerNormCache};
use super::tensor::{Parameter, Tensor};
use crate::error::{Error, Result};

pub const INIT_STD: f64 = 0.02;

/// Per-query-row attention limits: row `i` attends keys `0..limits[i]`.
/// Every mask used by the model is a prefix mask of this form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    limits: Vec<usize>,
}

impl AttentionMask {
    pub fn full(queries: usize, keys: usize) -> Self {
        AttentionMask {
            limits: vec![keys; queries],
        }
    }

    pub fn causal(n: usize) -> Self {
        AttentionMask {
            limits: (1..=n).collect(),
        }
    }

    pub fn from_limits(limits: Vec<usize>) -> Self {
        AttentionMask { limits }
    }

    pub fn limit(&self, row: usize) -> usize {
        self.limits[row]
    }

    pub fn len(&self) -> usize {
        self.limits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.limits.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    pub fn new<R: Rng>(name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        Linear {
            weight: Parameter::new(format!("{name}.weight"), Tensor::randn(&[input, output], INIT_STD, rng)),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[output])),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::add_row(&ops::matmul(x, &self.weight.value)?, &self.bias.value)
    }

    /// Returns the input gradient.
    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        let (dx, dw) = ops::matmul_backward(x, &self.weight.value, dy)?;
        self.weight.grad.add_assign(&dw)?;
        self.bias.grad.add_assign(&ops::sum_rows(dy))?;
        Ok(dx)
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
}

impl LayerNorm {
    pub fn new(name: &str, width: usize) -> Self {
        let mut ones = Tensor::zeros(&[width]);
        ones.fill(1.0);
        LayerNorm {
            gamma: Parameter::new(format!("{name}.gamma"), ones),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(&[width])),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, LayerNormCache)> {
        ops::layer_norm(x, &self.gamma.value, &self.beta.value)
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Tensor) -> Result<Tensor> {
        let (dx, dg, db) = ops::layer_norm_backward(cache, &self.gamma.value, dy);
        self.gamma.grad.add_assign(&dg)?;
        self.beta.grad.add_assign(&db)?;
        Ok(dx)
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.gamma, &self.beta]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Position-wise feed-forward network: `fc2(gelu(fc1(x)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    x: Tensor,
    pre: Tensor,
    act: Tensor,
}

impl Mlp {
    pub fn new<R: Rng>(name: &str, width: usize, hidden: usize, rng: &mut R) -> Self {
        Mlp {
            fc1: Linear::new(&format!("{name}.fc1"), width, hidden, rng),
            fc2: Linear::new(&format!("{name}.fc2"), hidden, width, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, MlpCache)> {
        let pre = self.fc1.forward(x)?;
        let act = ops::gelu(&pre);
        let y = self.fc2.forward(&act)?;
        Ok((y, MlpCache { x: x.clone(), pre, act }))
    }

    pub fn backward(&mut self, cache: &MlpCache, dy: &Tensor) -> Result<Tensor> {
        let dact = self.fc2.backward(&cache.act, dy)?;
        let dpre = ops::gelu_backward(&cache.pre, &dact);
        self.fc1.backward(&cache.x, &dpre)
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        [self.fc1.parameters(), self.fc2.parameters()].concat()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.fc1.parameters_mut();
        v.extend(self.fc2.parameters_mut());
        v
    }
}

/// Scaled dot-product attention with `heads` heads and separate query and
/// key/value inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    q_in: Tensor,
    kv_in: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Attention weights per head, `[queries, keys]` each.
    probs: Vec<Tensor>,
    concat: Tensor,
    mask: AttentionMask,
}

impl AttentionCache {
    pub fn weights(&self, head: usize) -> &Tensor {
        &self.probs[head]
    }
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(name: &str, width: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::Config(format!("width {width} not divisible into {heads} heads")));
        }
        Ok(MultiHeadAttention {
            heads,
            wq: Linear::new(&format!("{name}.wq"), width, width, rng),
            wk: Linear::new(&format!("{name}.wk"), width, width, rng),
            wv: Linear::new(&format!("{name}.wv"), width, width, rng),
            wo: Linear::new(&format!("{name}.wo"), width, width, rng),
        })
    }

    fn head_dim(&self) -> usize {
        self.wq.weight.value.cols() / self.heads
    }

    pub fn forward(&self, q_in: &Tensor, kv_in: &Tensor, mask: &AttentionMask) -> Result<(Tensor, AttentionCache)> {
        let (tq, _) = q_in.require_rank2("attention")?;
        let (tk, _) = kv_in.require_rank2("attention")?;
        if mask.len() != tq || (0..tq).any(|i| mask.limit(i) > tk || mask.limit(i) == 0) {
            return Err(Error::shape(
                "attention",
                format!("mask does not fit {tq} queries over {tk} keys"),
            ));
        }
        let q = self.wq.forward(q_in)?;
        let k = self.wk.forward(kv_in)?;
        let v = self.wv.forward(kv_in)?;
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut concat = Tensor::zeros(&[tq, dh * self.heads]);
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = (
                q.slice_cols(h * dh, (h + 1) * dh),
                k.slice_cols(h * dh, (h + 1) * dh),
                v.slice_cols(h * dh, (h + 1) * dh),
            );
            let mut p = ops::matmul_nt(&qh, &kh)?;
            for i in 0..tq {
                let row = p.row_mut(i);
                row.iter_mut().for_each(|s| *s *= scale);
                ops::softmax_prefix(row, mask.limit(i));
            }
            concat.set_cols(h * dh, &ops::matmul(&p, &vh)?);
            probs.push(p);
        }
        let out = self.wo.forward(&concat)?;
        Ok((
            out,
            AttentionCache {
                q_in: q_in.clone(),
                kv_in: kv_in.clone(),
                q,
                k,
                v,
                probs,
                concat,
                mask: mask.clone(),
            },
        ))
    }

    /// Returns `(d q_in, d kv_in)`.
    pub fn backward(&mut self, cache: &AttentionCache, dy: &Tensor) -> Result<(Tensor, Tensor)> {
        let dconcat = self.wo.backward(&cache.concat, dy)?;
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Tensor::zeros(cache.q.shape());
        let mut dk = Tensor::zeros(cache.k.shape());
        let mut dv = Tensor::zeros(cache.v.shape());
        for h in 0..self.heads {
            let cols = h * dh..(h + 1) * dh;
            let (qh, kh, vh) = (
                cache.q.slice_cols(cols.start, cols.end),
                cache.k.slice_cols(cols.start, cols.end),
                cache.v.slice_cols(cols.start, cols.end),
            );
            let doh = dconcat.slice_cols(cols.start, cols.end);
            let p = &cache.probs[h];
            let (dp, dvh) = ops::matmul_backward(p, &vh, &doh)?;
            let mut ds = ops::softmax_rows_backward(p, &dp);
            for i in 0..ds.rows() {
                let lim = cache.mask.limit(i);
                ds.row_mut(i)[lim..].iter_mut().for_each(|v| *v = 0.0);
                ds.row_mut(i).iter_mut().for_each(|v| *v *= scale);
            }
            let (dqh, dkh) = ops::matmul_nt_backward(&qh, &kh, &ds)?;
            dq.set_cols(cols.start, &dqh);
            dk.set_cols(cols.start, &dkh);
            dv.set_cols(cols.start, &dvh);
        }
        let dq_in = self.wq.backward(&cache.q_in, &dq)?;
        let mut dkv_in = self.wk.backward(&cache.kv_in, &dk)?;
        dkv_in.add_assign(&self.wv.backward(&cache.kv_in, &dv)?)?;
        Ok((dq_in, dkv_in))
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        [
            self.wq.parameters(),
            self.wk.parameters(),
            self.wv.parameters(),
            self.wo.parameters(),
        ]
        .concat()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.wq.parameters_mut();
        v.extend(self.wk.parameters_mut());
        v.extend(self.wv.parameters_mut());
        v.extend(self.wo.parameters_mut());
        v
    }
}

/// Pre-norm transformer block:
///
/// ```text
/// x ─┬─ LN ─ self-attention ─(+)─┬─ LN ─ MLP ─(+)─ y
///    └───────────────────────┘   └────────────┘
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    ln1: LayerNormCache,
    pub attn: AttentionCache,
    ln2: LayerNormCache,
    mlp: MlpCache,
}

impl Block {
    pub fn new<R: Rng>(name: &str, width: usize, heads: usize, rng: &mut R) -> Result<Self> {
        Ok(Block {
            ln1: LayerNorm::new(&format!("{name}.ln1"), width),
            attn: MultiHeadAttention::new(&format!("{name}.attn"), width, heads, rng)?,
            ln2: LayerNorm::new(&format!("{name}.ln2"), width),
            mlp: Mlp::new(&format!("{name}.mlp"), width, 4 * width, rng),
        })
    }

    pub fn forward(&self, x: &Tensor, mask: &AttentionMask) -> Result<(Tensor, BlockCache)> {
        let (h1, ln1) = self.ln1.forward(x)?;
        let (a, attn) = self.attn.forward(&h1, &h1, mask)?;
        let x1 = ops::add(x, &a)?;
        let (h2, ln2) = self.ln2.forward(&x1)?;
        let (m, mlp) = self.mlp.forward(&h2)?;
        let y = ops::add(&x1, &m)?;
        Ok((y, BlockCache { ln1, attn, ln2, mlp }))
    }

    pub fn backward(&mut self, cache: &BlockCache, dy: &Tensor) -> Result<Tensor> {
        let dh2 = self.mlp.backward(&cache.mlp, dy)?;
        let mut dx1 = self.ln2.backward(&cache.ln2, &dh2)?;
        dx1.add_assign(dy)?;
        let (dq, dkv) = self.attn.backward(&cache.attn, &dx1)?;
        let dh1 = ops::add(&dq, &dkv)?;
        let mut dx = self.ln1.backward(&cache.ln1, &dh1)?;
        dx.add_assign(&dx1)?;
        Ok(dx)
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        [
            self.ln1.parameters(),
            self.attn.parameters(),
            self.ln2.parameters(),
            self.mlp.parameters(),
        ]
        .concat()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.ln1.parameters_mut();
        v.extend(self.attn.parameters_mut());
        v.extend(self.ln2.parameters_mut());
        v.extend(self.mlp.parameters_mut());
        v
    }
}
