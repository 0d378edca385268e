//! Forward and backward kernels for the dense operations the transformer
//! needs. Each backward function maps the output gradient to input (and
//! parameter) gradients for the matching forward call.

use super::tensor::Tensor;
use crate::error::{Error, Result};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

/// `a · b` for `a: [m, k]`, `b: [k, n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.require_rank2("matmul")?;
    let (k2, n) = b.require_rank2("matmul")?;
    if k != k2 {
        return Err(Error::shape("matmul", format!("[{m}, {k}] · [{k2}, {n}]")));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.require_rank2("matmul_nt")?;
    let (n, k2) = b.require_rank2("matmul_nt")?;
    if k != k2 {
        return Err(Error::shape("matmul_nt", format!("[{m}, {k}] · [{n}, {k2}]ᵀ")));
    }
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..n {
            out.push(dot(arow, b.row(j)));
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// `aᵀ · b` for `a: [k, m]`, `b: [k, n]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = a.require_rank2("matmul_tn")?;
    let (k2, n) = b.require_rank2("matmul_tn")?;
    if k != k2 {
        return Err(Error::shape("matmul_tn", format!("[{k}, {m}]ᵀ · [{k2}, {n}]")));
    }
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let arow = a.row(p);
        let brow = b.row(p);
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_vec(&[m, n], out)
}

pub fn matmul_backward(a: &Tensor, b: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((matmul_nt(dy, b)?, matmul_tn(a, dy)?))
}

pub fn matmul_nt_backward(a: &Tensor, b: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((matmul(dy, b)?, matmul_tn(dy, a)?))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut out = a.clone();
    out.add_assign(b)?;
    Ok(out)
}

/// Adds a bias vector to every row of a matrix.
pub fn add_row(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (r, c) = x.require_rank2("add_row")?;
    if bias.len() != c {
        return Err(Error::shape(
            "add_row",
            format!("bias of {} for {c} columns", bias.len()),
        ));
    }
    let mut out = x.clone();
    for i in 0..r {
        out.row_mut(i).iter_mut().zip(bias.data()).for_each(|(o, b)| *o += b);
    }
    Ok(out)
}

/// Column sums; the gradient of a row-broadcast bias.
pub fn sum_rows(dy: &Tensor) -> Tensor {
    let c = dy.cols();
    let mut out = Tensor::zeros(&[c]);
    for i in 0..dy.rows() {
        out.data_mut().iter_mut().zip(dy.row(i)).for_each(|(o, v)| *o += v);
    }
    out
}

/// Tanh-approximated GELU.
pub fn gelu(x: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_K * v * v * v)).tanh()))
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

pub fn gelu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| {
            let t = (GELU_C * (v + GELU_K * v * v * v)).tanh();
            let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * v * v);
            g * (0.5 * (1.0 + t) + 0.5 * v * dt)
        })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Numerically stable softmax of `row[..limit]`; entries past `limit` are 0.
pub fn softmax_prefix(row: &mut [f64], limit: usize) {
    let (live, dead) = row.split_at_mut(limit);
    dead.iter_mut().for_each(|v| *v = 0.0);
    if live.is_empty() {
        return;
    }
    let max = live.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in live.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    live.iter_mut().for_each(|v| *v /= sum);
}

pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    x.ensure_finite("softmax")?;
    x.require_rank2("softmax")?;
    let mut y = x.clone();
    let c = y.cols();
    for i in 0..y.rows() {
        softmax_prefix(y.row_mut(i), c);
    }
    Ok(y)
}

/// Given softmax output `y` and upstream `dy`, returns `dx`. Masked entries
/// (where `y` is 0) receive zero gradient.
pub fn softmax_rows_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(y.shape());
    for i in 0..y.rows() {
        let (yr, gr) = (y.row(i), dy.row(i));
        let s = dot(yr, gr);
        dx.row_mut(i)
            .iter_mut()
            .zip(yr.iter().zip(gr))
            .for_each(|(d, (yv, gv))| *d = yv * (gv - s));
    }
    dx
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Intermediate values kept from a layer-norm forward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
}

/// Row-wise normalization followed by the affine map `γ ⊙ x̂ + β`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(Tensor, LayerNormCache)> {
    let (r, c) = x.require_rank2("layer_norm")?;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(
            "layer_norm",
            format!("affine of {} for width {c}", gamma.len()),
        ));
    }
    x.ensure_finite("layer_norm")?;
    let mut xhat = Tensor::zeros(&[r, c]);
    let mut y = Tensor::zeros(&[r, c]);
    let mut inv_std = Vec::with_capacity(r);
    for i in 0..r {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(is);
        for (j, &v) in row.iter().enumerate() {
            let h = (v - mean) * is;
            xhat.row_mut(i)[j] = h;
            y.row_mut(i)[j] = h * gamma.data()[j] + beta.data()[j];
        }
    }
    Ok((y, LayerNormCache { xhat, inv_std }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward(cache: &LayerNormCache, gamma: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (r, c) = (dy.rows(), dy.cols());
    let mut dx = Tensor::zeros(&[r, c]);
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    let mut dxhat = vec![0.0; c];
    for i in 0..r {
        let (g, h) = (dy.row(i), cache.xhat.row(i));
        for j in 0..c {
            dgamma.data_mut()[j] += g[j] * h[j];
            dbeta.data_mut()[j] += g[j];
            dxhat[j] = g[j] * gamma.data()[j];
        }
        let mean_d = dxhat.iter().sum::<f64>() / c as f64;
        let mean_dh = dot(&dxhat, h) / c as f64;
        let is = cache.inv_std[i];
        for (j, d) in dx.row_mut(i).iter_mut().enumerate() {
            *d = is * (dxhat[j] - mean_d - h[j] * mean_dh);
        }
    }
    (dx, dgamma, dbeta)
}
