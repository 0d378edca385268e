use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Mean token cross-entropy and its gradient with respect to the logits.
#[derive(Debug, Clone)]
pub struct CrossEntropy {
    /// Mean negative log-likelihood over supervised positions.
    pub loss: f64,
    pub nll_sum: f64,
    pub count: usize,
    pub grad: Tensor,
}

/// Log-probabilities of one logit row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// `targets[i]` is the expected id at logit row `i`, or `None` for an
/// unsupervised position.
pub fn cross_entropy(logits: &Tensor, targets: &[Option<usize>]) -> Result<CrossEntropy> {
    let (rows, vocab) = logits.require_rank2("cross_entropy")?;
    if targets.len() != rows {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} targets for {rows} rows", targets.len()),
        ));
    }
    logits.ensure_finite("cross_entropy")?;
    let count = targets.iter().filter(|t| t.is_some()).count();
    if count == 0 {
        return Err(Error::NoSupervisedPositions);
    }
    let mut grad = Tensor::zeros(&[rows, vocab]);
    let mut nll_sum = 0.0;
    for (i, target) in targets.iter().enumerate() {
        let Some(t) = *target else { continue };
        if t >= vocab {
            return Err(Error::shape(
                "cross_entropy",
                format!("target {t} outside vocabulary {vocab}"),
            ));
        }
        let lp = log_softmax(logits.row(i));
        nll_sum -= lp[t];
        let g = grad.row_mut(i);
        for (gv, l) in g.iter_mut().zip(&lp) {
            *gv = l.exp() / count as f64;
        }
        g[t] -= 1.0 / count as f64;
    }
    Ok(CrossEntropy {
        loss: nll_sum / count as f64,
        nll_sum,
        count,
        grad,
    })
}
