use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    /// `(1/(B·M))·Σ(y − t)²` with `M` the output feature count.
    #[serde(rename = "mse")]
    Mse,
    /// Mean over the batch of `−Σ t·log softmax(y)`; targets are one-hot or
    /// any probability rows.
    #[serde(rename = "cross_entropy", alias = "softmax_cross_entropy")]
    SoftmaxCrossEntropy,
}

impl Loss {
    pub fn value_and_grad(self, y: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
        y.expect_same_shape(target)?;
        let batch = y.dims()[0];
        let width = y.len() / batch;
        match self {
            Loss::Mse => {
                let scale = 1.0 / (batch * width) as f64;
                let diff = y.sub(target)?;
                let loss = diff.data().iter().map(|d| d * d).sum::<f64>() * scale;
                Ok((loss, diff.scale(2.0 * scale)))
            }
            Loss::SoftmaxCrossEntropy => {
                if y.rank() != 2 {
                    return Err(Error::InvalidArgument(format!(
                        "cross-entropy expects (B, C) logits, got {:?}",
                        y.dims()
                    )));
                }
                let mut grad = vec![0.0; y.len()];
                let mut loss = 0.0;
                for ((logits, t), g) in y
                    .data()
                    .chunks_exact(width)
                    .zip(target.data().chunks_exact(width))
                    .zip(grad.chunks_exact_mut(width))
                {
                    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let sum_exp: f64 = logits.iter().map(|v| (v - max).exp()).sum();
                    let log_z = max + sum_exp.ln();
                    let t_sum: f64 = t.iter().sum();
                    for ((gi, &li), &ti) in g.iter_mut().zip(logits).zip(t) {
                        loss -= ti * (li - log_z);
                        *gi = ((li - log_z).exp() * t_sum - ti) / batch as f64;
                    }
                }
                Ok((loss / batch as f64, Tensor::from_vec(y.dims(), grad)?))
            }
        }
    }
}

/// Fraction of rows whose argmax matches the target's argmax.
pub(crate) fn accuracy(y: &Tensor, target: &Tensor) -> f64 {
    let batch = y.dims()[0];
    let width = y.len() / batch;
    let argmax = |row: &[f64]| {
        row.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                if v > best.1 {
                    (i, v)
                } else {
                    best
                }
            })
            .0
    };
    let hits = y
        .data()
        .chunks_exact(width)
        .zip(target.data().chunks_exact(width))
        .filter(|(a, b)| argmax(a) == argmax(b))
        .count();
    hits as f64 / batch as f64
}
