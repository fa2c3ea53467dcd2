//! Mean squared error and softmax cross-entropy with their gradients.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `L = mean((pred - target)^2)` over all `B * n` entries.
pub fn loss_mse(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() || pred.ndim() != 2 {
        return Err(Error::Shape(format!(
            "mse of {:?} against {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let count = pred.len() as f64;
    let diff = pred.sub(target)?;
    let loss = diff.data().iter().fold(0.0, |a, &d| a + d * d) / count;
    Ok((loss, diff.scale(2.0 / count)))
}

/// Log-softmax of one row, shifted by its maximum.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|&v| v - lse).collect()
}

/// Cross-entropy of one logit row against `label`.
pub fn cross_entropy(row: &[f64], label: usize) -> Result<f64> {
    if label >= row.len() {
        return Err(Error::Range(format!("label {label} outside 0..{}", row.len())));
    }
    Ok(-log_softmax(row)[label])
}

/// Batch mean of `-log softmax(logits)[label]`.
pub fn loss_softmax_ce(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::Shape(format!(
            "logits {s:?} against {} labels",
            labels.len()
        )));
    }
    let (b, n) = (s[0], s[1]);
    if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
        return Err(Error::Range(format!("label {bad} outside 0..{n}")));
    }
    let mut grad = Vec::with_capacity(b * n);
    let mut total = 0.0;
    for (row, &label) in logits.data().chunks_exact(n).zip(labels) {
        let ls = log_softmax(row);
        total -= ls[label];
        for (j, &l) in ls.iter().enumerate() {
            let p = l.exp();
            grad.push((p - if j == label { 1.0 } else { 0.0 }) / b as f64);
        }
    }
    Ok((total / b as f64, Tensor::from_vec(s, grad)?))
}
