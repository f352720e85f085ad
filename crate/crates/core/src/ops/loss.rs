use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Row-wise softmax of `[N, K]` logits, computed with the max-shift trick.
pub fn softmax_rows<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let &[_, k] = logits.shape() else {
        return Err(Error::shape(format!(
            "softmax expects [N, K], got {:?}",
            logits.shape()
        )));
    };
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| T::from_f64(e / z)));
    }
    Ok(Tensor::from_parts_unchecked(logits.shape().to_vec(), out))
}

/// Mean over the batch of `-log softmax(logits)[label]`. Also returns the
/// softmax probabilities, which the backward pass reuses.
pub fn softmax_cross_entropy<T: Real>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(Tensor<T>, Tensor<T>)> {
    let probs = softmax_rows(logits)?;
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::shape(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::data(format!("label {bad} outside [0, {k})")));
    }
    let mut total = 0.0f64;
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
        total += lse - row[label].as_f64();
    }
    Ok((Tensor::scalar(T::from_f64(total / n as f64)), probs))
}

/// Mean over all elements of `(pred - target)^2`.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "mse: pred {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let total = pred
        .data()
        .iter()
        .zip(target.data())
        .fold(0.0f64, |a, (&p, &t)| {
            let d = (p - t).as_f64();
            a + d * d
        });
    Ok(Tensor::scalar(T::from_f64(total / pred.len() as f64)))
}
