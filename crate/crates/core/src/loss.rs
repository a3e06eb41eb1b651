use crate::error::{invalid, Result};
use crate::linalg::Vector;
use crate::scalar::Scalar;

/// Softmax cross-entropy against a class index.
///
/// Returns `-ln softmax(logits)[label]` and its gradient with respect to
/// the logits, `softmax(logits) - onehot(label)`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<(T, Vector<T>)> {
    if label >= logits.len() {
        return Err(invalid(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let exps: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    let loss = total.ln() - (logits[label] - max);
    let mut grad: Vec<T> = exps.into_iter().map(|e| e / total).collect();
    grad[label] -= T::one();
    Ok((loss, grad.into()))
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vector<T> {
    let max = logits.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let exps: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter()
        .map(|e| e / total)
        .collect::<Vec<_>>()
        .into()
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
