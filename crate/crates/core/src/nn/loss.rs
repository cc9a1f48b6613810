//! Softmax, cross-entropy and the fused softmax + cross-entropy gradient.

use super::tensor::Real;
use super::NnError;

/// In-place softmax with max subtraction.
pub fn softmax_in_place<T: Real>(xs: &mut [T]) {
    let max = xs.iter().fold(T::neg_infinity(), |m, &v| m.max_with(v));
    let mut sum = T::ZERO;
    for v in xs.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in xs.iter_mut() {
        *v /= sum;
    }
}

/// Softmax of a vector.
pub fn softmax<T: Real>(xs: &[T]) -> Vec<T> {
    let mut out = xs.to_vec();
    softmax_in_place(&mut out);
    out
}

/// `−log(probs[label])`, with the probability floored at 1e-45 so a
/// confidently wrong model yields a large finite loss.
pub fn cross_entropy<T: Real>(probs: &[T], label: usize) -> Result<T, NnError> {
    if label >= probs.len() {
        return Err(NnError::BadLabel { label, classes: probs.len() });
    }
    let p = probs[label].max_with(T::of(1e-45));
    Ok(-(p.ln()))
}

/// Fused softmax + cross-entropy over a batch of logits.
///
/// Returns the mean loss and the gradient with respect to the logits,
/// `(softmax(logits) − onehot(label)) / batch`.
pub fn softmax_cross_entropy<T: Real>(
    logits: &super::Tensor<T>,
    labels: &[usize],
) -> Result<(f64, super::Tensor<T>), NnError> {
    let &[b, n] = logits.shape.as_slice() else {
        return Err(NnError::ShapeMismatch {
            layer: "softmax_cross_entropy",
            expected: "[B, N]".into(),
            got: format!("{:?}", logits.shape),
        });
    };
    assert_eq!(labels.len(), b, "one label per batch item");
    let mut grad = logits.clone();
    let mut total = 0.0f64;
    let inv_b = T::of(1.0 / b as f64);
    for (bi, &label) in labels.iter().enumerate() {
        if label >= n {
            return Err(NnError::BadLabel { label, classes: n });
        }
        let row = grad.item_mut(bi);
        softmax_in_place(row);
        total += -(row[label].to_f64().max(1e-45)).ln();
        row[label] -= T::ONE;
        for v in row.iter_mut() {
            *v *= inv_b;
        }
    }
    Ok((total / b as f64, grad))
}
