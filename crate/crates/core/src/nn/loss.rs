//! Softmax cross-entropy over class logits, computed through a stable
//! log-sum-exp so huge logits cannot overflow. For two classes this reduces
//! exactly to binary cross-entropy on the predicted probability.

use super::tensor::{Scalar, Tensor};
use super::NnError;

/// Returns the batch-mean loss and the logits gradient
/// `(softmax - onehot) / N`. Labels are class indices, one per row.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>), NnError> {
    let (n, k) = logits.dims2()?;
    if n == 0 {
        return Err(NnError::EmptyBatch);
    }
    if k < 2 {
        return Err(NnError::ClassCount { classes: k });
    }
    if labels.len() != n {
        return Err(NnError::Shape {
            context: format!("{} labels for batch {n}", labels.len()),
            found: logits.shape().to_vec(),
        });
    }
    for &label in labels {
        if label >= k {
            return Err(NnError::LabelRange { label, classes: k });
        }
    }

    let ld = logits.data();
    let inv_n = T::one() / T::from_f64(n as f64);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); n * k];
    for (row, &label) in labels.iter().enumerate() {
        let r = &ld[row * k..(row + 1) * k];
        let max = r.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum_exp = T::zero();
        for &v in r {
            sum_exp = sum_exp + (v - max).exp();
        }
        let log_sum = sum_exp.ln() + max;
        loss = loss - (r[label] - log_sum);
        let g = &mut grad[row * k..(row + 1) * k];
        for (j, &v) in r.iter().enumerate() {
            g[j] = (v - log_sum).exp() * inv_n;
        }
        g[label] = g[label] - inv_n;
    }
    Ok((loss * inv_n, Tensor::from_vec(logits.shape(), grad)?))
}
