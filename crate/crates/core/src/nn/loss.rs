use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Mean softmax cross-entropy over the batch and its gradient
/// `(softmax − onehot) / B`.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    logits.expect_rank("softmax_cross_entropy", "logits", 2)?;
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != b {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{} labels for batch of {b}", labels.len()),
        ));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange { label, classes: c });
    }
    let inv_b = T::one() / T::of(b as f64);
    let mut grad = Tensor::zeros(&[b, c]);
    let mut total = T::zero();
    for ((row, g), &label) in logits.data().chunks(c).zip(grad.data_mut().chunks_mut(c)).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for (gi, &z) in g.iter_mut().zip(row) {
            let e = (z - max).exp();
            *gi = e;
            denom += e;
        }
        total += denom.ln() - (row[label] - max);
        for gi in g.iter_mut() {
            *gi = *gi / denom * inv_b;
        }
        g[label] = g[label] - inv_b;
    }
    Ok((total * inv_b, grad))
}
