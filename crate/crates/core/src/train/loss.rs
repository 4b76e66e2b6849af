use crate::error::{Error, Result};
use crate::tensor::{IntTensor, Real, Tensor};

/// Softmax cross-entropy per pixel, scaled by `weights[label]` and
/// normalized by the summed weights of scored pixels.
///
/// `logits` is `[N, C, H, W]`, `labels` is `[N, H, W]`. Pixels labelled
/// `ignore_label` contribute neither loss nor gradient. Returns the loss and
/// its gradient with respect to the logits.
pub fn weighted_cross_entropy<T: Real>(
    logits: &Tensor<T>,
    labels: &IntTensor,
    weights: &[f64],
    ignore_label: i32,
) -> Result<(f64, Tensor<T>)> {
    let [n, c, h, w] = logits.dims4("weighted_cross_entropy")?;
    if labels.shape() != [n, h, w] {
        return Err(Error::ShapeMismatch {
            op: "weighted_cross_entropy labels",
            lhs: vec![n, h, w],
            rhs: labels.shape().to_vec(),
        });
    }
    if weights.len() != c {
        return Err(Error::InvalidArgument(format!(
            "{} class weights for {c} classes",
            weights.len()
        )));
    }
    let plane = h * w;
    let x = logits.data();
    let mut grad = vec![0.0f64; x.len()];
    let mut total = 0.0;
    let mut weight_sum = 0.0;
    let mut probs = vec![0.0f64; c];
    for s in 0..n {
        for p in 0..plane {
            let label = labels.data()[s * plane + p];
            if label == ignore_label {
                continue;
            }
            if label < 0 || label as usize >= c {
                return Err(Error::InvalidArgument(format!(
                    "label {label} outside [0, {c}) at sample {s}, pixel {p}"
                )));
            }
            let t = label as usize;
            let at = |k: usize| (s * c + k) * plane + p;
            let max = (0..c)
                .map(|k| x[at(k)].as_f64())
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (k, pk) in probs.iter_mut().enumerate() {
                *pk = (x[at(k)].as_f64() - max).exp();
                z += *pk;
            }
            let wt = weights[t];
            total += wt * (z.ln() + max - x[at(t)].as_f64());
            weight_sum += wt;
            for (k, &pk) in probs.iter().enumerate() {
                let onehot = if k == t { 1.0 } else { 0.0 };
                grad[at(k)] = wt * (pk / z - onehot);
            }
        }
    }
    if weight_sum == 0.0 {
        return Err(Error::InvalidArgument(
            "no scored pixels: every label is ignored or has zero weight".into(),
        ));
    }
    let inv = 1.0 / weight_sum;
    let grad = grad.into_iter().map(|g| T::from_f64(g * inv)).collect();
    Ok((
        total * inv,
        Tensor::from_vec(logits.shape().to_vec(), grad)?,
    ))
}
