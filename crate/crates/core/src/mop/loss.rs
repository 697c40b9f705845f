use super::{Matrix2D, MopError};

/// Autoregressive negative log-likelihood of a target sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllLoss {
    /// `-sum_t log softmax(logits_t)[target_t]`
    pub total: f64,
    /// `total / T`
    pub per_token: f64,
}

/// Negative log-likelihood of `targets` under next-token logits, where
/// `token_logits[t]` is the model's distribution for position `t` given the
/// tokens before it.
pub fn nll_loss(token_logits: &[Vec<f64>], targets: &[usize]) -> Result<NllLoss, MopError> {
    if token_logits.is_empty() || targets.is_empty() {
        return Err(MopError::EmptySequence);
    }
    if token_logits.len() != targets.len() {
        return Err(MopError::ShapeMismatch {
            what: "targets vs logits length".into(),
            expected: token_logits.len(),
            found: targets.len(),
        });
    }
    let mut total = 0.0;
    for (t, (logits, &target)) in token_logits.iter().zip(targets).enumerate() {
        if target >= logits.len() {
            return Err(MopError::TargetOutOfRange {
                position: t,
                target,
                vocab: logits.len(),
            });
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(MopError::NonFinite(format!("logits at position {t}")));
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += log_z - logits[target];
    }
    Ok(NllLoss {
        total,
        per_token: total / targets.len() as f64,
    })
}

/// Mean squared error and its gradient with respect to `prediction`.
pub fn mse_with_grad(prediction: &Matrix2D, target: &Matrix2D) -> Result<(f64, Matrix2D), MopError> {
    if prediction.shape() != target.shape() {
        return Err(MopError::ShapeMismatch {
            what: "target rows x cols".into(),
            expected: prediction.rows() * prediction.cols(),
            found: target.rows() * target.cols(),
        });
    }
    let n = prediction.as_slice().len().max(1) as f64;
    let mut grad = Matrix2D::zeros(prediction.rows(), prediction.cols());
    let mut loss = 0.0;
    for ((g, p), t) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(prediction.as_slice())
        .zip(target.as_slice())
    {
        let d = p - t;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    Ok((loss / n, grad))
}
