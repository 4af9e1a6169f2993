//! Softmax cross-entropy with optional per-class weights plus the
//! semantic penalty `w * |p_unsafe - indicator|`.
//!
//! The penalty compares the predicted unsafe probability against a
//! 0/1 indicator computed by the rule engine on the same window; its
//! subgradient at zero is taken as zero. Class weights apply to the
//! cross-entropy term only. Both terms are averaged over the batch.

use super::tensor::Tensor2;

pub const UNSAFE: usize = 1;

/// Row-wise softmax with the max-shift trick.
pub fn softmax_rows(logits: &Tensor2) -> Tensor2 {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

pub struct LossOutput {
    pub loss: f64,
    /// Gradient of the batch-mean loss w.r.t. the logits.
    pub d_logits: Tensor2,
}

/// `semantic` carries the penalty weight and one rule-indicator value
/// per sample; `None` trains plain weighted cross-entropy.
pub fn weighted_ce_with_semantics(
    logits: &Tensor2,
    labels: &[u8],
    class_weights: [f64; 2],
    semantic: Option<(f64, &[f64])>,
) -> LossOutput {
    let batch = logits.rows();
    assert_eq!(labels.len(), batch, "one label per row");
    if let Some((_, ind)) = semantic {
        assert_eq!(ind.len(), batch, "one indicator per row");
    }
    let probs = softmax_rows(logits);
    let inv_b = 1.0 / batch as f64;
    let mut loss = 0.0;
    let mut d_logits = Tensor2::zeros(batch, logits.cols());
    for r in 0..batch {
        let y = labels[r] as usize;
        let lr = logits.row(r);
        let pr = probs.row(r);
        let cw = class_weights[y];

        let max = lr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse: f64 = lr.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        loss += cw * (lse - lr[y]) * inv_b;

        let dr = d_logits.row_mut(r);
        for j in 0..pr.len() {
            dr[j] = cw * (pr[j] - if j == y { 1.0 } else { 0.0 }) * inv_b;
        }
        if let Some((w, ind)) = semantic {
            let residual = pr[UNSAFE] - ind[r];
            loss += w * residual.abs() * inv_b;
            let sign = if residual > 0.0 {
                1.0
            } else if residual < 0.0 {
                -1.0
            } else {
                0.0
            };
            let scale = w * sign * pr[UNSAFE] * inv_b;
            for j in 0..pr.len() {
                dr[j] += scale * (if j == UNSAFE { 1.0 } else { 0.0 } - pr[j]);
            }
        }
    }
    LossOutput { loss, d_logits }
}
