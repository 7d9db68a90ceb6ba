use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Probabilities are clipped to `[PROB_EPS, 1 − PROB_EPS]` before the log.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    /// `∂loss/∂logit` per pixel, where `pred = σ(logit)`.
    pub grad_logits: Tensor,
    pub pos_weight: f64,
    pub neg_weight: f64,
}

/// Inverse-frequency class weights `N / (2·N_pos)` and `N / (2·N_neg)`.
/// An absent class gets weight 1. A balanced target yields `(1, 1)`.
pub fn class_balanced_weights(target: &Tensor) -> (f64, f64) {
    let n = target.len() as f64;
    let n_pos = target.data().iter().filter(|&&y| y > 0.5).count() as f64;
    let n_neg = n - n_pos;
    let w = |count: f64| if count == 0.0 { 1.0 } else { n / (2.0 * count) };
    (w(n_pos), w(n_neg))
}

/// Class-balanced binary cross-entropy with weights computed from `target`.
pub fn class_balanced_loss(pred: &Tensor, target: &Tensor) -> Result<LossOutput> {
    let (w_pos, w_neg) = class_balanced_weights(target);
    weighted_bce(pred, target, w_pos, w_neg)
}

/// `L = −(1/N) Σ [w_pos·y·ln p + w_neg·(1−y)·ln(1−p)]` on clipped `p`.
pub fn weighted_bce(pred: &Tensor, target: &Tensor, pos_weight: f64, neg_weight: f64) -> Result<LossOutput> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} and target {:?} differ",
            pred.shape(),
            target.shape()
        )));
    }
    if let Some(bad) = target.data().iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::invalid(format!("target must be binary, found {bad}")));
    }
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &y) in pred.data().iter().zip(target.data()) {
        let clipped = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        let inside = p > PROB_EPS && p < 1.0 - PROB_EPS;
        if y == 1.0 {
            sum += pos_weight * clipped.ln();
            grad.push(if inside { -pos_weight * (1.0 - p) / n } else { 0.0 });
        } else {
            sum += neg_weight * (1.0 - clipped).ln();
            grad.push(if inside { neg_weight * p / n } else { 0.0 });
        }
    }
    Ok(LossOutput {
        loss: -sum / n,
        grad_logits: Tensor::new(pred.shape(), grad)?,
        pos_weight,
        neg_weight,
    })
}
