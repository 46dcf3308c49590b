use super::LossGrad;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `1 − (Σpg + ε) / (Σpg + α·Σp(1−g) + β·Σ(1−p)g + ε)` and its gradient in `p`.
pub fn tversky_loss<T: Scalar>(p: &[T], g: &[bool], alpha: T, beta: T, eps: T) -> Result<LossGrad<T>> {
    if p.len() != g.len() {
        return Err(Error::Shape(format!(
            "tversky: {} predictions vs {} labels",
            p.len(),
            g.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (T::zero(), T::zero(), T::zero());
    for (&pi, &gi) in p.iter().zip(g) {
        if gi {
            tp += pi;
            fn_ += T::one() - pi;
        } else {
            fp += pi;
        }
    }
    let num = tp + eps;
    let den = tp + alpha * fp + beta * fn_ + eps;
    let value = T::one() - num / den;
    // d(num/den)/dp_i: fg pixels see d tp = 1, d fn = -1; bg pixels see d fp = 1.
    let d2 = den * den;
    let dfg = -((den - num * (T::one() - beta)) / d2);
    let dbg = num * alpha / d2;
    let grad = g.iter().map(|&gi| if gi { dfg } else { dbg }).collect();
    Ok(LossGrad { value, grad })
}
