use serde::{Deserialize, Serialize};

use super::LossGrad;
use crate::distance::distance_to;
use crate::error::{Error, Result};
use crate::mask::BinaryMap;
use crate::scalar::{sigmoid, Scalar};

/// Which quantity is compared against the soft boundary target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryOperand {
    /// `|σ(z) − s|`, bounded and on the same scale as the target.
    #[default]
    Probability,
    /// `|z − s|` on raw logits.
    Logit,
}

/// Signed Euclidean distance to the nearest contour pixel: negative inside the
/// foreground, zero on the contour, positive outside. Masks without a contour get
/// a uniform `∓max(H, W)`.
pub fn signed_distance(mask: &BinaryMap) -> Vec<f64> {
    let (h, w) = mask.dims();
    let clamp = h.max(w) as f64;
    let sign = |fg: bool| if fg { -1.0 } else { 1.0 };
    match distance_to(&mask.contour()) {
        Some(d) => d
            .into_iter()
            .zip(mask.data())
            .map(|(d, &fg)| sign(fg) * d.min(clamp))
            .collect(),
        None => mask.data().iter().map(|&fg| sign(fg) * clamp).collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryTarget {
    pub height: usize,
    pub width: usize,
    pub band: BinaryMap,
    /// Soft target, zero outside the band.
    pub soft: Vec<f64>,
}

impl BoundaryTarget {
    pub fn band_size(&self) -> usize {
        self.band.count()
    }

    /// Clips in-band targets to `[delta, 1 − delta]`.
    pub fn smoothed(mut self, delta: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&delta) {
            return Err(Error::Param(format!("label smoothing {delta} outside [0, 0.5)")));
        }
        for (s, &b) in self.soft.iter_mut().zip(self.band.data()) {
            if b {
                *s = s.clamp(delta, 1.0 - delta);
            }
        }
        Ok(self)
    }
}

/// Band `|SDT| ≤ band_width` with target `1 − |SDT|/band_width`.
pub fn boundary_target(mask: &BinaryMap, band_width: f64) -> Result<BoundaryTarget> {
    if !(band_width >= 1.0) {
        return Err(Error::Param(format!("band_width must be >= 1, got {band_width}")));
    }
    let (h, w) = mask.dims();
    let sdt = signed_distance(mask);
    let in_band: Vec<bool> = sdt.iter().map(|d| d.abs() <= band_width).collect();
    let soft = sdt
        .iter()
        .zip(&in_band)
        .map(|(d, &b)| if b { 1.0 - d.abs() / band_width } else { 0.0 })
        .collect();
    Ok(BoundaryTarget {
        height: h,
        width: w,
        band: BinaryMap::from_vec(h, w, in_band)?,
        soft,
    })
}

/// Mean absolute deviation over the band, with the gradient taken with respect to
/// the logits `z`. An empty band yields zero loss and zero gradient.
pub fn boundary_loss<T: Scalar>(z: &[T], target: &BoundaryTarget, operand: BoundaryOperand) -> Result<LossGrad<T>> {
    if z.len() != target.soft.len() {
        return Err(Error::Shape(format!(
            "boundary loss: {} logits vs {}x{} target",
            z.len(),
            target.height,
            target.width
        )));
    }
    let n = target.band_size();
    let mut grad = vec![T::zero(); z.len()];
    if n == 0 {
        log::warn!("boundary band is empty; boundary loss set to 0");
        return Ok(LossGrad { value: T::zero(), grad });
    }
    let inv = T::one() / T::from_usize_lossy(n);
    let mut value = T::zero();
    for (i, (&zi, &b)) in z.iter().zip(target.band.data()).enumerate() {
        if !b {
            continue;
        }
        let s = T::lit(target.soft[i]);
        let (x, dx) = match operand {
            BoundaryOperand::Probability => {
                let p = sigmoid(zi);
                (p, p * (T::one() - p))
            }
            BoundaryOperand::Logit => (zi, T::one()),
        };
        let d = x - s;
        value += d.abs();
        let sign = if d > T::zero() {
            T::one()
        } else if d < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        grad[i] = sign * dx * inv;
    }
    Ok(LossGrad { value: value * inv, grad })
}

/// Which band pixels lie above their target; the loss has a kink wherever this flips.
pub fn boundary_kinks<T: Scalar>(z: &[T], target: &BoundaryTarget, operand: BoundaryOperand) -> Vec<bool> {
    z.iter()
        .zip(target.band.data())
        .zip(&target.soft)
        .filter(|((_, &b), _)| b)
        .map(|((&zi, _), &s)| {
            let x = match operand {
                BoundaryOperand::Probability => sigmoid(zi),
                BoundaryOperand::Logit => zi,
            };
            x > T::lit(s)
        })
        .collect()
}
