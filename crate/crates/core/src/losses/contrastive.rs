use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Loss value and gradients with respect to both (unnormalized) embedding batches.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveGrad<T> {
    pub value: T,
    pub grad_a: Vec<Vec<T>>,
    pub grad_b: Vec<Vec<T>>,
}

/// NT-Xent over `2B` anchors. Each anchor's positive is its other view; every other
/// embedding in either view is a negative. Inputs are L2-normalized internally.
pub fn contrastive_loss<T: Scalar>(f_a: &[Vec<T>], f_b: &[Vec<T>], tau: T) -> Result<ContrastiveGrad<T>> {
    let b = f_a.len();
    if b < 2 {
        return Err(Error::Param(format!("contrastive loss needs a batch of at least 2, got {b}")));
    }
    if f_b.len() != b {
        return Err(Error::Shape(format!("view batches differ: {b} vs {}", f_b.len())));
    }
    if !(tau > T::zero()) {
        return Err(Error::Param("temperature must be > 0".into()));
    }
    let dim = f_a[0].len();
    if f_a.iter().chain(f_b).any(|v| v.len() != dim) {
        return Err(Error::Shape("embeddings differ in dimension".into()));
    }
    let n = 2 * b;
    let raw: Vec<&Vec<T>> = f_a.iter().chain(f_b).collect();
    let norms: Vec<T> = raw.iter().map(|v| v.iter().map(|&x| x * x).sum::<T>().sqrt()).collect();
    if norms.iter().any(|&r| !(r > T::zero()) || !r.is_finite()) {
        return Err(Error::NonFinite { name: "embedding norm".into() });
    }
    let u: Vec<Vec<T>> = raw.iter().zip(&norms).map(|(v, &r)| v.iter().map(|&x| x / r).collect()).collect();
    let dot = |i: usize, j: usize| u[i].iter().zip(&u[j]).map(|(&x, &y)| x * y).sum::<T>();
    let mut sim = vec![T::zero(); n * n];
    for i in 0..n {
        for j in i..n {
            let s = dot(i, j) / tau;
            sim[i * n + j] = s;
            sim[j * n + i] = s;
        }
    }
    let pos = |k: usize| (k + b) % n;
    let inv_n = T::one() / T::from_usize_lossy(n);
    // dsim[k, j] = dL/dsim_kj
    let mut dsim = vec![T::zero(); n * n];
    let mut value = T::zero();
    for k in 0..n {
        let row = &sim[k * n..(k + 1) * n];
        let m = (0..n).filter(|&j| j != k).map(|j| row[j]).fold(T::neg_infinity(), T::max);
        let z: T = (0..n).filter(|&j| j != k).map(|j| (row[j] - m).exp()).sum();
        value += m + z.ln() - row[pos(k)];
        for j in (0..n).filter(|&j| j != k) {
            dsim[k * n + j] = (row[j] - m).exp() / z * inv_n;
        }
        dsim[k * n + pos(k)] -= inv_n;
    }
    let mut grads: Vec<Vec<T>> = Vec::with_capacity(n);
    for k in 0..n {
        let mut gu = vec![T::zero(); dim];
        for j in 0..n {
            let c = (dsim[k * n + j] + dsim[j * n + k]) / tau;
            if c != T::zero() {
                for (g, &x) in gu.iter_mut().zip(&u[j]) {
                    *g += c * x;
                }
            }
        }
        // back through u = x / |x|
        let proj: T = gu.iter().zip(&u[k]).map(|(&g, &x)| g * x).sum();
        grads.push(gu.iter().zip(&u[k]).map(|(&g, &x)| (g - x * proj) / norms[k]).collect());
    }
    let grad_b = grads.split_off(b);
    Ok(ContrastiveGrad {
        value: value * inv_n,
        grad_a: grads,
        grad_b,
    })
}
