use crate::error::{Error, Result};
use crate::network::ModelParams;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Cosine-annealed learning rate; steps past `max_steps` stay at `min_lr`.
pub fn cosine_lr(step: usize, max_steps: usize, initial_lr: f64, min_lr: f64) -> f64 {
    if max_steps == 0 || step >= max_steps {
        return if max_steps == 0 && step == 0 { initial_lr } else { min_lr };
    }
    let t = step as f64 / max_steps as f64;
    min_lr + 0.5 * (initial_lr - min_lr) * (1.0 + (std::f64::consts::PI * t).cos())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter tensor, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let shapes: Vec<Vec<usize>> = params.iter().map(|(_, t)| t.shape().to_vec()).collect();
        AdamState {
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            step: 0,
        }
    }
}

/// One AdamW update in place: decoupled decay `θ ← θ − lr·wd·θ`, then the
/// bias-corrected Adam step. The suppression strength is clamped afterwards.
/// Gradients are checked before anything is modified.
pub fn adamw_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    weight_decay: f64,
    hyper: AdamHyper,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} gradients and {} moment tensors for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params.value(i).shape() {
            return Err(Error::Shape(format!(
                "gradient of `{}` has shape {:?}, parameter has {:?}",
                params.name(i),
                g.shape(),
                params.value(i).shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite {
                name: format!("gradient of {}", params.name(i)),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let decay = T::lit(1.0 - lr * weight_decay);
    let (tb1, tb2, teps, tlr) = (T::lit(b1), T::lit(b2), T::lit(hyper.eps), T::lit(lr));
    let (tc1, tc2) = (T::lit(c1), T::lit(c2));
    for (i, g) in grads.iter().enumerate() {
        let theta = params.value_mut(i).data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for k in 0..theta.len() {
            let gk = g.data()[k];
            m[k] = tb1 * m[k] + (T::one() - tb1) * gk;
            v[k] = tb2 * v[k] + (T::one() - tb2) * gk * gk;
            let mhat = m[k] / tc1;
            let vhat = v[k] / tc2;
            theta[k] = theta[k] * decay - tlr * mhat / (vhat.sqrt() + teps);
        }
    }
    params.clamp_constrained();
    Ok(())
}
