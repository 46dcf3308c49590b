use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: usize,
    pub worst_param: String,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Candidates skipped because their difference interval crosses a kink.
    pub skipped: usize,
    /// Number of comparisons asked for.
    pub requested: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance && self.checked >= self.requested
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "gradcheck status={} checked={} skipped={} step={:e} tolerance={:e} max_rel_err={:.3e} worst_param={} analytic={:.6e} numeric={:.6e}",
            if self.passed() { "pass" } else { "fail" },
            self.checked,
            self.skipped,
            self.step,
            self.tolerance,
            self.max_rel_err,
            self.worst_param,
            self.analytic,
            self.numeric
        )
    }
}

/// `|a − n| / max(|a|, |n|, 1e−8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// `k` distinct coordinates out of `n`, sorted; all of them when `k >= n`.
pub fn sample_coordinates(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = sample(&mut rng, n, k).into_vec();
    v.sort_unstable();
    v
}

/// Loss value at one parameter vector plus the on/off pattern of every
/// non-differentiable switch (ReLU inputs, absolute values) it passed through.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub value: f64,
    pub pattern: Vec<bool>,
}

impl Probe {
    pub fn smooth(value: f64) -> Self {
        Probe { value, pattern: Vec::new() }
    }
}

/// Compares `analytic` against central differences of `loss_fn` on `coords`.
/// `label` names a coordinate in the report.
pub fn grad_check<F, L>(
    mut loss_fn: F,
    params: &[f64],
    analytic: &[f64],
    coords: &[usize],
    step: f64,
    tolerance: f64,
    label: L,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
    L: Fn(usize) -> String,
{
    grad_check_piecewise(|t| loss_fn(t).map(Probe::smooth), params, analytic, coords, coords.len(), step, tolerance, label)
}

/// Central-difference check for piecewise-smooth losses. A coordinate whose
/// interval `[θ − h, θ + h]` changes the switch pattern straddles a kink, where
/// the difference quotient does not estimate the derivative; it is skipped.
/// Candidates are taken in order until `want` coordinates have been compared.
#[allow(clippy::too_many_arguments)]
pub fn grad_check_piecewise<F, L>(
    mut loss_fn: F,
    params: &[f64],
    analytic: &[f64],
    candidates: &[usize],
    want: usize,
    step: f64,
    tolerance: f64,
    label: L,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<Probe>,
    L: Fn(usize) -> String,
{
    if analytic.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} analytic gradients for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    if !(step > 0.0) {
        return Err(Error::Param("finite-difference step must be > 0".into()));
    }
    let mut theta = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: candidates.first().copied().unwrap_or(0),
        worst_param: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        skipped: 0,
        requested: want,
        step,
        tolerance,
    };
    let mut eval = |theta: &[f64]| -> Result<Probe> {
        let p = loss_fn(theta)?;
        if p.value.is_finite() {
            Ok(p)
        } else {
            Err(Error::NonFinite { name: "loss".into() })
        }
    };
    let centre = eval(&theta)?.pattern;
    for &i in candidates {
        if report.checked >= want {
            break;
        }
        if i >= params.len() {
            return Err(Error::Param(format!("coordinate {i} out of range")));
        }
        let orig = theta[i];
        theta[i] = orig + step;
        let plus = eval(&theta)?;
        theta[i] = orig - step;
        let minus = eval(&theta)?;
        theta[i] = orig;
        if plus.pattern != centre || minus.pattern != centre {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus.value - minus.value) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if report.checked == 0 || err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_index = i;
            report.analytic = analytic[i];
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    report.worst_param = label(report.worst_index);
    Ok(report)
}
