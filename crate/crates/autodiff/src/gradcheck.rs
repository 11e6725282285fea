//! Central finite-difference gradient checking.
//!
//! The numerical side only ever evaluates the forward function, so it is an
//! oracle independent of every backward closure it checks.

use crate::error::Result;
use crate::tensor::no_grad;
use crate::Tensor;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central differences of a scalar function at `x`.
pub fn numerical_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let plus = f(&probe);
            probe[i] = x[i] - step;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Denominator floor in the relative error, guarding near-zero gradients.
    pub floor: f64,
    /// Check at most this many evenly spaced entries per input.
    pub max_entries_per_input: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            max_entries_per_input: usize::MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (input index, element index) of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares reverse-mode gradients of `f(inputs)` against central
/// differences. `f` must return a scalar and be deterministic.
pub fn check_gradients(
    inputs: &[Tensor<f64>],
    f: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let leaves: Vec<Tensor<f64>> = inputs
        .iter()
        .map(|t| Tensor::param(t.to_vec(), t.shape()))
        .collect::<Result<_>>()?;
    f(&leaves)?.backward()?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (which, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        let n = leaf.numel();
        let stride = n.div_ceil(opts.max_entries_per_input.max(1)).max(1);
        for idx in (0..n).step_by(stride) {
            let eval = |delta: f64| -> Result<f64> {
                no_grad(|| {
                    let perturbed: Vec<Tensor<f64>> = inputs
                        .iter()
                        .enumerate()
                        .map(|(i, t)| {
                            let mut v = t.to_vec();
                            if i == which {
                                v[idx] += delta;
                            }
                            Tensor::new(v, t.shape())
                        })
                        .collect::<Result<_>>()?;
                    f(&perturbed)?.item()
                })
            };
            let numeric = (eval(opts.step)? - eval(-opts.step)?) / (2.0 * opts.step);
            let err = relative_error(analytic[idx], numeric, opts.floor);
            report.checked += 1;
            if err > report.max_rel_err || report.checked == 1 {
                report.max_rel_err = err;
                report.worst = (which, idx);
                report.analytic = analytic[idx];
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
