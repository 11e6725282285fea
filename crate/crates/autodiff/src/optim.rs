//! AdamW with decoupled weight decay, and global-norm gradient clipping.

use crate::error::{shape_err, Result};
use crate::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: per-parameter first and second moments plus the step
/// counter. Moments are indexed like the parameter list passed to `step`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<F: Real> {
    pub config: AdamWConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<F>>,
    pub second_moment: Vec<Vec<F>>,
}

impl<F: Real> AdamW<F> {
    pub fn new(config: AdamWConfig, params: &[Tensor<F>]) -> Self {
        let zeros = |t: &Tensor<F>| vec![F::zero(); t.numel()];
        Self {
            config,
            step: 0,
            first_moment: params.iter().map(zeros).collect(),
            second_moment: params.iter().map(zeros).collect(),
        }
    }

    /// Applies one update. Parameters without a gradient are treated as
    /// having a zero gradient.
    pub fn step(&mut self, params: &[Tensor<F>]) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return shape_err(
                "adamw",
                format!("{} params, state for {}", params.len(), self.first_moment.len()),
            );
        }
        for (i, p) in params.iter().enumerate() {
            if p.numel() != self.first_moment[i].len() {
                return shape_err(
                    "adamw",
                    format!(
                        "param {i} has {} values, moments {}",
                        p.numel(),
                        self.first_moment[i].len()
                    ),
                );
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let (one_m_b1, one_m_b2) = (F::lit(1.0 - c.beta1), F::lit(1.0 - c.beta2));
        let decay = F::lit(1.0 - c.lr * c.weight_decay);
        let step_size = F::lit(c.lr / bc1);
        let inv_bc2 = F::lit(1.0 / bc2);
        let eps = F::lit(c.eps);

        for (i, p) in params.iter().enumerate() {
            let grad = p.grad();
            let (m, v) = (&mut self.first_moment[i], &mut self.second_moment[i]);
            p.update_data(|data| {
                for j in 0..data.len() {
                    let g = grad.as_ref().map_or(F::zero(), |g| g[j]);
                    m[j] = b1 * m[j] + one_m_b1 * g;
                    v[j] = b2 * v[j] + one_m_b2 * g * g;
                    let denom = (v[j] * inv_bc2).sqrt() + eps;
                    data[j] = data[j] * decay - step_size * m[j] / denom;
                }
            })?;
        }
        Ok(())
    }
}

/// Global L2 norm over all parameter gradients (missing gradients count as
/// zero), accumulated in parameter order.
pub fn grad_norm<F: Real>(params: &[Tensor<F>]) -> F {
    let mut total = F::zero();
    for p in params {
        if let Some(g) = p.grad() {
            total += g.iter().fold(F::zero(), |a, &v| a + v * v);
        }
    }
    total.sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm measured before clipping.
pub fn clip_grad_norm<F: Real>(params: &[Tensor<F>], max_norm: F) -> F {
    let norm = grad_norm(params);
    if norm > max_norm {
        let factor = max_norm / norm;
        for p in params {
            p.map_grad(|g| g.iter_mut().for_each(|v| *v *= factor));
        }
    }
    norm
}
