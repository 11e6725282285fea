//! Random selective-scan workloads and their timing.

use std::time::{Duration, Instant};

use gamba_autodiff::{no_grad, Real, Tensor};
use rand::Rng;

use crate::error::Result;
use crate::ssm::selective_scan_kernel;

/// Inputs of `selective_scan_kernel` in argument order.
#[derive(Debug, Clone)]
pub struct ScanInputs<F: Real> {
    pub x: Tensor<F>,
    pub delta: Tensor<F>,
    pub a: Tensor<F>,
    pub b: Tensor<F>,
    pub c: Tensor<F>,
    pub d: Tensor<F>,
}

impl<F: Real> ScanInputs<F> {
    /// `x`, `B`, `C`, `D` in `[-1, 1]`, `Δ` in `[0.001, 0.5]` and `A` in
    /// `[-4, -0.05]`. Leaves require gradients when `params` is set.
    pub fn random(len: usize, d_inner: usize, d_state: usize, params: bool, rng: &mut impl Rng) -> Self {
        let mut t = |shape: &[usize], lo: f64, hi: f64| {
            let n = shape.iter().product();
            let v = (0..n).map(|_| F::lit(rng.random_range(lo..hi))).collect();
            if params {
                Tensor::param(v, shape).expect("sized by construction")
            } else {
                Tensor::new(v, shape).expect("sized by construction")
            }
        };
        Self {
            x: t(&[len, d_inner], -1.0, 1.0),
            delta: t(&[len, d_inner], 0.001, 0.5),
            a: t(&[d_inner, d_state], -4.0, -0.05),
            b: t(&[len, d_state], -1.0, 1.0),
            c: t(&[len, d_state], -1.0, 1.0),
            d: t(&[d_inner], -1.0, 1.0),
        }
    }

    pub fn as_vec(&self) -> Vec<Tensor<F>> {
        vec![
            self.x.clone(),
            self.delta.clone(),
            self.a.clone(),
            self.b.clone(),
            self.c.clone(),
            self.d.clone(),
        ]
    }

    pub fn scan(&self) -> Result<Tensor<F>> {
        selective_scan_kernel(&self.x, &self.delta, &self.a, &self.b, &self.c, &self.d)
    }
}

/// Median forward wall time over `runs` scans of length `len`.
pub fn median_scan_time(
    len: usize,
    d_inner: usize,
    d_state: usize,
    runs: usize,
    rng: &mut impl Rng,
) -> Result<Duration> {
    let inputs = ScanInputs::<f32>::random(len, d_inner, d_state, false, rng);
    no_grad(|| inputs.scan())?;
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs.max(1) {
        let start = Instant::now();
        no_grad(|| inputs.scan())?;
        times.push(start.elapsed());
    }
    times.sort_unstable();
    Ok(times[times.len() / 2])
}
