//! Parameter containers shared by the backbone and the decoder.

use gamba_autodiff::{Real, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

/// Ordered `(name, tensor)` pairs; the order defines checkpoint and
/// optimizer-state layout.
pub type NamedParams<F> = Vec<(String, Tensor<F>)>;

pub(crate) fn param_from<F: Real>(values: impl IntoIterator<Item = f64>, shape: &[usize]) -> Result<Tensor<F>> {
    Ok(Tensor::param(values.into_iter().map(F::lit).collect(), shape)?)
}

pub(crate) fn uniform<F: Real>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Result<Tensor<F>> {
    let n: usize = shape.iter().product();
    param_from((0..n).map(|_| rng.random_range(-bound..=bound)), shape)
}

pub(crate) fn normal<F: Real>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Result<Tensor<F>> {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("positive std");
    param_from((0..n).map(|_| dist.sample(rng)), shape)
}

pub(crate) fn constant<F: Real>(shape: &[usize], value: f64) -> Result<Tensor<F>> {
    let n: usize = shape.iter().product();
    param_from(std::iter::repeat_n(value, n), shape)
}

/// `1 / E[silu(z)^2]` for standard normal `z`.
const SILU_GAIN_SQ: f64 = 2.81;

/// Affine layer with a `[out x in]` weight.
#[derive(Debug, Clone)]
pub struct Linear<F: Real> {
    pub weight: Tensor<F>,
    pub bias: Option<Tensor<F>>,
}

impl<F: Real> Linear<F> {
    /// Uniform `±1/sqrt(in)` initialization.
    pub fn new(input: usize, output: usize, bias: bool, rng: &mut impl Rng) -> Result<Self> {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        Ok(Self {
            weight: uniform(&[output, input], bound, rng)?,
            bias: if bias {
                Some(uniform(&[output], bound, rng)?)
            } else {
                None
            },
        })
    }

    /// Zero bias and uniform weights whose variance `2.81 / in` keeps unit
    /// pre-activation variance through a SiLU.
    pub fn silu_init(input: usize, output: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = (3.0 * SILU_GAIN_SQ / input.max(1) as f64).sqrt();
        Ok(Self {
            weight: uniform(&[output, input], bound, rng)?,
            bias: Some(constant(&[output], 0.0)?),
        })
    }

    pub fn in_features(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn out_features(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(x.linear(&self.weight, self.bias.as_ref())?)
    }

    pub fn collect(&self, prefix: &str, out: &mut NamedParams<F>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((format!("{prefix}.bias"), b.clone()));
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm<F: Real> {
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
}

impl<F: Real> LayerNorm<F> {
    pub const EPS: f64 = 1e-5;

    pub fn new(width: usize) -> Result<Self> {
        Ok(Self {
            gamma: constant(&[width], 1.0)?,
            beta: constant(&[width], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(x.layer_norm(Some(&self.gamma), Some(&self.beta), F::lit(Self::EPS))?)
    }

    pub fn collect(&self, prefix: &str, out: &mut NamedParams<F>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }
}
