//! Per-token MLP decoding hidden features into constrained splat parameters.

use gamba_autodiff::{Real, Tensor};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussians::{GaussianTensors, SH_COEFFS, S_MAX, S_MIN};
use crate::nn::{Linear, NamedParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderConfig {
    pub input_dim: usize,
    /// Trunk depth; the first layer projects `input_dim` down to `width`.
    pub layers: usize,
    pub width: usize,
    /// Position bins per axis.
    pub bins: usize,
    pub s_max: f64,
}

impl DecoderConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            layers: 10,
            width: 64,
            bins: 32,
            s_max: S_MAX,
        }
    }

    /// Width of the fused head: position logits, opacity, SH, scale, quaternion.
    pub fn head_width(&self) -> usize {
        3 * self.bins + 1 + SH_COEFFS + 3 + 4
    }
}

/// Bias values of the fused head at initialization.
const INIT_OPACITY: f64 = 0.1;
const INIT_SCALE: f64 = 0.03;

#[derive(Debug, Clone)]
pub struct GaussianDecoder<F: Real> {
    pub config: DecoderConfig,
    pub trunk: Vec<Linear<F>>,
    pub head: Linear<F>,
    centers: Tensor<F>,
}

/// `K` bin centres evenly spaced over `[-1, 1]`, as a `[K x 1]` column.
pub fn bin_centers<F: Real>(bins: usize) -> Tensor<F> {
    let step = 2.0 / (bins - 1) as f64;
    Tensor::new((0..bins).map(|k| F::lit(-1.0 + step * k as f64)).collect(), &[bins, 1]).expect("column shape")
}

/// Softmax expectation of `logits` (`[K]`) over bin centres in `[-1, 1]`.
pub fn bin_expectation<F: Real>(logits: &Tensor<F>) -> Result<Tensor<F>> {
    if logits.ndim() != 1 || logits.dim(0) < 2 {
        return Err(Error::Usage(format!(
            "bin_expectation needs K >= 2 logits, got {:?}",
            logits.shape()
        )));
    }
    let k = logits.dim(0);
    let p = logits.reshape(&[1, k])?.softmax(1)?;
    Ok(p.matmul(&bin_centers(k))?.reshape(&[])?)
}

/// Row-wise unit normalization of `[N x 4]`; a zero row maps to the
/// identity quaternion with zero gradient.
pub fn normalize_quaternions<F: Real>(q: &Tensor<F>) -> Result<Tensor<F>> {
    if q.ndim() != 2 || q.dim(1) != 4 {
        return Err(Error::Usage(format!(
            "quaternions must be [N x 4], got {:?}",
            q.shape()
        )));
    }
    let n = q.dim(0);
    let x = q.to_vec();
    let mut out = Vec::with_capacity(n * 4);
    let mut norms = Vec::with_capacity(n);
    for row in x.chunks_exact(4) {
        let norm = row.iter().map(|&v| v * v).sum::<F>().sqrt();
        if norm > F::lit(1e-12) {
            out.extend(row.iter().map(|&v| v / norm));
        } else {
            out.extend([F::one(), F::zero(), F::zero(), F::zero()]);
        }
        norms.push(norm);
    }
    let y = out.clone();
    Ok(Tensor::from_op(
        "normalize_quaternions",
        out,
        vec![n, 4],
        vec![q.clone()],
        move |g, _| {
            let mut gx = vec![F::zero(); n * 4];
            for i in 0..n {
                let norm = norms[i];
                if norm <= F::lit(1e-12) {
                    continue;
                }
                let (yr, gr) = (&y[i * 4..i * 4 + 4], &g[i * 4..i * 4 + 4]);
                let dot: F = (0..4).map(|k| yr[k] * gr[k]).sum();
                for k in 0..4 {
                    gx[i * 4 + k] = (gr[k] - yr[k] * dot) / norm;
                }
            }
            vec![Some(gx)]
        },
    )?)
}

impl<F: Real> GaussianDecoder<F> {
    pub fn new(config: DecoderConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.layers == 0 || config.bins < 2 || config.s_max <= S_MIN {
            return Err(Error::Config(format!("invalid decoder configuration {config:?}")));
        }
        let mut trunk = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            let input = if i == 0 { config.input_dim } else { config.width };
            trunk.push(Linear::silu_init(input, config.width, rng)?);
        }
        let head = Linear::new(config.width, config.head_width(), true, rng)?;
        let bias = head.bias.as_ref().expect("head has a bias");
        let k = config.bins;
        bias.update_data(|b| {
            b.iter_mut().for_each(|v| *v = F::zero());
            b[3 * k] = F::lit((INIT_OPACITY / (1.0 - INIT_OPACITY)).ln());
            for v in &mut b[3 * k + 1 + SH_COEFFS..3 * k + 4 + SH_COEFFS] {
                *v = F::lit(INIT_SCALE.ln());
            }
            b[3 * k + 4 + SH_COEFFS] = F::one();
        })?;
        Ok(Self {
            config,
            trunk,
            head,
            centers: bin_centers(k),
        })
    }

    /// Decodes `[N x input_dim]` hidden features into N splats.
    pub fn forward(&self, hidden: &Tensor<F>) -> Result<GaussianTensors<F>> {
        if hidden.ndim() != 2 || hidden.dim(1) != self.config.input_dim {
            return Err(Error::Usage(format!(
                "decoder expects [N x {}] features, got {:?}",
                self.config.input_dim,
                hidden.shape()
            )));
        }
        let n = hidden.dim(0);
        let k = self.config.bins;
        let mut h = hidden.clone();
        for layer in &self.trunk {
            h = layer.forward(&h)?.silu()?;
        }
        let out = self.head.forward(&h)?;
        let probs = out.narrow_last(0, 3 * k)?.reshape(&[n * 3, k])?.softmax(1)?;
        let position = probs.matmul(&self.centers)?.reshape(&[n, 3])?;
        let mut at = 3 * k;
        let mut take = |w: usize| {
            let t = out.narrow_last(at, w);
            at += w;
            t
        };
        let opacity = take(1)?.sigmoid()?;
        let sh = take(SH_COEFFS)?;
        let scale = take(3)?
            .clamp_min(F::lit(S_MIN.ln()))?
            .clamp_max(F::lit(self.config.s_max.ln()))?
            .exp()?;
        let rotation = normalize_quaternions(&take(4)?)?;
        Ok(GaussianTensors {
            position,
            opacity,
            sh,
            scale,
            rotation,
        })
    }

    pub fn collect(&self, prefix: &str, out: &mut NamedParams<F>) {
        for (i, l) in self.trunk.iter().enumerate() {
            l.collect(&format!("{prefix}.trunk.{i}"), out);
        }
        self.head.collect(&format!("{prefix}.head"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::new(v.to_vec(), &[v.len()]).unwrap()
    }

    #[test]
    fn bin_expectation_cases() {
        assert!(bin_expectation(&t(&[0.0; 32])).unwrap().item().unwrap().abs() < 1e-12);
        let mut one_hot = vec![-1e3; 8];
        one_hot[7] = 0.0;
        assert!((bin_expectation(&t(&one_hot)).unwrap().item().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(bin_expectation(&t(&[0.0, 0.0])).unwrap().item().unwrap(), 0.0);
        let v = bin_expectation(&t(&[3f64.ln(), 0.0])).unwrap().item().unwrap();
        assert!((v + 0.5).abs() < 1e-12);
        assert!(bin_expectation(&t(&[0.0])).is_err());
    }

    #[test]
    fn zero_quaternion_falls_back_to_identity() {
        let q = Tensor::param(vec![0.0, 0.0, 0.0, 0.0, 0.0, 3.0, 0.0, 4.0], &[2, 4]).unwrap();
        let y = normalize_quaternions(&q).unwrap();
        assert_eq!(y.to_vec(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.6, 0.0, 0.8]);
        y.sum().unwrap().backward().unwrap();
        assert_eq!(&q.grad().unwrap()[..4], &[0.0; 4]);
    }

    #[test]
    fn full_scale_head_layout() {
        let cfg = DecoderConfig::new(1024);
        assert_eq!((cfg.layers, cfg.width), (10, 64));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dec = GaussianDecoder::<f32>::new(DecoderConfig::new(16), &mut rng).unwrap();
        let hidden = Tensor::zeros(&[5, 16]);
        let g = dec.forward(&hidden).unwrap();
        let widths: Vec<usize> = g.parts().iter().map(|t| t.dim(1)).collect();
        assert_eq!(widths, vec![3, 1, 12, 3, 4]);
        assert_eq!(widths.iter().sum::<usize>(), 23);
    }
}
