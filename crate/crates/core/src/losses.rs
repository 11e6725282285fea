//! Training objective: color MSE, alpha-vs-mask MSE, an optional perceptual
//! term and the warm-up-only centre distance penalty.

use gamba_autodiff::{Real, Tensor};
use rand::Rng;

use crate::error::{Error, Result};
use crate::image::ImageBuf;
use crate::render::RenderedImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub mask: f64,
    pub lpips: f64,
    pub dist: f64,
    /// The distance term applies while `step < dist_warmup_steps`.
    pub dist_warmup_steps: u64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mask: 0.01,
            lpips: 0.1,
            dist: 1.0,
            dist_warmup_steps: 1000,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_mask", self.mask),
            ("lambda_lpips", self.lpips),
            ("lambda_dist", self.dist),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be a finite non-negative number, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// A perceptual distance between `[H x W x 3]` images, returning a scalar.
pub trait PerceptualLoss<F: Real>: Send + Sync {
    fn distance(&self, pred: &Tensor<F>, target: &Tensor<F>) -> Result<Tensor<F>>;
}

/// The loss value and its unweighted parts.
#[derive(Debug, Clone)]
pub struct LossTerms<F: Real> {
    pub total: Tensor<F>,
    pub rgb: f64,
    pub mask: f64,
    pub lpips: f64,
    pub dist: f64,
}

/// Combines the terms; `dist` is the already-computed distance penalty and
/// `perceptual` the registered backend, if any.
pub fn total_loss<F: Real>(
    pred: &RenderedImage<F>,
    gt_rgb: &Tensor<F>,
    gt_mask: &Tensor<F>,
    dist: Option<&Tensor<F>>,
    weights: &LossWeights,
    step: u64,
    perceptual: Option<&dyn PerceptualLoss<F>>,
) -> Result<LossTerms<F>> {
    let rgb = pred.rgb.mse(gt_rgb)?;
    let mask = pred.alpha.mse(gt_mask)?;
    let mut terms = LossTerms {
        rgb: rgb.item()?.to_f64_lossy(),
        mask: mask.item()?.to_f64_lossy(),
        lpips: 0.0,
        dist: 0.0,
        total: rgb.clone(),
    };
    let mut total = rgb.add(&mask.scale(F::lit(weights.mask))?)?;
    if let Some(p) = perceptual {
        let l = p.distance(&pred.rgb, gt_rgb)?;
        terms.lpips = l.item()?.to_f64_lossy();
        total = total.add(&l.scale(F::lit(weights.lpips))?)?;
    }
    if let Some(d) = dist {
        if step < weights.dist_warmup_steps {
            terms.dist = d.item()?.to_f64_lossy();
            total = total.add(&d.scale(F::lit(weights.dist))?)?;
        }
    }
    terms.total = total;
    Ok(terms)
}

/// Uniform random RGB color in `[0, 1)`.
pub fn sample_background(rng: &mut impl Rng) -> [f64; 3] {
    std::array::from_fn(|_| rng.random::<f64>())
}

/// Composites premultiplied `fg` (`[H x W x 3]`, i.e. already weighted by
/// alpha) over a solid `color`: `fg + (1 − alpha) color`.
pub fn random_background(fg: &ImageBuf, alpha: &ImageBuf, color: [f64; 3]) -> Result<ImageBuf> {
    if fg.channels != 3 || alpha.channels != 1 || (fg.height, fg.width) != (alpha.height, alpha.width) {
        return Err(Error::Usage(
            "random_background needs matching [H x W x 3] and [H x W x 1] images".into(),
        ));
    }
    let data = fg
        .data
        .chunks_exact(3)
        .zip(&alpha.data)
        .flat_map(|(px, &a)| {
            let t = 1.0 - f64::from(a);
            [0, 1, 2].map(|k| (f64::from(px[k]) + t * color[k]) as f32)
        })
        .collect();
    ImageBuf::new(fg.height, fg.width, 3, data)
}
