//! Backbone and decoder composed into the image-to-splats model.

use gamba_autodiff::{Real, Tensor};
use rand::Rng;

use crate::backbone::Backbone;
use crate::camera::Camera;
use crate::config::Config;
use crate::decoder::GaussianDecoder;
use crate::error::Result;
use crate::gaussians::GaussianTensors;
use crate::nn::NamedParams;

#[derive(Debug, Clone)]
pub struct GambaModel<F: Real> {
    pub backbone: Backbone<F>,
    pub decoder: GaussianDecoder<F>,
}

impl<F: Real> GambaModel<F> {
    pub fn new(cfg: &Config, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            backbone: Backbone::new(cfg.backbone(), rng)?,
            decoder: GaussianDecoder::new(cfg.decoder(), rng)?,
        })
    }

    /// Splats for an `[H x W x 3]` reference image seen from `cam`.
    pub fn forward(&self, image: &Tensor<F>, cam: &Camera) -> Result<GaussianTensors<F>> {
        let hidden = self.backbone.forward(image, cam)?;
        self.decoder.forward(&hidden)
    }

    /// Every trainable tensor with a stable dotted name.
    pub fn named_params(&self) -> NamedParams<F> {
        let mut out = Vec::new();
        self.backbone.collect("backbone", &mut out);
        self.decoder.collect("decoder", &mut out);
        out
    }

    pub fn params(&self) -> Vec<Tensor<F>> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }
}
