//! Flat `key = value` run configuration.
//!
//! Every key has a default; unknown keys and malformed values are errors.
//! `#` starts a comment.

use std::fmt::Write as _;
use std::path::Path;

use gamba_autodiff::AdamWConfig;

use crate::backbone::BackboneConfig;
use crate::decoder::DecoderConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;

macro_rules! config {
    ($( $(#[doc = $doc:literal])+ $name:ident : $ty:ty = $default:expr ),+ $(,)?) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct Config {
            $( $(#[doc = $doc])+ pub $name: $ty, )+
        }

        impl Default for Config {
            fn default() -> Self {
                Self { $( $name: $default, )+ }
            }
        }

        impl Config {
            /// `(key, description)` for every setting, in file order.
            pub const KEYS: &'static [(&'static str, &'static str)] = &[
                $( (stringify!($name), concat!($($doc),+)), )+
            ];

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( stringify!($name) => {
                        self.$name = value.trim().parse::<$ty>().map_err(|e| {
                            Error::Config(format!("invalid value {value:?} for {key}: {e}"))
                        })?;
                    } )+
                    _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $( stringify!($name) => Some(self.$name.to_string()), )+
                    _ => None,
                }
            }
        }
    };
}

config! {
    /// Square image resolution in pixels.
    image_size: usize = 64,
    /// Patch size of the image tokenizer.
    patch: usize = 8,
    /// Image token channels.
    token_dim: usize = 128,
    /// Number of splats predicted per object.
    n_gaussians: usize = 1024,
    /// Width of the learnable splat embeddings.
    embed_dim: usize = 512,
    /// Backbone width.
    d_model: usize = 128,
    /// Number of backbone layers.
    depth: usize = 4,
    /// SSM state size per channel.
    d_state: usize = 16,
    /// Inner expansion factor of each block.
    expand: usize = 2,
    /// Causal convolution width.
    conv_width: usize = 4,
    /// Hidden width of the camera MLP.
    camera_hidden: usize = 64,
    /// Decoder trunk depth.
    decoder_layers: usize = 10,
    /// Decoder trunk width.
    decoder_width: usize = 64,
    /// Position bins per axis.
    bins: usize = 32,
    /// Largest allowed splat scale.
    s_max: f64 = 0.5,
    /// AdamW learning rate.
    lr: f64 = 1e-4,
    /// AdamW decoupled weight decay.
    weight_decay: f64 = 0.05,
    /// AdamW first-moment decay.
    beta1: f64 = 0.9,
    /// AdamW second-moment decay.
    beta2: f64 = 0.999,
    /// AdamW denominator epsilon.
    adam_eps: f64 = 1e-8,
    /// Global gradient-norm clip.
    clip_norm: f64 = 1.0,
    /// Weight of the alpha-vs-mask term.
    lambda_mask: f64 = 0.01,
    /// Weight of the perceptual term.
    lambda_lpips: f64 = 0.1,
    /// Weight of the centre distance term.
    lambda_dist: f64 = 1.0,
    /// Steps during which the distance term is active.
    dist_warmup_steps: u64 = 1000,
    /// Angles of the radial polygon.
    n_angles: usize = 360,
    /// Training steps.
    steps: u64 = 2000,
    /// Objects per step.
    batch_objects: usize = 1,
    /// Supervised views per object per step, including the reference.
    views_per_step: usize = 6,
    /// Views per object available for training, spread evenly over the sphere; 0 means all.
    train_views: usize = 0,
    /// Steps between checkpoints; 0 disables periodic checkpoints.
    checkpoint_every: u64 = 500,
    /// Steps between metric log rows.
    log_every: u64 = 10,
    /// Master seed.
    seed: u64 = 0,
    /// Dataset directory.
    data_dir: String = "data".to_string(),
    /// Run directory for checkpoints and logs.
    run_dir: String = "runs/default".to_string(),
    /// Objects generated by gen-data.
    n_objects: usize = 1,
    /// Views rendered per object by gen-data.
    views_per_object: usize = 48,
    /// Fewest splats in a synthetic object.
    min_object_splats: usize = 8,
    /// Most splats in a synthetic object.
    max_object_splats: usize = 64,
    /// Distance of the synthetic cameras from the origin.
    camera_radius: f64 = 2.0,
}

impl Config {
    /// Full-scale hyperparameters; recorded for reference, not sized for a
    /// desktop run.
    pub fn full_scale() -> Self {
        Self {
            image_size: 512,
            patch: 16,
            token_dim: 768,
            n_gaussians: 16384,
            d_model: 1024,
            depth: 10,
            ..Self::default()
        }
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(text, path)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply(&mut self, text: &str, path: &Path) -> Result<()> {
        let mut offset = 0;
        for raw in text.split_inclusive('\n') {
            let line = raw.split('#').next().unwrap_or("").trim();
            if !line.is_empty() {
                let (key, value) = line
                    .split_once('=')
                    .ok_or_else(|| Error::parse(path, offset, format!("expected key = value, got {line:?}")))?;
                self.set(key.trim(), value)
                    .map_err(|e| Error::parse(path, offset, e.to_string()))?;
            }
            offset += raw.len();
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::parse(&text, path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, _) in Self::KEYS {
            writeln!(out, "{key} = {}", self.get(key).expect("known key")).expect("string write");
        }
        out
    }

    pub fn backbone(&self) -> BackboneConfig {
        BackboneConfig {
            image_size: self.image_size,
            patch: self.patch,
            token_dim: self.token_dim,
            n_gaussians: self.n_gaussians,
            embed_dim: self.embed_dim,
            d_model: self.d_model,
            depth: self.depth,
            d_state: self.d_state,
            expand: self.expand,
            conv_width: self.conv_width,
            camera_hidden: self.camera_hidden,
        }
    }

    pub fn decoder(&self) -> DecoderConfig {
        DecoderConfig {
            input_dim: self.d_model,
            layers: self.decoder_layers,
            width: self.decoder_width,
            bins: self.bins,
            s_max: self.s_max,
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            mask: self.lambda_mask,
            lpips: self.lambda_lpips,
            dist: self.lambda_dist,
            dist_warmup_steps: self.dist_warmup_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone().validate()?;
        self.loss_weights().validate()?;
        let checks = [
            (
                self.decoder_layers > 0 && self.decoder_width > 0,
                "decoder_layers and decoder_width must be positive",
            ),
            (self.bins >= 2, "bins must be at least 2"),
            (self.s_max > 0.0, "s_max must be positive"),
            (self.lr > 0.0 && self.lr.is_finite(), "lr must be positive"),
            (self.weight_decay >= 0.0, "weight_decay must be non-negative"),
            (
                (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2),
                "betas must be in [0, 1)",
            ),
            (self.adam_eps > 0.0, "adam_eps must be positive"),
            (self.clip_norm > 0.0, "clip_norm must be positive"),
            (
                self.n_angles >= crate::constraints::MIN_ANGLES,
                "n_angles must be at least 8",
            ),
            (self.batch_objects > 0, "batch_objects must be positive"),
            (self.views_per_step > 0, "views_per_step must be positive"),
            (self.log_every > 0, "log_every must be positive"),
            (self.views_per_object > 0, "views_per_object must be positive"),
            (
                self.min_object_splats > 0 && self.min_object_splats <= self.max_object_splats,
                "need 0 < min_object_splats <= max_object_splats",
            ),
            (self.camera_radius > 1.0, "camera_radius must exceed 1"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config(msg.to_string()));
            }
        }
        Ok(())
    }
}
