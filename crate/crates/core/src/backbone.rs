//! Conditional sequence backbone over N learnable splat tokens.
//!
//! Each layer prepends a projected camera token and projected image tokens
//! to the running splat tokens, runs one Mamba block over the whole
//! sequence, and keeps only the last N outputs.

use std::path::Path;

use gamba_autodiff::{Real, Tensor};
use rand::Rng;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::nn::{self, LayerNorm, Linear, NamedParams};
use crate::ssm::{MambaBlockParams, MambaConfig};

/// Raw camera conditioning width: 12 extrinsic + 4 intrinsic values.
pub const CAMERA_RAW: usize = 16;
/// Camera embedding width, fixed by the `D x 16` camera projection.
pub const CAMERA_EMBED: usize = 16;

const TOKEN_MAGIC: &[u8; 8] = b"GAMBATOK";
const TOKEN_HEADER: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackboneConfig {
    /// Square input resolution.
    pub image_size: usize,
    pub patch: usize,
    /// Image token channels `C`.
    pub token_dim: usize,
    /// Splat token count `N`.
    pub n_gaussians: usize,
    /// Width of the learnable splat embeddings before the lift.
    pub embed_dim: usize,
    /// Block width `D`.
    pub d_model: usize,
    pub depth: usize,
    pub d_state: usize,
    pub expand: usize,
    pub conv_width: usize,
    pub camera_hidden: usize,
}

impl BackboneConfig {
    pub fn n_image_tokens(&self) -> usize {
        (self.image_size / self.patch).pow(2)
    }

    pub fn mamba(&self) -> MambaConfig {
        MambaConfig {
            d_model: self.d_model,
            d_state: self.d_state,
            expand: self.expand,
            conv_width: self.conv_width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.image_size == 0 || self.image_size % self.patch != 0 {
            return Err(Error::Config(format!(
                "image size {} is not divisible by patch size {}",
                self.image_size, self.patch
            )));
        }
        let positive = [
            ("token_dim", self.token_dim),
            ("n_gaussians", self.n_gaussians),
            ("embed_dim", self.embed_dim),
            ("d_model", self.d_model),
            ("depth", self.depth),
            ("d_state", self.d_state),
            ("expand", self.expand),
            ("conv_width", self.conv_width),
            ("camera_hidden", self.camera_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Learned linear patch embedding plus a per-patch position embedding.
#[derive(Debug, Clone)]
pub struct PatchEmbedder<F: Real> {
    pub patch: usize,
    pub image_size: usize,
    pub proj: Linear<F>,
    pub pos: Tensor<F>,
}

impl<F: Real> PatchEmbedder<F> {
    pub fn new(image_size: usize, patch: usize, token_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let l = (image_size / patch).pow(2);
        Ok(Self {
            patch,
            image_size,
            proj: Linear::new(patch * patch * 3, token_dim, true, rng)?,
            pos: nn::normal(&[l, token_dim], 0.02, rng)?,
        })
    }

    /// `[H x W x 3]` image in `[0, 1]` to `[L x C]` tokens, patches in
    /// row-major order.
    pub fn tokenize(&self, image: &Tensor<F>) -> Result<Tensor<F>> {
        let shape = image.shape();
        if shape.len() != 3 || shape[2] != 3 {
            return Err(Error::Usage(format!("image must be [H x W x 3], got {shape:?}")));
        }
        let (h, w, p) = (shape[0], shape[1], self.patch);
        if h % p != 0 || w % p != 0 {
            return Err(Error::Config(format!(
                "{h}x{w} image is not divisible by patch size {p}"
            )));
        }
        if h != self.image_size || w != self.image_size {
            return Err(Error::Config(format!(
                "image is {h}x{w}, tokenizer expects {0}x{0}",
                self.image_size
            )));
        }
        let data = image.data();
        let (gh, gw) = (h / p, w / p);
        let mut patches = Vec::with_capacity(h * w * 3);
        for py in 0..gh {
            for px in 0..gw {
                for y in 0..p {
                    let row = ((py * p + y) * w + px * p) * 3;
                    patches.extend_from_slice(&data[row..row + p * 3]);
                }
            }
        }
        drop(data);
        let patches = Tensor::new(patches, &[gh * gw, p * p * 3])?;
        Ok(self.proj.forward(&patches)?.add(&self.pos)?)
    }

    pub fn collect(&self, prefix: &str, out: &mut NamedParams<F>) {
        self.proj.collect(&format!("{prefix}.proj"), out);
        out.push((format!("{prefix}.pos"), self.pos.clone()));
    }
}

/// Two-layer MLP from the 16 raw camera values to the 16-wide embedding.
#[derive(Debug, Clone)]
pub struct CameraEmbedder<F: Real> {
    pub fc1: Linear<F>,
    pub fc2: Linear<F>,
}

impl<F: Real> CameraEmbedder<F> {
    pub fn new(hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(CAMERA_RAW, hidden, true, rng)?,
            fc2: Linear::new(hidden, CAMERA_EMBED, true, rng)?,
        })
    }

    pub fn raw(cam: &Camera) -> Tensor<F> {
        let raw = cam.raw_params().map(F::lit).to_vec();
        Tensor::new(raw, &[1, CAMERA_RAW]).expect("16 values")
    }

    /// `[1 x 16]` raw camera row to a `[1 x 16]` embedding.
    pub fn forward(&self, raw: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(self.fc2.forward(&self.fc1.forward(raw)?.silu()?)?)
    }

    pub fn embed(&self, cam: &Camera) -> Result<Tensor<F>> {
        self.forward(&Self::raw(cam))
    }

    pub fn collect(&self, prefix: &str, out: &mut NamedParams<F>) {
        self.fc1.collect(&format!("{prefix}.fc1"), out);
        self.fc2.collect(&format!("{prefix}.fc2"), out);
    }
}

/// One conditioned layer: camera projection `P_c` (`D x 16`), image-token
/// projection `P_x` (`D x C`) and the Mamba block.
#[derive(Debug, Clone)]
pub struct GambaLayer<F: Real> {
    pub p_c: Linear<F>,
    pub p_x: Linear<F>,
    pub block: MambaBlockParams<F>,
}

impl<F: Real> GambaLayer<F> {
    pub fn new(cfg: &BackboneConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            p_c: Linear::new(CAMERA_EMBED, cfg.d_model, false, rng)?,
            p_x: Linear::new(cfg.token_dim, cfg.d_model, false, rng)?,
            block: MambaBlockParams::new(cfg.mamba(), rng)?,
        })
    }

    pub fn collect(&self, prefix: &str, out: &mut NamedParams<F>) {
        self.p_c.collect(&format!("{prefix}.p_c"), out);
        self.p_x.collect(&format!("{prefix}.p_x"), out);
        self.block.collect(&format!("{prefix}.block"), out);
    }
}

/// Prepend `[P_c T ; P_x X]` to `o_prev`, run the block, drop the prefix.
pub fn gamba_block_forward<F: Real>(
    layer: &GambaLayer<F>,
    camera: &Tensor<F>,
    tokens: &Tensor<F>,
    o_prev: &Tensor<F>,
) -> Result<Tensor<F>> {
    let cam_tok = layer.p_c.forward(camera)?;
    let img_tok = layer.p_x.forward(tokens)?;
    let prefix = cam_tok.dim(0) + img_tok.dim(0);
    let n = o_prev.dim(0);
    let seq = Tensor::concat_rows(&[&cam_tok, &img_tok, o_prev])?;
    Ok(layer.block.forward(&seq)?.slice_rows(prefix, n)?)
}

#[derive(Debug, Clone)]
pub struct Backbone<F: Real> {
    pub config: BackboneConfig,
    pub patch: PatchEmbedder<F>,
    pub camera: CameraEmbedder<F>,
    /// Learnable splat embeddings `E`, `[N x embed_dim]`.
    pub embeddings: Tensor<F>,
    pub lift: Linear<F>,
    pub layers: Vec<GambaLayer<F>>,
    pub final_norm: LayerNorm<F>,
}

impl<F: Real> Backbone<F> {
    pub fn new(config: BackboneConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            patch: PatchEmbedder::new(config.image_size, config.patch, config.token_dim, rng)?,
            camera: CameraEmbedder::new(config.camera_hidden, rng)?,
            embeddings: nn::normal(&[config.n_gaussians, config.embed_dim], 0.02, rng)?,
            lift: Linear::new(config.embed_dim, config.d_model, true, rng)?,
            layers: (0..config.depth)
                .map(|_| GambaLayer::new(&config, rng))
                .collect::<Result<_>>()?,
            final_norm: LayerNorm::new(config.d_model)?,
        })
    }

    /// Hidden splat features from image tokens `[L x C]` and a raw
    /// `[1 x 16]` camera row.
    pub fn forward_tokens(&self, tokens: &Tensor<F>, camera_raw: &Tensor<F>) -> Result<Tensor<F>> {
        if tokens.ndim() != 2 || tokens.dim(1) != self.config.token_dim {
            return Err(Error::Usage(format!(
                "tokens must be [L x {}], got {:?}",
                self.config.token_dim,
                tokens.shape()
            )));
        }
        let t = self.camera.forward(camera_raw)?;
        let mut o = self.lift.forward(&self.embeddings)?;
        for layer in &self.layers {
            o = gamba_block_forward(layer, &t, tokens, &o)?;
        }
        self.final_norm.forward(&o)
    }

    /// Hidden splat features `[N x D]` for an `[H x W x 3]` image.
    pub fn forward(&self, image: &Tensor<F>, cam: &Camera) -> Result<Tensor<F>> {
        let tokens = self.patch.tokenize(image)?;
        self.forward_tokens(&tokens, &CameraEmbedder::raw(cam))
    }

    pub fn collect(&self, prefix: &str, out: &mut NamedParams<F>) {
        self.patch.collect(&format!("{prefix}.patch"), out);
        self.camera.collect(&format!("{prefix}.camera"), out);
        out.push((format!("{prefix}.embeddings"), self.embeddings.clone()));
        self.lift.collect(&format!("{prefix}.lift"), out);
        for (i, l) in self.layers.iter().enumerate() {
            l.collect(&format!("{prefix}.layers.{i}"), out);
        }
        self.final_norm.collect(&format!("{prefix}.final_norm"), out);
    }
}

/// Runs `params` on one image and camera.
pub fn backbone_forward<F: Real>(params: &Backbone<F>, image: &Tensor<F>, cam: &Camera) -> Result<Tensor<F>> {
    params.forward(image, cam)
}

/// Writes `[L x C]` tokens for the external-tokenizer plug point.
pub fn write_tokens(path: &Path, tokens: &[f32], l: usize, c: usize) -> Result<()> {
    if tokens.len() != l * c {
        return Err(Error::Usage(format!("{} values for {l}x{c} tokens", tokens.len())));
    }
    let mut bytes = Vec::with_capacity(TOKEN_HEADER + tokens.len() * 4);
    bytes.extend_from_slice(TOKEN_MAGIC);
    bytes.extend_from_slice(&(l as u32).to_le_bytes());
    bytes.extend_from_slice(&(c as u32).to_le_bytes());
    for v in tokens {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a token file as `(values, L, C)`.
pub fn read_tokens(path: &Path) -> Result<(Vec<f32>, usize, usize)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < TOKEN_HEADER || &bytes[..8] != TOKEN_MAGIC {
        return Err(Error::parse(path, 0, "missing token file header"));
    }
    let l = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let c = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = TOKEN_HEADER + l * c * 4;
    if bytes.len() != expected {
        return Err(Error::parse(
            path,
            bytes.len().min(expected),
            format!("expected {expected} bytes for {l}x{c} tokens, found {}", bytes.len()),
        ));
    }
    let values: Vec<f32> = bytes[TOKEN_HEADER..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::parse(path, TOKEN_HEADER + 4 * i, "non-finite token value"));
    }
    Ok((values, l, c))
}
