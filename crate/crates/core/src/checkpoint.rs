//! Versioned binary training checkpoints.
//!
//! Layout, little-endian:
//!
//! ```text
//! "GAMBACKP" u32 version
//! u64 config length, config text
//! u64 step
//! [u8; 32] rng seed, u64 rng stream, u128 rng word position
//! u64 optimizer step
//! u32 tensor count, then per tensor:
//!   u32 name length, name, u32 rank, u64 dims...,
//!   f32 values, f32 first moment, f32 second moment
//! ```

use std::path::Path;

use gamba_autodiff::{AdamW, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::GambaModel;

const MAGIC: &[u8; 8] = b"GAMBACKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
    pub first_moment: Vec<f32>,
    pub second_moment: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: Config,
    /// Completed training steps.
    pub step: u64,
    pub rng: RngState,
    pub optimizer_step: u64,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn capture(config: &Config, step: u64, rng: &ChaCha8Rng, model: &GambaModel<f32>, opt: &AdamW<f32>) -> Self {
        let tensors = model
            .named_params()
            .into_iter()
            .enumerate()
            .map(|(i, (name, t))| TensorRecord {
                name,
                shape: t.shape().to_vec(),
                values: t.to_vec(),
                first_moment: opt.first_moment[i].clone(),
                second_moment: opt.second_moment[i].clone(),
            })
            .collect();
        Self {
            config: config.clone(),
            step,
            rng: RngState::capture(rng),
            optimizer_step: opt.step,
            tensors,
        }
    }

    /// Rebuilds the model, optimizer and sampling generator. Every model
    /// tensor must be present with a matching shape.
    pub fn restore(&self) -> Result<(GambaModel<f32>, AdamW<f32>, ChaCha8Rng)> {
        let mut init_rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let model = GambaModel::<f32>::new(&self.config, &mut init_rng)?;
        let named = model.named_params();
        if named.len() != self.tensors.len() {
            return Err(Error::Degenerate(format!(
                "checkpoint holds {} tensors, model has {}",
                self.tensors.len(),
                named.len()
            )));
        }
        let params: Vec<Tensor<f32>> = named.iter().map(|(_, t)| t.clone()).collect();
        let mut opt = AdamW::new(self.config.optimizer(), &params);
        for (i, ((name, t), rec)) in named.iter().zip(&self.tensors).enumerate() {
            if *name != rec.name || t.shape() != rec.shape.as_slice() {
                return Err(Error::Degenerate(format!(
                    "checkpoint tensor {:?} {:?} does not match model tensor {name:?} {:?}",
                    rec.name,
                    rec.shape,
                    t.shape()
                )));
            }
            t.assign(&rec.values)?;
            opt.first_moment[i].clone_from(&rec.first_moment);
            opt.second_moment[i].clone_from(&rec.second_moment);
        }
        opt.step = self.optimizer_step;
        Ok((model, opt, self.rng.restore()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let config = self.config.to_text();
        out.extend_from_slice(&(config.len() as u64).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out.extend_from_slice(&self.optimizer_step.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for values in [&t.values, &t.first_moment, &t.second_moment] {
                for v in values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, at: 0, path };
        if r.take(8)? != MAGIC {
            return Err(Error::parse(path, 0, "not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::parse(
                path,
                8,
                format!("checkpoint version {version}, expected {VERSION}"),
            ));
        }
        let config_len = r.u64()? as usize;
        let config_at = r.at;
        let text = std::str::from_utf8(r.take(config_len)?)
            .map_err(|_| Error::parse(path, config_at, "config snapshot is not UTF-8"))?;
        let config = Config::parse(text, path)?;
        let step = r.u64()?;
        let seed = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let optimizer_step = r.u64()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name_at = r.at;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::parse(path, name_at, "tensor name is not UTF-8"))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let values = r.f32s(numel)?;
            let first_moment = r.f32s(numel)?;
            let second_moment = r.f32s(numel)?;
            tensors.push(TensorRecord {
                name,
                shape,
                values,
                first_moment,
                second_moment,
            });
        }
        if r.at != bytes.len() {
            return Err(Error::parse(path, r.at, "trailing bytes after checkpoint"));
        }
        Ok(Self {
            config,
            step,
            rng: RngState { seed, stream, word_pos },
            optimizer_step,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::parse(
                self.path,
                self.at,
                format!("truncated: wanted {n} more bytes"),
            ));
        };
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).unwrap_or(usize::MAX))?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny() -> Config {
        Config {
            image_size: 16,
            patch: 8,
            token_dim: 8,
            n_gaussians: 4,
            embed_dim: 8,
            d_model: 8,
            depth: 1,
            d_state: 2,
            camera_hidden: 8,
            decoder_layers: 2,
            decoder_width: 8,
            bins: 4,
            ..Config::default()
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let cfg = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = GambaModel::<f32>::new(&cfg, &mut rng).unwrap();
        let mut opt = AdamW::new(cfg.optimizer(), &model.params());
        opt.step = 7;
        opt.first_moment[0][0] = 0.25;
        let mut sampler = ChaCha8Rng::seed_from_u64(9);
        let _: u64 = sampler.random();
        let ck = Checkpoint::capture(&cfg, 7, &sampler, &model, &opt);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, Path::new("ck")).unwrap();
        assert_eq!(back, ck);
        let (m2, o2, mut r2) = back.restore().unwrap();
        let again = Checkpoint::capture(&cfg, 7, &r2, &m2, &o2);
        assert_eq!(again.to_bytes(), bytes);
        assert_eq!(r2.random::<u64>(), sampler.random::<u64>());
    }

    #[test]
    fn version_and_truncation_are_checked() {
        let cfg = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = GambaModel::<f32>::new(&cfg, &mut rng).unwrap();
        let opt = AdamW::new(cfg.optimizer(), &model.params());
        let mut bytes = Checkpoint::capture(&cfg, 0, &rng, &model, &opt).to_bytes();
        let p = Path::new("ck");
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 1], p),
            Err(Error::Parse { .. })
        ));
        bytes[8] = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes, p),
            Err(Error::Parse { offset: 8, .. })
        ));
    }
}
