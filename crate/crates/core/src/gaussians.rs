//! Splat sets: plain records for I/O and validation, tensors for rendering.

use std::path::Path;

use gamba_autodiff::{Real, Tensor};

use crate::error::{Error, Result};

/// Flattened parameters per splat: position 3, opacity 1, SH 12, scale 3,
/// quaternion 4.
pub const PARAMS_PER_SPLAT: usize = 23;
/// First-order SH: 4 coefficients per RGB channel, stored coefficient-major
/// (`sh[k * 3 + channel]`).
pub const SH_COEFFS: usize = 12;
/// Upper bound on per-axis scale.
pub const S_MAX: f64 = 0.5;
/// Lower bound on per-axis scale; keeps `exp` of a saturated log-scale from
/// underflowing to a degenerate zero in f32.
pub const S_MIN: f64 = 1e-6;

const MAGIC: &[u8; 8] = b"GAMBAGS\0";
const VERSION: u32 = 1;
const HEADER: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat {
    pub position: [f32; 3],
    pub opacity: f32,
    pub sh: [f32; SH_COEFFS],
    pub scale: [f32; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f32; 4],
}

impl Splat {
    pub fn to_record(&self) -> [f32; PARAMS_PER_SPLAT] {
        let mut r = [0.0; PARAMS_PER_SPLAT];
        r[..3].copy_from_slice(&self.position);
        r[3] = self.opacity;
        r[4..16].copy_from_slice(&self.sh);
        r[16..19].copy_from_slice(&self.scale);
        r[19..].copy_from_slice(&self.rotation);
        r
    }

    pub fn from_record(r: &[f32]) -> Self {
        assert_eq!(r.len(), PARAMS_PER_SPLAT);
        Self {
            position: r[..3].try_into().unwrap(),
            opacity: r[3],
            sh: r[4..16].try_into().unwrap(),
            scale: r[16..19].try_into().unwrap(),
            rotation: r[19..].try_into().unwrap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianSet {
    pub splats: Vec<Splat>,
}

impl GaussianSet {
    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    /// Checks every range invariant; `s_max` bounds the scales.
    pub fn validate(&self, s_max: f64) -> Result<()> {
        for (i, s) in self.splats.iter().enumerate() {
            let bad = |what: &str| Err(Error::Degenerate(format!("splat {i}: {what}")));
            if s.to_record().iter().any(|v| !v.is_finite()) {
                return bad("non-finite parameter");
            }
            if s.position.iter().any(|p| !(-1.0..=1.0).contains(p)) {
                return bad("position outside [-1, 1]");
            }
            if !(0.0..=1.0).contains(&s.opacity) {
                return bad("opacity outside [0, 1]");
            }
            if s.scale.iter().any(|&v| !(v > 0.0 && f64::from(v) <= s_max + 1e-6)) {
                return bad("scale outside (0, s_max]");
            }
            let norm: f64 = s.rotation.iter().map(|&q| f64::from(q).powi(2)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-5 {
                return bad("quaternion is not unit length");
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(HEADER + self.len() * PARAMS_PER_SPLAT * 4);
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for s in &self.splats {
            for v in s.to_record() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < HEADER || &bytes[..8] != MAGIC {
            return Err(Error::parse(path, 0, "missing Gaussian set header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::parse(path, 8, format!("unsupported version {version}")));
        }
        let n = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let expected = HEADER + n * PARAMS_PER_SPLAT * 4;
        if bytes.len() != expected {
            return Err(Error::parse(
                path,
                bytes.len().min(expected),
                format!("expected {expected} bytes for {n} splats, found {}", bytes.len()),
            ));
        }
        let values: Vec<f32> = bytes[HEADER..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::parse(path, HEADER + 4 * i, "non-finite splat parameter"));
        }
        Ok(Self {
            splats: values.chunks_exact(PARAMS_PER_SPLAT).map(Splat::from_record).collect(),
        })
    }
}

/// Splat parameters as differentiable `[N x k]` tensors.
#[derive(Debug, Clone)]
pub struct GaussianTensors<F: Real> {
    pub position: Tensor<F>,
    pub opacity: Tensor<F>,
    pub sh: Tensor<F>,
    pub scale: Tensor<F>,
    pub rotation: Tensor<F>,
}

impl<F: Real> GaussianTensors<F> {
    pub fn len(&self) -> usize {
        self.position.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Constant (non-trainable) tensors holding `set`.
    pub fn from_set(set: &GaussianSet) -> Self {
        Self::build(set, false)
    }

    /// Trainable leaf tensors holding `set`.
    pub fn params_from_set(set: &GaussianSet) -> Self {
        Self::build(set, true)
    }

    fn build(set: &GaussianSet, trainable: bool) -> Self {
        let n = set.len();
        let column = |range: std::ops::Range<usize>| {
            let width = range.len();
            let data = set
                .splats
                .iter()
                .flat_map(|s| s.to_record()[range.clone()].to_vec())
                .map(|v| F::lit(f64::from(v)))
                .collect();
            let t = if trainable {
                Tensor::param(data, &[n, width])
            } else {
                Tensor::new(data, &[n, width])
            };
            t.expect("shape matches by construction")
        };
        Self {
            position: column(0..3),
            opacity: column(3..4),
            sh: column(4..16),
            scale: column(16..19),
            rotation: column(19..23),
        }
    }

    pub fn parts(&self) -> [&Tensor<F>; 5] {
        [&self.position, &self.opacity, &self.sh, &self.scale, &self.rotation]
    }

    pub fn to_set(&self) -> GaussianSet {
        let cols = self.parts().map(|t| t.to_vec());
        let widths = [3, 1, SH_COEFFS, 3, 4];
        let splats = (0..self.len())
            .map(|i| {
                let mut rec = Vec::with_capacity(PARAMS_PER_SPLAT);
                for (col, w) in cols.iter().zip(widths) {
                    rec.extend(col[i * w..(i + 1) * w].iter().map(|v| v.to_f64_lossy() as f32));
                }
                Splat::from_record(&rec)
            })
            .collect();
        GaussianSet { splats }
    }
}
