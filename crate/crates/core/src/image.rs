//! Float images in `[H x W x C]` layout with PNG and raw-float I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use gamba_autodiff::{Real, Tensor};

use crate::error::{Error, Result};

const RAW_MAGIC: &[u8; 8] = b"GAMBAIMG";
const RAW_HEADER: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ImageBuf {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Degenerate(format!(
                "image data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Channels `[start, start + count)` as a new image.
    pub fn channels_range(&self, start: usize, count: usize) -> Self {
        assert!(start + count <= self.channels);
        let data = self
            .data
            .chunks_exact(self.channels)
            .flat_map(|px| px[start..start + count].iter().copied())
            .collect();
        Self {
            height: self.height,
            width: self.width,
            channels: count,
            data,
        }
    }

    pub fn from_tensor<F: Real>(t: &Tensor<F>) -> Result<Self> {
        let shape = t.shape();
        if shape.len() != 3 {
            return Err(Error::Degenerate(format!(
                "expected an [H x W x C] tensor, got {shape:?}"
            )));
        }
        let data = t.data().iter().map(|v| v.to_f64_lossy() as f32).collect();
        Self::new(shape[0], shape[1], shape[2], data)
    }

    pub fn to_tensor<F: Real>(&self) -> Tensor<F> {
        Tensor::new(
            self.data.iter().map(|&v| F::lit(f64::from(v))).collect(),
            &[self.height, self.width, self.channels],
        )
        .expect("shape matches by construction")
    }

    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(RAW_HEADER + self.data.len() * 4);
        bytes.extend_from_slice(RAW_MAGIC);
        for d in [self.height, self.width, self.channels] {
            bytes.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_raw(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < RAW_HEADER || &bytes[..8] != RAW_MAGIC {
            return Err(Error::parse(path, 0, "missing raw image header"));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
        let (height, width, channels) = (dim(0), dim(1), dim(2));
        let expected = RAW_HEADER + height * width * channels * 4;
        if bytes.len() != expected {
            return Err(Error::parse(
                path,
                bytes.len().min(expected),
                format!(
                    "expected {expected} bytes for {height}x{width}x{channels}, found {}",
                    bytes.len()
                ),
            ));
        }
        let data = bytes[RAW_HEADER..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect::<Vec<_>>();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::parse(path, RAW_HEADER + 4 * i, "non-finite pixel value"));
        }
        Self::new(height, width, channels, data)
    }

    /// 8-bit PNG with values clamped to `[0, 1]`; 1, 3 or 4 channels.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let color = match self.channels {
            1 => png::ColorType::Grayscale,
            3 => png::ColorType::Rgb,
            4 => png::ColorType::Rgba,
            c => return Err(Error::Usage(format!("cannot write a {c}-channel PNG"))),
        };
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
        let mut writer = encoder.write_header().map_err(to_io)?;
        writer.write_image_data(&bytes).map_err(to_io)?;
        writer.finish().map_err(to_io)
    }

    /// Reads an 8-bit grayscale, RGB or RGBA PNG into `[0, 1]` floats.
    pub fn read_png(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let decoder = png::Decoder::new(BufReader::new(file));
        let mut reader = decoder.read_info().map_err(|e| Error::parse(path, 0, e.to_string()))?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::parse(path, 0, e.to_string()))?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(Error::parse(path, 0, "only 8-bit PNGs are supported"));
        }
        let channels = match info.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            other => return Err(Error::parse(path, 0, format!("unsupported PNG color type {other:?}"))),
        };
        let (h, w) = (info.height as usize, info.width as usize);
        let data = buf[..info.buffer_size()]
            .iter()
            .map(|&b| f32::from(b) / 255.0)
            .collect();
        Self::new(h, w, channels, data)
    }
}
