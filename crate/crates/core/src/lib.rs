//! Single-view reconstruction of 3D Gaussian splats with a selective
//! state-space backbone, a differentiable splat renderer, and the training
//! and evaluation pipeline around them.

pub mod backbone;
pub mod bench;
pub mod camera;
pub mod checkpoint;
pub mod config;
pub mod constraints;
pub mod data;
pub mod decoder;
pub mod error;
pub mod gaussians;
pub mod image;
pub mod infer;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod render;
pub mod scenes;
pub mod ssm;
pub mod train;

pub use error::{Error, Result};
