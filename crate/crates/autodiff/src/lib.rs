//! A small reverse-mode automatic differentiation engine.
//!
//! Tensors are dense row-major arrays generic over [`Real`] (`f32` for
//! training, `f64` for gradient checks). Each forward pass builds a fresh
//! graph; calling [`Tensor::backward`] on a scalar accumulates gradients into
//! every reachable leaf created with [`Tensor::param`].
//!
//! ```
//! use gamba_autodiff::Tensor;
//!
//! let x = Tensor::<f64>::param(vec![3.0], &[]).unwrap();
//! let y = x.mul(&x).unwrap();
//! y.backward().unwrap();
//! assert_eq!(x.grad().unwrap(), vec![6.0]);
//! ```

pub mod error;
pub mod gradcheck;
mod ops;
pub mod optim;
pub mod real;
mod tensor;

pub use error::{Error, Result};
pub use optim::{clip_grad_norm, grad_norm, AdamW, AdamWConfig};
pub use real::{Precision, Real};
pub use tensor::{is_grad_enabled, no_grad, BackwardFn, Tensor};
