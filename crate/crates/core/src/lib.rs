//! Neural-operator transfer learning on periodic PDE data.
//!
//! The crate is `no_std` (it needs `alloc`) and carries everything that is
//! pure computation:
//!
//! - [`tensor`], [`fft`] and [`autodiff`]: dense `f64` tensors, real FFTs and
//!   a reverse-mode tape with coarse-grained operations.
//! - [`blocks`]: lifting/projection maps, Fourier layers, the causal
//!   state-space block, attention and the Perceiver block.
//! - [`pde`]: spectral solvers for advection, heat, Burgers and Gray-Scott
//!   families plus seeded dataset generation.
//! - [`transfer`]: the `P ∘ F ∘ L` composition with per-task adapters,
//!   parameter freezing and evaluation metrics.
//! - [`train`]: Adam, the MSE objective and the mini-batch training loop.
//!
//! File formats, configuration and the command line live in the `neurop`
//! crate.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod blocks;
pub mod error;
pub mod fft;
pub mod pde;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod transfer;

pub use error::{Error, Result};
pub use tensor::Tensor;
