//! Core algorithms for conditional diffusion-based contrast-enhanced MRI
//! synthesis: noise schedule and Heun sampler, the attention U-Net denoiser
//! with pixel-wise uncertainty output, the training losses, image quality
//! metrics, and the synthetic phantom dataset generator.
//!
//! The crate is `no_std`-compatible (requires `alloc`); the `std` feature
//! (default) is only needed by downstream IO.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod extractor;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod phantom;
pub mod sampler;
pub mod schedule;
mod elem;
mod error;

pub use elem::Elem;
pub use error::{CoreError, Result};
