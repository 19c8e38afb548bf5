//! Core numerics for synthesizing confidently classified counterfeits.
//!
//! The crate is split along the pipeline:
//!
//! * [`autograd`]: dense tensors, a reverse-mode tape and the Adam optimizer.
//! * [`data`]: IDX / CIFAR-10 decoding from byte slices, normalization and
//!   seeded batching.
//! * [`models`]: the convolutional classifier, the vector-matrix conditioned
//!   generator and the label encodings that drive it.
//! * [`inversion`]: the KL / cross-entropy / cosine-diversity composite loss
//!   and the generator training loop against a frozen classifier.
//! * [`audit`]: confidence statistics, threshold bypass rates,
//!   nearest-neighbour distances and grid tiling.
//!
//! # No-std
//!
//! Everything here only needs `alloc`. The default `std` feature turns on
//! runtime CPU feature detection in the matrix kernels and the platform math
//! library; without it `libm` is used.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod audit;
pub mod autograd;
pub mod data;
mod error;
pub mod inversion;
pub mod models;
mod real;
pub mod rng;

pub use error::{Error, Result};
pub use real::{DType, Real};
