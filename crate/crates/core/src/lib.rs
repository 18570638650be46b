//! Robust conditional GAN laboratory: a reverse-mode tensor engine, layer
//! stacks with hard parameter sharing, the two-pathway generator with a
//! shared decoder, its loss terms, the alternating training loop, and the
//! robustness evaluations (corruption grids, FGSM, SSIM, linear subspace
//! analogy and the discrete optimal-discriminator identities).

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod models;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{no_grad, Tensor};
