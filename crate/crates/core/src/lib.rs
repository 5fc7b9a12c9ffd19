//! Bone suppression for chest radiographs by adversarial image-to-image
//! translation, built from first principles: an f32 tensor library with
//! reverse-mode autodiff, U-Net generators and PatchGAN discriminators,
//! paired and unpaired trainers, a synthetic dual-energy phantom generator,
//! and SSIM/PSNR/AUC evaluation — all deterministic given a seed.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod optim;
pub mod params;
pub mod pgm;
pub mod phantom;
pub mod report;
pub mod rng;
pub mod split;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
