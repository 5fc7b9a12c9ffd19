//! A tour of the evaluation metrics with hand-checkable values: SSIM on
//! constant images, the PSNR of a known offset, and the rank-based AUC
//! with its defining invariances.
//!
//! Usage: cargo run --example evaluate_metrics

use bonesup::metrics::{psnr, roc_auc, ssim};
use bonesup::rng::rng_from_seed;
use bonesup::Result;
use rand::Rng;

fn main() -> Result<()> {
    let n = 16;

    // SSIM: identical images score exactly 1.
    let a: Vec<f32> = (0..n * n).map(|i| (i % 7) as f32 / 7.0).collect();
    println!("ssim(a, a)                 = {}", ssim(&a, &a, n, n)?);

    // Two constant images: no structure, so only the luminance term
    // differs from 1. mu_a = 0.25, mu_b = 0.75 gives ~0.60006.
    let c1 = vec![0.25f32; n * n];
    let c2 = vec![0.75f32; n * n];
    println!("ssim(0.25, 0.75 constant)  = {:.5}", ssim(&c1, &c2, n, n)?);

    // PSNR: a constant offset of 0.5 at peak 1 means MSE 0.25,
    // 10*log10(1/0.25) = 6.0206 dB. Identical images are infinite.
    println!("psnr(offset 0.5)           = {:.4} dB", psnr(&c1, &c2, 1.0)?);
    println!("psnr(a, a)                 = {} dB", psnr(&a, &a, 1.0)?);

    // AUC: probability a random positive outranks a random negative.
    let scores = [0.9, 0.8, 0.7, 0.3, 0.2, 0.1];
    let labels = [true, true, false, true, false, false];
    let auc = roc_auc(&scores, &labels)?;
    println!("roc_auc (one inversion)    = {auc:.4}");

    // Invariant under any strictly monotone transform of the scores...
    let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 10.0).collect();
    println!("roc_auc (warped scores)    = {:.4}", roc_auc(&warped, &labels)?);

    // ...and flipping the labels complements it.
    let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
    println!("roc_auc (flipped labels)   = {:.4}", roc_auc(&scores, &flipped)?);

    // Label-blind scores hover at chance whatever the data looks like.
    let mut rng = rng_from_seed(2024);
    let blind: Vec<f64> = (0..200).map(|_| rng.gen()).collect();
    let balanced: Vec<bool> = (0..200).map(|i| i % 2 == 0).collect();
    println!("roc_auc (200 random)       = {:.4}", roc_auc(&blind, &balanced)?);
    Ok(())
}
