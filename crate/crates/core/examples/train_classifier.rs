//! The downstream task that motivates bone suppression: nodule detection.
//! Trains the small convolutional classifier on soft-tissue images with
//! easy (large, bright) nodules, then scores held-out images and reports
//! the AUC — against a label-blind random control that stays at chance.
//!
//! Usage: cargo run --example train_classifier

use bonesup::classifier::{train_classifier, ClassifierTrainConfig, LabeledImage};
use bonesup::dataset::unit_to_signed;
use bonesup::metrics::roc_auc;
use bonesup::phantom::{generate_sample, PhantomConfig};
use bonesup::rng::rng_from_seed;
use bonesup::Result;
use rand::Rng;

fn phantom_images(count: usize, size: usize, seed: u64) -> Result<Vec<LabeledImage>> {
    let cfg = PhantomConfig { count, image_size: size, seed, ..PhantomConfig::default() }
        .with_easy_nodules();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let s = generate_sample(&cfg, i)?;
        let unit: Vec<f32> = s.soft.iter().map(|&v| f32::from(v) / 255.0).collect();
        out.push(LabeledImage { pixels: unit_to_signed(&unit), abnormal: s.abnormal });
    }
    Ok(out)
}

fn main() -> Result<()> {
    let size = 32;
    let train = phantom_images(120, size, 1001)?;
    let held_out = phantom_images(60, size, 2002)?;
    println!(
        "training on {} images ({} abnormal), holding out {}",
        train.len(),
        train.iter().filter(|s| s.abnormal).count(),
        held_out.len()
    );

    let cfg = ClassifierTrainConfig { image_size: size, epochs: 20, ..Default::default() };
    let (clf, losses) = train_classifier(&train, &cfg)?;
    println!(
        "cross-entropy per epoch: first {:.3} -> last {:.3}",
        losses.first().unwrap(),
        losses.last().unwrap()
    );

    let refs: Vec<&[f32]> = held_out.iter().map(|s| &s.pixels[..]).collect();
    let scores = clf.score(&refs)?;
    let labels: Vec<bool> = held_out.iter().map(|s| s.abnormal).collect();
    println!("held-out AUC             = {:.4}", roc_auc(&scores, &labels)?);

    let mut rng = rng_from_seed(99);
    let blind: Vec<f64> = (0..labels.len()).map(|_| rng.gen()).collect();
    println!("label-blind control AUC  = {:.4}", roc_auc(&blind, &labels)?);
    Ok(())
}
