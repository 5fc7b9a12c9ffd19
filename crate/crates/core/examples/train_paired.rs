//! Trains a paired suppression model end to end at toy scale: generate
//! phantoms, fit the conditional GAN, watch the validation SSIM climb,
//! then score the test split and compare against the do-nothing baseline.
//!
//! Runs in under a minute. Scale `count`, `image_size`, and `epochs` up
//! for a real run (the command line does exactly this workflow).
//!
//! Usage: cargo run --example train_paired

use std::collections::BTreeMap;

use bonesup::dataset::{write_dataset, Dataset, ImageKind};
use bonesup::metrics::ssim;
use bonesup::phantom::PhantomConfig;
use bonesup::report::evaluate_model;
use bonesup::split::Split;
use bonesup::trainer::{train_paired, TrainConfig, TrainData, TrainMode};
use bonesup::Result;

fn main() -> Result<()> {
    let dir = std::env::temp_dir().join("bonesup_train_paired");
    let data_cfg =
        PhantomConfig { count: 60, image_size: 32, seed: 41, ..PhantomConfig::default() };
    write_dataset(&dir, &data_cfg)?;
    let ds = Dataset::open(&dir)?;
    println!("dataset: {} samples at {}px in {}", data_cfg.count, data_cfg.image_size, dir.display());

    let mut cfg = TrainConfig::new(TrainMode::Paired);
    cfg.image_size = data_cfg.image_size;
    cfg.base_channels = 8;
    cfg.epochs = 12;
    cfg.seed = 3;

    let data = TrainData::load(&ds)?;
    println!("training on {} pairs, validating on {}\n", data.train.len(), data.val.len());
    let (model, history) = train_paired(&data, &cfg)?;
    for e in &history.epochs {
        println!(
            "epoch {:>2}  disc {:.3}  adv {:.3}  l1 {:.4}  val ssim {:.3}",
            e.epoch,
            e.disc_loss,
            e.gen_adv,
            e.gen_rec,
            e.val_ssim.unwrap_or(f64::NAN),
        );
    }

    // Baseline: how similar is the uncorrected standard image already?
    let size = data_cfg.image_size;
    let test = ds.rows_in(Split::Test);
    let mut base = 0.0;
    for row in &test {
        let standard = ds.load_unit(ImageKind::Standard, &row.id, Some(size))?;
        let soft = ds.load_unit(ImageKind::Soft, &row.id, Some(size))?;
        base += ssim(&standard, &soft, size, size)?;
    }
    base /= test.len() as f64;

    let report = evaluate_model(&model, &ds, None, "example", BTreeMap::new())?;
    let mean = report.ssim.as_ref().and_then(|b| b.mean).unwrap_or(f64::NAN);
    println!("\ntest SSIM {mean:.3} vs baseline {base:.3} over {} images", test.len());
    println!("(longer schedules at 64px reach a much larger margin)");
    Ok(())
}
