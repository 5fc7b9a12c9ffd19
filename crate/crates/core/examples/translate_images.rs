//! The deployment path: load a trained checkpoint from disk and run it
//! over a directory of PGM radiographs, writing suppressed images under
//! the same names. Also demonstrates that checkpoints round-trip exactly:
//! the reloaded model reproduces the in-memory model bit for bit.
//!
//! Usage: cargo run --example translate_images

use bonesup::checkpoint::{load_model, save_model};
use bonesup::dataset::{signed_to_u8, unit_to_signed, write_dataset, Dataset, ImageKind};
use bonesup::pgm;
use bonesup::phantom::PhantomConfig;
use bonesup::tensor::Tensor;
use bonesup::trainer::{train_paired, TrainConfig, TrainData, TrainMode};
use bonesup::Result;

fn main() -> Result<()> {
    let root = std::env::temp_dir().join("bonesup_translate");
    let data_cfg =
        PhantomConfig { count: 24, image_size: 32, seed: 47, ..PhantomConfig::default() };
    write_dataset(&root.join("data"), &data_cfg)?;
    let ds = Dataset::open(&root.join("data"))?;

    // A small model is enough to demonstrate the mechanics.
    let mut cfg = TrainConfig::new(TrainMode::Paired);
    cfg.image_size = data_cfg.image_size;
    cfg.base_channels = 8;
    cfg.epochs = 4;
    let (model, _) = train_paired(&TrainData::load(&ds)?, &cfg)?;

    let ckpt = root.join("model.bsgc");
    save_model(&model, &ckpt)?;
    println!("saved checkpoint to {}", ckpt.display());
    let loaded = load_model(&ckpt)?;

    let size = loaded.image_size();
    let out_dir = root.join("suppressed");
    std::fs::create_dir_all(&out_dir)?;
    let mut n = 0;
    for row in ds.rows() {
        let unit = ds.load_unit(ImageKind::Standard, &row.id, Some(size))?;
        let x = Tensor::new(&[1, 1, size, size], unit_to_signed(&unit))?;

        let y = loaded.suppressor().apply(&x)?;
        let again = model.suppressor().apply(&x)?;
        assert!(
            y.data().iter().zip(again.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
            "reloaded model must match the trained one exactly"
        );

        pgm::write_pgm(&out_dir.join(format!("{}.pgm", row.id)), size, size, &signed_to_u8(y.data()))?;
        n += 1;
    }
    println!("translated {n} images into {}", out_dir.display());
    println!("reloaded checkpoint reproduced the trained model bit for bit");
    Ok(())
}
