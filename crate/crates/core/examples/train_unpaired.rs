//! Trains the unpaired (cycle-consistent) model on two image pools that
//! share no alignment: standard radiographs on one side, soft-tissue
//! images on the other, pairing deliberately discarded. The cycle loss —
//! how well each image survives the round trip through both generators —
//! must fall well below its value at initialization for the translation
//! to mean anything.
//!
//! Usage: cargo run --example train_unpaired

use bonesup::dataset::{write_dataset, Dataset};
use bonesup::phantom::PhantomConfig;
use bonesup::trainer::{train_unpaired, TrainConfig, TrainData, TrainMode};
use bonesup::Result;

fn main() -> Result<()> {
    let dir = std::env::temp_dir().join("bonesup_train_unpaired");
    let data_cfg =
        PhantomConfig { count: 60, image_size: 32, seed: 43, ..PhantomConfig::default() };
    write_dataset(&dir, &data_cfg)?;
    let ds = Dataset::open(&dir)?;

    let mut cfg = TrainConfig::new(TrainMode::Unpaired);
    cfg.image_size = data_cfg.image_size;
    cfg.base_channels = 8;
    cfg.epochs = 10;
    cfg.seed = 5;

    let data = TrainData::load(&ds)?;
    let (source, target) = data.pools();
    println!(
        "pools: {} standard images vs {} soft-tissue images (unaligned)\n",
        source.len(),
        target.len()
    );

    let (_model, history) = train_unpaired(&source, &target, &data.val, cfg.image_size, &cfg)?;
    let initial = history.cycle_initial.expect("unpaired training records it");
    println!("cycle loss at initialization: {initial:.4}");
    for e in &history.epochs {
        println!(
            "epoch {:>2}  disc {:.3}  adv {:.3}  cycle {:.4}  val ssim {:.3}",
            e.epoch,
            e.disc_loss,
            e.gen_adv,
            e.gen_rec,
            e.val_ssim.unwrap_or(f64::NAN),
        );
    }
    let last = history.final_rec().expect("at least one epoch ran");
    println!(
        "\ncycle loss fell to {last:.4} = {:.2}x its starting value",
        last / initial
    );
    Ok(())
}
