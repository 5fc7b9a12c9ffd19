//! Measures how far a dataset's standard radiographs already are from the
//! soft-tissue ground truth: the do-nothing baseline every trained model
//! has to beat. Prints mean SSIM and PSNR over the test split.
//!
//! Usage: cargo run --example dataset_baseline -- <dataset-dir>

use bonesup::dataset::{Dataset, ImageKind};
use bonesup::metrics::{psnr, ssim};
use bonesup::split::Split;
use bonesup::Result;

fn main() -> Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "phantom-data".to_string());
    let ds = Dataset::open(dir.as_ref())?;
    let size = ds.image_size()?;

    let mut ssim_sum = 0.0;
    let mut psnr_sum = 0.0;
    let mut n = 0usize;
    for row in ds.rows_in(Split::Test) {
        let standard = ds.load_unit(ImageKind::Standard, &row.id, Some(size))?;
        let soft = ds.load_unit(ImageKind::Soft, &row.id, Some(size))?;
        let s = ssim(&standard, &soft, size, size)?;
        let p = psnr(&standard, &soft, 1.0)?;
        println!("{}\tssim {s:.4}\tpsnr {p:.2} dB", row.id);
        ssim_sum += s;
        psnr_sum += p;
        n += 1;
    }
    if n == 0 {
        println!("the dataset has no test split");
        return Ok(());
    }
    println!("--");
    println!(
        "baseline over {n} test images: ssim {:.4}, psnr {:.2} dB",
        ssim_sum / n as f64,
        psnr_sum / n as f64
    );
    Ok(())
}
