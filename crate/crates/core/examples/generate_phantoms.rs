//! Generates a small phantom dataset and renders one sample as ASCII art,
//! showing the three images every phantom consists of: the standard
//! radiograph (soft tissue plus ribs), the soft-tissue ground truth, and
//! the bone-only image whose shadows a suppression model must remove.
//!
//! Usage: cargo run --example generate_phantoms -- [out-dir]

use bonesup::dataset::write_dataset;
use bonesup::phantom::PhantomConfig;
use bonesup::Result;

const SHADES: &[u8] = b" .:-=+*#%@";

fn render(rows: &[(&str, &[u8])], size: usize) {
    let mut header = String::new();
    for (name, _) in rows {
        header.push_str(&format!("{name:<w$}", w = size + 2));
    }
    println!("{header}");
    for y in (0..size).step_by(2) {
        let mut line = String::new();
        for (_, pixels) in rows {
            for x in 0..size {
                // average two rows so characters come out roughly square
                let a = pixels[y * size + x] as usize;
                let b = pixels[(y + 1).min(size - 1) * size + x] as usize;
                let v = (a + b) / 2;
                line.push(SHADES[v * (SHADES.len() - 1) / 255] as char);
            }
            line.push_str("  ");
        }
        println!("{line}");
    }
}

fn main() -> Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| {
        std::env::temp_dir().join("bonesup_phantoms").display().to_string()
    });

    let cfg = PhantomConfig { count: 30, image_size: 48, seed: 7, ..PhantomConfig::default() };
    let rows = write_dataset(out.as_ref(), &cfg)?;
    println!("wrote {} samples to {out}", rows.len());

    let abnormal = rows.iter().filter(|r| r.abnormal).count();
    let misreg = rows.iter().filter(|r| r.misregistered).count();
    println!("{abnormal} abnormal (nodule present), {misreg} with misregistered bones\n");

    // Re-generate the first abnormal sample in memory for display.
    let show = rows.iter().position(|r| r.abnormal).unwrap_or(0);
    let sample = bonesup::phantom::generate_sample(&cfg, show)?;
    println!("sample {} (abnormal = {}):\n", sample.id, sample.abnormal);
    render(
        &[
            ("standard", &sample.standard),
            ("soft (target)", &sample.soft),
            ("bone", &sample.bone),
        ],
        cfg.image_size,
    );
    Ok(())
}
