//! On-disk dataset layout and manifest handling.
//!
//! A dataset directory holds three image folders and a manifest:
//!
//! ```text
//! <root>/manifest.tsv
//! <root>/standard/<id>.pgm   composed radiographs (model input)
//! <root>/soft/<id>.pgm       bone-free targets
//! <root>/bone/<id>.pgm       bone-only maps
//! ```
//!
//! The manifest is tab-separated with a fixed header; boolean columns are
//! 0/1 and `seed` records the per-sample stream for regeneration:
//!
//! ```text
//! id	split	abnormal	misregistered	seed
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::pgm;
use crate::phantom::{generate, PhantomConfig};
use crate::rng::derive_seed;
use crate::split::{assign_splits, Split};

pub const MANIFEST_NAME: &str = "manifest.tsv";
pub const MANIFEST_HEADER: &str = "id\tsplit\tabnormal\tmisregistered\tseed";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageKind {
    Standard,
    Soft,
    Bone,
}

impl ImageKind {
    pub fn dir_name(self) -> &'static str {
        match self {
            ImageKind::Standard => "standard",
            ImageKind::Soft => "soft",
            ImageKind::Bone => "bone",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub id: String,
    pub split: Split,
    pub abnormal: bool,
    pub misregistered: bool,
    pub seed: u64,
}

fn validate_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(Error::Data(format!(
            "id {id:?} is not a safe file stem (ASCII alphanumerics, '_', '-')"
        )))
    }
}

/// Generates the configured phantom population and writes it out as a
/// dataset directory. Splits are assigned from a stream derived from the
/// dataset seed. Returns the manifest rows in index order.
pub fn write_dataset(root: &Path, cfg: &PhantomConfig) -> Result<Vec<ManifestRow>> {
    cfg.validate()?;
    let samples = generate(cfg)?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let splits = assign_splits(&ids, derive_seed(cfg.seed, "split"))?;

    for kind in [ImageKind::Standard, ImageKind::Soft, ImageKind::Bone] {
        fs::create_dir_all(root.join(kind.dir_name()))?;
    }
    let size = cfg.image_size;
    let mut rows = Vec::with_capacity(samples.len());
    for (sample, &split) in samples.iter().zip(&splits) {
        for (kind, pixels) in [
            (ImageKind::Standard, &sample.standard),
            (ImageKind::Soft, &sample.soft),
            (ImageKind::Bone, &sample.bone),
        ] {
            let path = root.join(kind.dir_name()).join(format!("{}.pgm", sample.id));
            pgm::write_pgm(&path, size, size, pixels)?;
        }
        rows.push(ManifestRow {
            id: sample.id.clone(),
            split,
            abnormal: sample.abnormal,
            misregistered: sample.misregistered,
            seed: sample.seed,
        });
    }

    let mut text = String::from(MANIFEST_HEADER);
    text.push('\n');
    for r in &rows {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.id,
            r.split.as_str(),
            u8::from(r.abnormal),
            u8::from(r.misregistered),
            r.seed
        ));
    }
    fs::write(root.join(MANIFEST_NAME), text)?;
    Ok(rows)
}

fn parse_flag(field: &str, line: usize, what: &str) -> Result<bool> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Data(format!(
            "manifest line {line}: {what} must be 0 or 1, got {other:?}"
        ))),
    }
}

/// Parses a manifest file, enforcing the exact header, field count, flag
/// values, id safety, and id uniqueness.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == MANIFEST_HEADER => {}
        Some((_, header)) => {
            return Err(Error::Data(format!(
                "manifest header mismatch: expected {MANIFEST_HEADER:?}, got {header:?}"
            )))
        }
        None => return Err(Error::Data("manifest is empty".into())),
    }
    let mut rows = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::Data(format!(
                "manifest line {lineno}: expected 5 tab-separated fields, got {}",
                fields.len()
            )));
        }
        validate_id(fields[0])?;
        if !seen.insert(fields[0].to_string()) {
            return Err(Error::Data(format!("manifest line {lineno}: duplicate id {:?}", fields[0])));
        }
        rows.push(ManifestRow {
            id: fields[0].to_string(),
            split: Split::parse(fields[1])?,
            abnormal: parse_flag(fields[2], lineno, "abnormal")?,
            misregistered: parse_flag(fields[3], lineno, "misregistered")?,
            seed: fields[4].parse().map_err(|_| {
                Error::Data(format!("manifest line {lineno}: seed {:?} is not a u64", fields[4]))
            })?,
        });
    }
    if rows.is_empty() {
        return Err(Error::Data("manifest has a header but no rows".into()));
    }
    Ok(rows)
}

/// An opened dataset directory.
pub struct Dataset {
    root: PathBuf,
    rows: Vec<ManifestRow>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let rows = read_manifest(&root.join(MANIFEST_NAME))?;
        Ok(Dataset { root: root.to_path_buf(), rows })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    /// Rows of one split, in manifest order.
    pub fn rows_in(&self, split: Split) -> Vec<&ManifestRow> {
        self.rows.iter().filter(|r| r.split == split).collect()
    }

    pub fn image_path(&self, kind: ImageKind, id: &str) -> PathBuf {
        self.root.join(kind.dir_name()).join(format!("{id}.pgm"))
    }

    /// Loads one image as unit-range samples, enforcing that it is square
    /// and matches `expect_size` when given.
    pub fn load_unit(&self, kind: ImageKind, id: &str, expect_size: Option<usize>) -> Result<Vec<f32>> {
        validate_id(id)?;
        let path = self.image_path(kind, id);
        let img = pgm::read_pgm(&path)?;
        if img.width != img.height {
            return Err(Error::Data(format!(
                "{} is {}x{}, expected a square image",
                path.display(),
                img.width,
                img.height
            )));
        }
        if let Some(s) = expect_size {
            if img.width != s {
                return Err(Error::Data(format!(
                    "{} is {}px, expected {s}px",
                    path.display(),
                    img.width
                )));
            }
        }
        Ok(img.to_unit())
    }

    /// Side length of the dataset's images, read from the first row.
    pub fn image_size(&self) -> Result<usize> {
        let first = &self.rows[0];
        let img = pgm::read_pgm(&self.image_path(ImageKind::Standard, &first.id))?;
        if img.width != img.height {
            return Err(Error::Data(format!(
                "dataset images must be square, found {}x{}",
                img.width, img.height
            )));
        }
        Ok(img.width)
    }
}

/// Maps unit-range samples onto the [-1, 1] range the networks train in.
pub fn unit_to_signed(x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| 2.0 * v - 1.0).collect()
}

/// Inverse of `unit_to_signed`, clamped so out-of-range network output
/// still produces a valid image.
pub fn signed_to_unit(x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| ((v + 1.0) * 0.5).clamp(0.0, 1.0)).collect()
}

/// Quantizes signed-range samples to 8-bit pixels.
pub fn signed_to_u8(x: &[f32]) -> Vec<u8> {
    signed_to_unit(x).iter().map(|&v| (v * 255.0).round() as u8).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::split::split_counts;

    fn demo_cfg() -> PhantomConfig {
        PhantomConfig { count: 20, image_size: 32, seed: 5, ..Default::default() }
    }

    #[test]
    fn dataset_roundtrips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let rows = write_dataset(dir.path(), &demo_cfg()).unwrap();
        assert_eq!(rows.len(), 20);

        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.rows(), &rows[..]);
        assert_eq!(ds.image_size().unwrap(), 32);

        let (train, val, test) = split_counts(20);
        assert_eq!(ds.rows_in(Split::Train).len(), train);
        assert_eq!(ds.rows_in(Split::Val).len(), val);
        assert_eq!(ds.rows_in(Split::Test).len(), test);

        let sample = crate::phantom::generate_sample(&demo_cfg(), 3).unwrap();
        let loaded = ds.load_unit(ImageKind::Soft, &rows[3].id, Some(32)).unwrap();
        let expected: Vec<f32> = sample.soft.iter().map(|&v| f32::from(v) / 255.0).collect();
        assert_eq!(loaded, expected);
    }

    #[test]
    fn rewriting_the_same_dataset_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_dataset(a.path(), &demo_cfg()).unwrap();
        write_dataset(b.path(), &demo_cfg()).unwrap();
        let ma = std::fs::read(a.path().join(MANIFEST_NAME)).unwrap();
        let mb = std::fs::read(b.path().join(MANIFEST_NAME)).unwrap();
        assert_eq!(ma, mb);
        let rows = read_manifest(&a.path().join(MANIFEST_NAME)).unwrap();
        for kind in [ImageKind::Standard, ImageKind::Soft, ImageKind::Bone] {
            for row in &rows {
                let rel = format!("{}/{}.pgm", kind.dir_name(), row.id);
                let fa = std::fs::read(a.path().join(&rel)).unwrap();
                let fb = std::fs::read(b.path().join(&rel)).unwrap();
                assert_eq!(fa, fb, "{rel} differs between identical runs");
            }
        }
    }

    #[test]
    fn malformed_manifests_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MANIFEST_NAME);
        let write = |text: &str| std::fs::write(&path, text).unwrap();

        write("id\tsplit\tweird\n");
        assert!(read_manifest(&path).is_err(), "bad header accepted");

        write(&format!("{MANIFEST_HEADER}\n"));
        assert!(read_manifest(&path).is_err(), "empty body accepted");

        write(&format!("{MANIFEST_HEADER}\na\ttrain\t0\n"));
        assert!(read_manifest(&path).is_err(), "short row accepted");

        write(&format!("{MANIFEST_HEADER}\na\ttrain\t2\t0\t1\n"));
        assert!(read_manifest(&path).is_err(), "bad flag accepted");

        write(&format!("{MANIFEST_HEADER}\na\tholdout\t0\t0\t1\n"));
        assert!(read_manifest(&path).is_err(), "bad split accepted");

        write(&format!("{MANIFEST_HEADER}\n../evil\ttrain\t0\t0\t1\n"));
        assert!(read_manifest(&path).is_err(), "path-escaping id accepted");

        write(&format!("{MANIFEST_HEADER}\na\ttrain\t0\t0\t1\na\ttest\t0\t0\t2\n"));
        assert!(read_manifest(&path).is_err(), "duplicate id accepted");

        write(&format!("{MANIFEST_HEADER}\nok-1\ttrain\t1\t0\t99\n"));
        let rows = read_manifest(&path).unwrap();
        assert_eq!(rows[0].id, "ok-1");
        assert!(rows[0].abnormal);
    }

    #[test]
    fn signed_mapping_roundtrips_and_clamps() {
        let unit = vec![0.0, 0.25, 1.0];
        let signed = unit_to_signed(&unit);
        assert_eq!(signed, vec![-1.0, -0.5, 1.0]);
        assert_eq!(signed_to_unit(&signed), unit);
        assert_eq!(signed_to_unit(&[-3.0, 3.0]), vec![0.0, 1.0]);
        assert_eq!(signed_to_u8(&[-1.0, 1.0]), vec![0, 255]);
    }
}
