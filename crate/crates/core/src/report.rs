//! Evaluation reports: per-image metric rows plus aggregate statistics.
//!
//! A report is two files in one directory:
//!
//! * `report.json` — fixed-key summary: `model`, `mode`, `image_count`,
//!   optional `ssim` / `psnr` aggregate blocks (`mean`, `std_dev`,
//!   `std_err`, `count`, `infinite_count`), an optional `auc` block
//!   (`value`, `positives`, `negatives`), and a flat string `config` echo.
//! * `report.tsv` — one row per evaluated image: `id`, `ssim`, `psnr`,
//!   with empty cells where ground truth was unavailable and `inf` for
//!   the infinite PSNR of a perfect match.
//!
//! All numbers are serialized with six significant digits. Values are
//! quantized to that precision when the report is built, so writing a
//! report, reading it back, and writing it again produces byte-identical
//! files. Aggregates are computed over the finite per-image values after
//! quantization: `std_dev` is the sample standard deviation (zero when
//! fewer than two values), `std_err` is `std_dev / sqrt(count)`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::classifier::Classifier;
use crate::dataset::{signed_to_unit, unit_to_signed, Dataset, ImageKind};
use crate::error::{Error, Result};
use crate::metrics::{psnr, roc_auc, ssim};
use crate::split::Split;
use crate::tensor::Tensor;
use crate::trainer::Model;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TSV: &str = "report.tsv";

/// Formats with six significant digits in plain decimal notation.
fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    let prec = (5 - mag).max(0) as usize;
    format!("{x:.prec$}")
}

/// Quantizes to the value `sig6` prints, so later formatting is stable.
fn q6(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    sig6(x).parse().expect("sig6 output is a valid number")
}

/// Metrics measured for one evaluated image. `None` means the ground
/// truth needed for that metric was unavailable.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRow {
    pub id: String,
    pub ssim: Option<f64>,
    pub psnr: Option<f64>,
}

/// Aggregate statistics over the finite per-image values of one metric.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricBlock {
    pub mean: Option<f64>,
    pub std_dev: Option<f64>,
    pub std_err: Option<f64>,
    pub count: usize,
    pub infinite_count: usize,
}

impl MetricBlock {
    /// `None` when no image produced the metric at all.
    fn from_values(values: impl Iterator<Item = f64>) -> Option<MetricBlock> {
        let mut finite = Vec::new();
        let mut infinite = 0usize;
        for v in values {
            if v.is_finite() {
                finite.push(v);
            } else {
                infinite += 1;
            }
        }
        if finite.is_empty() && infinite == 0 {
            return None;
        }
        if finite.is_empty() {
            return Some(MetricBlock {
                mean: None,
                std_dev: None,
                std_err: None,
                count: 0,
                infinite_count: infinite,
            });
        }
        let n = finite.len() as f64;
        let mean = finite.iter().sum::<f64>() / n;
        let std_dev = if finite.len() < 2 {
            0.0
        } else {
            (finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        let std_err = std_dev / n.sqrt();
        Some(MetricBlock {
            mean: Some(q6(mean)),
            std_dev: Some(q6(std_dev)),
            std_err: Some(q6(std_err)),
            count: finite.len(),
            infinite_count: infinite,
        })
    }
}

/// Classifier performance on the evaluated images.
#[derive(Clone, Debug, PartialEq)]
pub struct AucBlock {
    pub value: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// The full evaluation result; serializes to `report.json` + `report.tsv`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub model: String,
    pub mode: String,
    pub rows: Vec<ImageRow>,
    pub ssim: Option<MetricBlock>,
    pub psnr: Option<MetricBlock>,
    pub auc: Option<AucBlock>,
    pub config: BTreeMap<String, String>,
}

impl MetricsReport {
    /// Builds a report from per-image rows, quantizing every number to six
    /// significant digits and computing the aggregate blocks.
    pub fn from_rows(
        model: &str,
        mode: &str,
        mut rows: Vec<ImageRow>,
        auc: Option<AucBlock>,
        config: BTreeMap<String, String>,
    ) -> MetricsReport {
        for row in &mut rows {
            row.ssim = row.ssim.map(q6);
            row.psnr = row.psnr.map(q6);
        }
        let ssim = MetricBlock::from_values(rows.iter().filter_map(|r| r.ssim));
        let psnr = MetricBlock::from_values(rows.iter().filter_map(|r| r.psnr));
        let auc = auc.map(|a| AucBlock { value: q6(a.value), ..a });
        MetricsReport { model: model.to_string(), mode: mode.to_string(), rows, ssim, psnr, auc, config }
    }

    pub fn to_json(&self) -> String {
        let mut out = String::from("{\n");
        out.push_str(&format!("  \"model\": {},\n", json_str(&self.model)));
        out.push_str(&format!("  \"mode\": {},\n", json_str(&self.mode)));
        out.push_str(&format!("  \"image_count\": {},\n", self.rows.len()));
        if let Some(b) = &self.ssim {
            out.push_str(&format!("  \"ssim\": {},\n", block_json(b)));
        }
        if let Some(b) = &self.psnr {
            out.push_str(&format!("  \"psnr\": {},\n", block_json(b)));
        }
        if let Some(a) = &self.auc {
            out.push_str(&format!(
                "  \"auc\": {{\"value\": {}, \"positives\": {}, \"negatives\": {}}},\n",
                sig6(a.value),
                a.positives,
                a.negatives
            ));
        }
        out.push_str("  \"config\": {");
        let mut first = true;
        for (k, v) in &self.config {
            if !first {
                out.push(',');
            }
            first = false;
            out.push_str(&format!("\n    {}: {}", json_str(k), json_str(v)));
        }
        if !self.config.is_empty() {
            out.push_str("\n  ");
        }
        out.push_str("}\n}\n");
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\tssim\tpsnr\n");
        for row in &self.rows {
            out.push_str(&row.id);
            out.push('\t');
            out.push_str(&cell(row.ssim));
            out.push('\t');
            out.push_str(&cell(row.psnr));
            out.push('\n');
        }
        out
    }

    /// Writes `report.json` and `report.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(REPORT_JSON), self.to_json())?;
        fs::write(dir.join(REPORT_TSV), self.to_tsv())?;
        Ok(())
    }

    /// Reads a report previously written by [`MetricsReport::write`].
    pub fn read(dir: &Path) -> Result<MetricsReport> {
        let json_text = fs::read_to_string(dir.join(REPORT_JSON))?;
        let tsv_text = fs::read_to_string(dir.join(REPORT_TSV))?;
        let rows = rows_from_tsv(&tsv_text)?;
        report_from_json(&json_text, rows)
    }
}

fn cell(v: Option<f64>) -> String {
    match v {
        None => String::new(),
        Some(x) if x.is_infinite() => "inf".to_string(),
        Some(x) => sig6(x),
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

fn opt_num(v: Option<f64>) -> String {
    match v {
        Some(x) => sig6(x),
        None => "null".to_string(),
    }
}

fn block_json(b: &MetricBlock) -> String {
    format!(
        "{{\"mean\": {}, \"std_dev\": {}, \"std_err\": {}, \"count\": {}, \"infinite_count\": {}}}",
        opt_num(b.mean),
        opt_num(b.std_dev),
        opt_num(b.std_err),
        b.count,
        b.infinite_count
    )
}

fn rows_from_tsv(text: &str) -> Result<Vec<ImageRow>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != "id\tssim\tpsnr" {
        return Err(Error::Data(format!("unexpected report TSV header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Data(format!("report TSV row {} has {} fields", i + 2, fields.len())));
        }
        rows.push(ImageRow {
            id: fields[0].to_string(),
            ssim: parse_cell(fields[1], i + 2)?,
            psnr: parse_cell(fields[2], i + 2)?,
        });
    }
    Ok(rows)
}

fn parse_cell(s: &str, line: usize) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    if s == "inf" {
        return Ok(Some(f64::INFINITY));
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::Data(format!("report TSV line {line}: bad number {s:?}")))
}

fn report_from_json(text: &str, rows: Vec<ImageRow>) -> Result<MetricsReport> {
    use serde_json::Value;
    let v: Value =
        serde_json::from_str(text).map_err(|e| Error::Data(format!("report JSON: {e}")))?;
    let obj = v.as_object().ok_or_else(|| Error::Data("report JSON is not an object".into()))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "model" | "mode" | "image_count" | "ssim" | "psnr" | "auc" | "config") {
            return Err(Error::Data(format!("report JSON has unknown key {key:?}")));
        }
    }
    let get_str = |k: &str| -> Result<String> {
        obj.get(k)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::Data(format!("report JSON is missing string {k:?}")))
    };
    let image_count = obj
        .get("image_count")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Data("report JSON is missing \"image_count\"".into()))?;
    if image_count as usize != rows.len() {
        return Err(Error::Data(format!(
            "report JSON says {image_count} images but the TSV has {}",
            rows.len()
        )));
    }
    let block = |k: &str| -> Result<Option<MetricBlock>> {
        let Some(b) = obj.get(k) else { return Ok(None) };
        let b = b
            .as_object()
            .ok_or_else(|| Error::Data(format!("report JSON {k:?} is not an object")))?;
        let num = |f: &str| b.get(f).and_then(Value::as_f64);
        let int = |f: &str| -> Result<usize> {
            b.get(f)
                .and_then(Value::as_u64)
                .map(|n| n as usize)
                .ok_or_else(|| Error::Data(format!("report JSON {k}.{f} is missing")))
        };
        Ok(Some(MetricBlock {
            mean: num("mean"),
            std_dev: num("std_dev"),
            std_err: num("std_err"),
            count: int("count")?,
            infinite_count: int("infinite_count")?,
        }))
    };
    let auc = match obj.get("auc") {
        None => None,
        Some(a) => {
            let a = a
                .as_object()
                .ok_or_else(|| Error::Data("report JSON \"auc\" is not an object".into()))?;
            Some(AucBlock {
                value: a
                    .get("value")
                    .and_then(Value::as_f64)
                    .ok_or_else(|| Error::Data("report JSON auc.value is missing".into()))?,
                positives: a.get("positives").and_then(Value::as_u64).unwrap_or(0) as usize,
                negatives: a.get("negatives").and_then(Value::as_u64).unwrap_or(0) as usize,
            })
        }
    };
    let mut config = BTreeMap::new();
    if let Some(c) = obj.get("config") {
        let c = c
            .as_object()
            .ok_or_else(|| Error::Data("report JSON \"config\" is not an object".into()))?;
        for (k, val) in c {
            let s = val
                .as_str()
                .ok_or_else(|| Error::Data(format!("report JSON config.{k} is not a string")))?;
            config.insert(k.clone(), s.to_string());
        }
    }
    Ok(MetricsReport {
        model: get_str("model")?,
        mode: get_str("mode")?,
        rows,
        ssim: block("ssim")?,
        psnr: block("psnr")?,
        auc,
        config,
    })
}

/// Runs a translator over the test split and measures it. `translate` maps
/// a `[1, 1, size, size]` tensor in [-1, 1] to the same shape. SSIM and
/// PSNR are computed against the soft-tissue ground truth when it exists
/// on disk and omitted otherwise; a classifier adds an AUC block scored on
/// the translated images.
pub fn evaluate_with<F>(
    mut translate: F,
    ds: &Dataset,
    clf: Option<&Classifier>,
    model_label: &str,
    mode_label: &str,
    config: BTreeMap<String, String>,
) -> Result<MetricsReport>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    let size = ds.image_size()?;
    if let Some(c) = clf {
        if c.cfg().image_size != size {
            return Err(Error::Data(format!(
                "classifier expects {}px images, dataset is {size}px",
                c.cfg().image_size
            )));
        }
    }
    let test_rows = ds.rows_in(Split::Test);
    if test_rows.is_empty() {
        return Err(Error::Data("the dataset has no test split to evaluate".into()));
    }
    let mut rows = Vec::with_capacity(test_rows.len());
    let mut outputs = Vec::with_capacity(test_rows.len());
    let mut labels = Vec::with_capacity(test_rows.len());
    for row in &test_rows {
        let standard = ds.load_unit(ImageKind::Standard, &row.id, Some(size))?;
        let x = Tensor::new(&[1, 1, size, size], unit_to_signed(&standard))?;
        let y = translate(&x)?;
        if y.shape() != [1, 1, size, size] {
            return Err(Error::Data(format!(
                "translator returned shape {:?} for a {size}px image",
                y.shape()
            )));
        }
        let out_unit = signed_to_unit(y.data());
        let (s, p) = if ds.image_path(ImageKind::Soft, &row.id).is_file() {
            let soft = ds.load_unit(ImageKind::Soft, &row.id, Some(size))?;
            (Some(ssim(&out_unit, &soft, size, size)?), Some(psnr(&out_unit, &soft, 1.0)?))
        } else {
            (None, None)
        };
        rows.push(ImageRow { id: row.id.clone(), ssim: s, psnr: p });
        outputs.push(y.data().to_vec());
        labels.push(row.abnormal);
    }
    let auc = match clf {
        None => None,
        Some(c) => {
            let refs: Vec<&[f32]> = outputs.iter().map(|v| &v[..]).collect();
            let scores = c.score(&refs)?;
            let value = roc_auc(&scores, &labels)?;
            let positives = labels.iter().filter(|&&l| l).count();
            Some(AucBlock { value, positives, negatives: labels.len() - positives })
        }
    };
    Ok(MetricsReport::from_rows(model_label, mode_label, rows, auc, config))
}

/// Evaluates a trained model's suppressor on the dataset's test split.
pub fn evaluate_model(
    model: &Model,
    ds: &Dataset,
    clf: Option<&Classifier>,
    model_label: &str,
    config: BTreeMap<String, String>,
) -> Result<MetricsReport> {
    let size = ds.image_size()?;
    if model.image_size() != size {
        return Err(Error::Data(format!(
            "model expects {}px images, dataset is {size}px",
            model.image_size()
        )));
    }
    let gen = model.suppressor();
    evaluate_with(|x| gen.apply(x), ds, clf, model_label, model.mode().as_str(), config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ClassifierConfig;
    use crate::dataset::write_dataset;
    use crate::phantom::PhantomConfig;

    fn tiny_dataset(dir: &Path, count: usize) -> Dataset {
        let cfg = PhantomConfig { count, image_size: 16, seed: 29, ..PhantomConfig::default() };
        write_dataset(dir, &cfg).unwrap();
        Dataset::open(dir).unwrap()
    }

    #[test]
    fn six_digit_formatting_is_stable() {
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(36.0781), "36.0781");
        assert_eq!(sig6(0.5), "0.500000");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(-0.000123456), "-0.000123456");
        assert_eq!(sig6(10_000_000.0), "10000000");
        for &x in &[0.999_999_6, 1.0 / 3.0, 2.0f64.sqrt() * 1e-3, -7.25e8] {
            let once = q6(x);
            assert_eq!(sig6(once), sig6(q6(once)), "quantization must be a fixed point for {x}");
        }
    }

    #[test]
    fn aggregates_match_hand_computation() {
        let rows = vec![
            ImageRow { id: "a".into(), ssim: Some(0.8), psnr: Some(20.0) },
            ImageRow { id: "b".into(), ssim: Some(0.9), psnr: Some(f64::INFINITY) },
            ImageRow { id: "c".into(), ssim: Some(1.0), psnr: Some(30.0) },
        ];
        let r = MetricsReport::from_rows("m", "paired", rows, None, BTreeMap::new());
        let s = r.ssim.unwrap();
        assert_eq!(s.count, 3);
        assert_eq!(s.infinite_count, 0);
        assert!((s.mean.unwrap() - 0.9).abs() < 1e-9);
        assert!((s.std_dev.unwrap() - 0.1).abs() < 1e-6);
        assert!((s.std_err.unwrap() - 0.1 / 3f64.sqrt()).abs() < 1e-6);
        let p = r.psnr.unwrap();
        assert_eq!((p.count, p.infinite_count), (2, 1));
        assert!((p.mean.unwrap() - 25.0).abs() < 1e-9);
    }

    #[test]
    fn identity_translator_reproduces_the_dataset_baseline() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path(), 12);
        let report =
            evaluate_with(|x| Ok(x.clone()), &ds, None, "identity", "stub", BTreeMap::new())
                .unwrap();
        assert_eq!(report.rows.len(), ds.rows_in(Split::Test).len());
        for row in &report.rows {
            let standard = ds.load_unit(ImageKind::Standard, &row.id, None).unwrap();
            let soft = ds.load_unit(ImageKind::Soft, &row.id, None).unwrap();
            let direct = ssim(&standard, &soft, 16, 16).unwrap();
            let got = row.ssim.unwrap();
            assert!(
                (got - direct).abs() < 1e-4,
                "{}: identity SSIM {got} strayed from baseline {direct}",
                row.id
            );
            assert!(row.psnr.unwrap().is_finite());
        }
    }

    #[test]
    fn report_roundtrip_is_byte_identical() {
        let rows = vec![
            ImageRow { id: "img_a".into(), ssim: Some(0.867_321_9), psnr: Some(36.078_144) },
            ImageRow { id: "img_b".into(), ssim: Some(1.0), psnr: Some(f64::INFINITY) },
            ImageRow { id: "img_c".into(), ssim: None, psnr: None },
        ];
        let auc = Some(AucBlock { value: 0.951_234_5, positives: 2, negatives: 1 });
        let mut config = BTreeMap::new();
        config.insert("seed".to_string(), "17".to_string());
        config.insert("mode".to_string(), "paired".to_string());
        let report = MetricsReport::from_rows("model.bsgc", "paired", rows, auc, config);

        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("one");
        report.write(&first).unwrap();
        let back = MetricsReport::read(&first).unwrap();
        assert_eq!(back, report);

        let second = dir.path().join("two");
        back.write(&second).unwrap();
        for name in [REPORT_JSON, REPORT_TSV] {
            let a = fs::read(first.join(name)).unwrap();
            let b = fs::read(second.join(name)).unwrap();
            assert_eq!(a, b, "{name} must round-trip byte-identically");
        }
    }

    #[test]
    fn json_is_well_formed_with_stable_keys() {
        let rows = vec![ImageRow { id: "x".into(), ssim: Some(0.5), psnr: Some(f64::INFINITY) }];
        let report = MetricsReport::from_rows("m", "unpaired", rows, None, BTreeMap::new());
        let v: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(v["mode"], "unpaired");
        assert_eq!(v["image_count"], 1);
        assert_eq!(v["psnr"]["count"], 0);
        assert_eq!(v["psnr"]["infinite_count"], 1);
        assert!(v["psnr"]["mean"].is_null());
        assert!(v.get("auc").is_none());
    }

    #[test]
    fn missing_ground_truth_omits_the_metric_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path(), 12);
        fs::remove_dir_all(dir.path().join("soft")).unwrap();
        let report =
            evaluate_with(|x| Ok(x.clone()), &ds, None, "identity", "stub", BTreeMap::new())
                .unwrap();
        assert!(report.ssim.is_none());
        assert!(report.psnr.is_none());
        assert!(report.rows.iter().all(|r| r.ssim.is_none() && r.psnr.is_none()));
        let tsv = report.to_tsv();
        assert!(tsv.lines().skip(1).all(|l| l.ends_with("\t\t") || l.ends_with('\t')));
    }

    #[test]
    fn a_classifier_adds_an_auc_block() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path(), 20);
        let test_rows = ds.rows_in(Split::Test);
        let positives = test_rows.iter().filter(|r| r.abnormal).count();
        assert!(
            positives > 0 && positives < test_rows.len(),
            "fixture must have both classes in its test split"
        );
        let clf = Classifier::new(ClassifierConfig { image_size: 16, base_channels: 8 }, 3).unwrap();
        let report =
            evaluate_with(|x| Ok(x.clone()), &ds, Some(&clf), "identity", "stub", BTreeMap::new())
                .unwrap();
        let auc = report.auc.unwrap();
        assert_eq!(auc.positives, positives);
        assert_eq!(auc.negatives, test_rows.len() - positives);
        assert!((0.0..=1.0).contains(&auc.value));
    }

    #[test]
    fn size_mismatches_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path(), 12);
        let clf = Classifier::new(ClassifierConfig { image_size: 32, base_channels: 8 }, 3).unwrap();
        let err = evaluate_with(|x| Ok(x.clone()), &ds, Some(&clf), "m", "s", BTreeMap::new());
        assert!(matches!(err, Err(Error::Data(_))));
    }
}
