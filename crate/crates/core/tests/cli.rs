//! End-to-end tests of the `bonesup` binary: real processes, real exit
//! codes, real files.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use bonesup::checkpoint::save_classifier;
use bonesup::classifier::{Classifier, ClassifierConfig};

const BIN: &str = env!("CARGO_BIN_EXE_bonesup");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Every file under `dir`, keyed by relative path.
fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, map: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let entry = entry.unwrap();
            let path = entry.path();
            if path.is_dir() {
                walk(root, &path, map);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_str().unwrap().to_string();
                map.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut map = BTreeMap::new();
    walk(dir, dir, &mut map);
    map
}

fn make_dataset(dir: &Path, count: usize) {
    let out = run(&[
        "phantom",
        "--count",
        &count.to_string(),
        "--size",
        "16",
        "--seed",
        "5",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

fn train_tiny(data: &Path, out_dir: &Path, mode: &str) {
    let cfg = data.parent().unwrap().join("tiny.cfg");
    std::fs::write(&cfg, "epochs = 1\nbase_channels = 4\ndisc_levels = 2\nbatch_size = 4\n")
        .unwrap();
    let out = run(&[
        "train",
        "--mode",
        mode,
        "--data",
        data.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["translate", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["summon"])), 1);
    assert_eq!(code(&run(&["phantom", "--count", "ten", "--out", "x"])), 1);
}

#[test]
fn phantom_writes_a_complete_dataset_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("data");
    make_dataset(&dir, 12);

    for sub in ["standard", "soft", "bone"] {
        let n = std::fs::read_dir(dir.join(sub)).unwrap().count();
        assert_eq!(n, 12, "{sub} must hold one image per sample");
    }
    assert!(dir.join("manifest.tsv").is_file());
    assert!(dir.join("resolved.cfg").is_file());

    let first = dir_contents(&dir);
    make_dataset(&dir, 12);
    assert_eq!(first, dir_contents(&dir), "rerun must be byte-identical");
}

#[test]
fn phantom_below_the_minimum_count_fails_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("tiny");
    let out = run(&["phantom", "--count", "5", "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(!dir.exists(), "a failed run must not leave partial outputs");
}

#[test]
fn train_smoke_run_writes_model_history_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    make_dataset(&data, 12);
    let run_dir = tmp.path().join("run");
    train_tiny(&data, &run_dir, "paired");

    let model = std::fs::read(run_dir.join("model.bsgc")).unwrap();
    assert_eq!(&model[..4], b"BSGC", "checkpoint must carry the format magic");
    let history = std::fs::read_to_string(run_dir.join("history.tsv")).unwrap();
    assert!(history.contains("epoch\tdisc_loss\tgen_adv\tgen_rec\tval_ssim"));
    let resolved = std::fs::read_to_string(run_dir.join("resolved.cfg")).unwrap();
    assert!(resolved.contains("mode = paired"));
    assert!(resolved.contains("epochs = 1"));
}

#[test]
fn train_without_a_data_directory_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("never");
    let out = run(&[
        "train",
        "--mode",
        "paired",
        "--data",
        tmp.path().join("absent").to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(!out_dir.exists(), "no partial outputs on failure");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    make_dataset(&data, 12);
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "epochs = 1\nlerning_rate = 0.1\n").unwrap();
    let out = run(&[
        "train",
        "--mode",
        "paired",
        "--data",
        data.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(stderr(&out).contains("lerning_rate"), "the bad key must be named");
}

#[test]
fn translate_mirrors_the_input_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    make_dataset(&data, 12);
    let run_dir = tmp.path().join("run");
    train_tiny(&data, &run_dir, "paired");

    let model = run_dir.join("model.bsgc");
    let in_dir = data.join("standard");
    let out_dir = tmp.path().join("suppressed");
    let before = dir_contents(&in_dir);
    let out = run(&[
        "translate",
        "--model",
        model.to_str().unwrap(),
        "--in",
        in_dir.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(before, dir_contents(&in_dir), "inputs must not be touched");

    let input_names: Vec<String> = std::fs::read_dir(&in_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    for name in &input_names {
        let path = out_dir.join(name);
        assert!(path.is_file(), "{name} missing from the output");
        let img = bonesup::pgm::read_pgm(&path).unwrap();
        assert_eq!((img.width, img.height), (16, 16));
    }

    // Re-running lands on identical bytes.
    let first = dir_contents(&out_dir);
    let again = run(&[
        "translate",
        "--model",
        model.to_str().unwrap(),
        "--in",
        in_dir.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&again), 0);
    assert_eq!(first, dir_contents(&out_dir));

    // A paired model has exactly one direction.
    let rev = run(&[
        "translate",
        "--model",
        model.to_str().unwrap(),
        "--in",
        in_dir.to_str().unwrap(),
        "--out",
        tmp.path().join("rev").to_str().unwrap(),
        "--reverse",
    ]);
    assert_eq!(code(&rev), 1, "{}", stderr(&rev));
}

#[test]
fn evaluate_writes_a_report_and_classifier_adds_auc() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    make_dataset(&data, 20);
    let run_dir = tmp.path().join("run");
    train_tiny(&data, &run_dir, "paired");
    let model = run_dir.join("model.bsgc");

    let rep = tmp.path().join("rep");
    let out = run(&[
        "evaluate",
        "--model",
        model.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--report",
        rep.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(rep.join("report.json")).unwrap()).unwrap();
    assert!(json["ssim"]["mean"].is_f64());
    assert!(json.get("auc").is_none());
    assert!(rep.join("report.tsv").is_file());
    assert!(rep.join("resolved.cfg").is_file());

    // With a classifier checkpoint the report gains an AUC block.
    let clf = Classifier::new(ClassifierConfig { image_size: 16, base_channels: 8 }, 11).unwrap();
    let clf_path = tmp.path().join("clf.bsgc");
    save_classifier(&clf, &clf_path).unwrap();
    let rep2 = tmp.path().join("rep2");
    let out = run(&[
        "evaluate",
        "--model",
        model.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--classifier",
        clf_path.to_str().unwrap(),
        "--report",
        rep2.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(rep2.join("report.json")).unwrap()).unwrap();
    assert!(json["auc"]["value"].is_f64());
}

#[test]
fn corrupt_checkpoints_exit_with_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    make_dataset(&data, 12);
    let fake = tmp.path().join("fake.bsgc");
    std::fs::write(&fake, b"BSGCnot really").unwrap();
    let out = run(&[
        "evaluate",
        "--model",
        fake.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--report",
        tmp.path().join("rep").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}
