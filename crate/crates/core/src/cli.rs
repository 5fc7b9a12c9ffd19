//! The `bonesup` command line: dataset generation, training, translation,
//! and evaluation as one binary with subcommands.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or
//! format error, 3 numeric divergence. Every command echoes its fully
//! resolved settings into its output directory as `resolved.cfg`, never
//! mutates its input directory, and produces byte-identical outputs when
//! re-run with the same flags.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};

use crate::checkpoint;
use crate::config::{self, KeyReader};
use crate::dataset::{signed_to_u8, unit_to_signed, write_dataset, Dataset};
use crate::error::{Error, Result};
use crate::kernels::NormMode;
use crate::networks::Generator;
use crate::phantom::PhantomConfig;
use crate::pgm;
use crate::report::evaluate_model;
use crate::tensor::Tensor;
use crate::trainer::{self, TrainConfig, TrainData, TrainMode};

pub fn command() -> Command {
    Command::new("bonesup")
        .about("Bone suppression for chest radiographs by adversarial translation")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("phantom")
                .about("Generate a synthetic dual-energy phantom dataset")
                .arg(opt_num::<usize>("count", "number of samples"))
                .arg(opt_num::<usize>("size", "image side length in pixels"))
                .arg(opt_num::<f64>("rho", "fraction of samples with a misregistered bone image"))
                .arg(opt_num::<u64>("seed", "master random seed"))
                .arg(dir_arg("out", "dataset directory to write", true)),
        )
        .subcommand(
            Command::new("train")
                .about("Train a suppression model on a phantom dataset")
                .arg(
                    Arg::new("mode")
                        .long("mode")
                        .value_name("MODE")
                        .value_parser(["paired", "unpaired"])
                        .help("training regime"),
                )
                .arg(dir_arg("data", "dataset directory", true))
                .arg(
                    Arg::new("config")
                        .long("config")
                        .value_name("FILE")
                        .value_parser(value_parser!(PathBuf))
                        .help("key = value settings file"),
                )
                .arg(dir_arg("out", "run directory for the model and logs", true)),
        )
        .subcommand(
            Command::new("translate")
                .about("Apply a trained model to a directory of PGM images")
                .arg(file_arg("model", "checkpoint to load"))
                .arg(dir_arg("in", "directory of input .pgm images", true))
                .arg(dir_arg("out", "directory for translated images", true))
                .arg(
                    Arg::new("reverse")
                        .long("reverse")
                        .action(ArgAction::SetTrue)
                        .help("apply an unpaired model's reverse direction"),
                ),
        )
        .subcommand(
            Command::new("evaluate")
                .about("Score a trained model on a dataset's test split")
                .arg(file_arg("model", "checkpoint to load"))
                .arg(dir_arg("data", "dataset directory", true))
                .arg(
                    Arg::new("classifier")
                        .long("classifier")
                        .value_name("FILE")
                        .value_parser(value_parser!(PathBuf))
                        .help("classifier checkpoint for an AUC score"),
                )
                .arg(dir_arg("report", "directory for report.json and report.tsv", true)),
        )
}

fn opt_num<T: Clone + Send + Sync + std::str::FromStr + 'static>(
    name: &'static str,
    help: &'static str,
) -> Arg
where
    <T as std::str::FromStr>::Err: std::error::Error + Send + Sync + 'static,
{
    Arg::new(name).long(name).value_name("N").value_parser(value_parser!(T)).help(help)
}

fn dir_arg(name: &'static str, help: &'static str, required: bool) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("DIR")
        .required(required)
        .value_parser(value_parser!(PathBuf))
        .help(help)
}

fn file_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("FILE")
        .required(true)
        .value_parser(value_parser!(PathBuf))
        .help(help)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    use clap::error::ErrorKind;
    match command().try_get_matches_from(args) {
        Ok(m) => dispatch(&m),
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            Ok(())
        }
        Err(e) => Err(Error::Usage(e.to_string())),
    }
}

fn dispatch(m: &ArgMatches) -> Result<()> {
    match m.subcommand() {
        Some(("phantom", sm)) => cmd_phantom(sm),
        Some(("train", sm)) => cmd_train(sm),
        Some(("translate", sm)) => cmd_translate(sm),
        Some(("evaluate", sm)) => cmd_evaluate(sm),
        _ => unreachable!("subcommands are required"),
    }
}

fn path_of(m: &ArgMatches, name: &str) -> PathBuf {
    m.get_one::<PathBuf>(name).expect("argument is required").clone()
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

// ----------------------------------------------------------------- phantom

fn phantom_echo(cfg: &PhantomConfig) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    map.insert("count".into(), cfg.count.to_string());
    map.insert("size".into(), cfg.image_size.to_string());
    map.insert("seed".into(), cfg.seed.to_string());
    map.insert("rho".into(), cfg.misregister_rate.to_string());
    map.insert("abnormal_rate".into(), cfg.abnormal_rate.to_string());
    map.insert("nodule_amp".into(), format!("{}..{}", cfg.nodule_amp.0, cfg.nodule_amp.1));
    map.insert("nodule_radius".into(), format!("{}..{}", cfg.nodule_radius.0, cfg.nodule_radius.1));
    map.insert("noise_amp".into(), cfg.noise_amp.to_string());
    map
}

fn cmd_phantom(m: &ArgMatches) -> Result<()> {
    let out = path_of(m, "out");
    let mut cfg = PhantomConfig::default();
    if let Some(&v) = m.get_one::<usize>("count") {
        cfg.count = v;
    }
    if let Some(&v) = m.get_one::<usize>("size") {
        cfg.image_size = v;
    }
    if let Some(&v) = m.get_one::<f64>("rho") {
        cfg.misregister_rate = v;
    }
    if let Some(&v) = m.get_one::<u64>("seed") {
        cfg.seed = v;
    }
    let rows = write_dataset(&out, &cfg)?;
    config::write_resolved(&out, &phantom_echo(&cfg))?;
    println!("wrote {} samples (3 images each) to {}", rows.len(), show(&out));
    Ok(())
}

// ------------------------------------------------------------------- train

fn norm_name(n: NormMode) -> &'static str {
    match n {
        NormMode::Batch => "batch",
        NormMode::Instance => "instance",
    }
}

fn train_echo(cfg: &TrainConfig, resolved_depth: usize) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    map.insert("mode".into(), cfg.mode.as_str().to_string());
    map.insert("image_size".into(), cfg.image_size.to_string());
    map.insert("base_channels".into(), cfg.base_channels.to_string());
    map.insert("depth".into(), resolved_depth.to_string());
    map.insert("disc_levels".into(), cfg.disc_levels.to_string());
    map.insert("norm".into(), norm_name(cfg.norm_mode()).to_string());
    map.insert("batch_size".into(), cfg.batch_size.to_string());
    map.insert("epochs".into(), cfg.epochs.to_string());
    map.insert("learning_rate".into(), cfg.learning_rate.to_string());
    map.insert("adam_beta1".into(), cfg.adam_beta1.to_string());
    map.insert("adam_beta2".into(), cfg.adam_beta2.to_string());
    map.insert("seed".into(), cfg.seed.to_string());
    map.insert("lambda_l1".into(), cfg.lambda_l1.to_string());
    map.insert("lambda_cycle".into(), cfg.lambda_cycle.to_string());
    map.insert("checkpoint_every".into(), cfg.checkpoint_every.to_string());
    map
}

fn cmd_train(m: &ArgMatches) -> Result<()> {
    let data_dir = path_of(m, "data");
    let out = path_of(m, "out");
    let ds = Dataset::open(&data_dir)?;
    let size = ds.image_size()?;

    let file_map = match m.get_one::<PathBuf>("config") {
        Some(p) => config::read_config_file(p)?,
        None => BTreeMap::new(),
    };
    let mut kr = KeyReader::new(file_map);
    let mode_key = kr.take_raw("mode");
    let mode_str = m
        .get_one::<String>("mode")
        .cloned()
        .or(mode_key)
        .ok_or_else(|| Error::Usage("--mode (or a `mode` config key) is required".into()))?;
    let mode = TrainMode::parse(&mode_str)?;

    let mut cfg = TrainConfig::new(mode);
    cfg.image_size = size;
    cfg.base_channels = kr.take("base_channels", cfg.base_channels)?;
    cfg.depth = kr.take("depth", cfg.depth)?;
    cfg.disc_levels = kr.take("disc_levels", cfg.disc_levels)?;
    if let Some(raw) = kr.take_raw("norm") {
        cfg.norm = Some(match raw.as_str() {
            "batch" => NormMode::Batch,
            "instance" => NormMode::Instance,
            _ => {
                return Err(Error::Config(format!(
                    "key \"norm\": expected batch or instance, found {raw:?}"
                )))
            }
        });
    }
    cfg.batch_size = kr.take("batch_size", cfg.batch_size)?;
    cfg.epochs = kr.take("epochs", cfg.epochs)?;
    cfg.learning_rate = kr.take("learning_rate", cfg.learning_rate)?;
    cfg.adam_beta1 = kr.take("adam_beta1", cfg.adam_beta1)?;
    cfg.adam_beta2 = kr.take("adam_beta2", cfg.adam_beta2)?;
    cfg.seed = kr.take("seed", cfg.seed)?;
    cfg.lambda_l1 = kr.take("lambda_l1", cfg.lambda_l1)?;
    cfg.lambda_cycle = kr.take("lambda_cycle", cfg.lambda_cycle)?;
    cfg.checkpoint_every = kr.take("checkpoint_every", cfg.checkpoint_every)?;
    kr.finish()?;
    if cfg.checkpoint_every > 0 {
        cfg.checkpoint_dir = Some(out.join("checkpoints"));
    }
    cfg.validate()?;
    let resolved_depth = cfg.generator_config()?.depth;

    fs::create_dir_all(&out)?;
    if let Some(d) = &cfg.checkpoint_dir {
        fs::create_dir_all(d)?;
    }
    config::write_resolved(&out, &train_echo(&cfg, resolved_depth))?;

    let td = TrainData::load(&ds)?;
    let (model, history) = match mode {
        TrainMode::Paired => trainer::train_paired(&td, &cfg)?,
        TrainMode::Unpaired => {
            let (a, b) = td.pools();
            trainer::train_unpaired(&a, &b, &td.val, size, &cfg)?
        }
    };
    checkpoint::save_model(&model, &out.join("model.bsgc"))?;
    fs::write(out.join("history.tsv"), history.to_tsv(mode))?;
    let last = history.epochs.last();
    println!(
        "trained {} for {} epochs (final reconstruction loss {})",
        mode.as_str(),
        history.epochs.len(),
        last.map_or("n/a".to_string(), |e| format!("{:.4}", e.gen_rec)),
    );
    Ok(())
}

// --------------------------------------------------------------- translate

fn translate_echo(model: &Path, reverse: bool) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    map.insert("model".into(), show(model));
    map.insert("reverse".into(), reverse.to_string());
    map
}

fn pgm_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if name.ends_with(".pgm") && entry.file_type()?.is_file() {
            names.push(name.to_string());
        }
    }
    names.sort();
    Ok(names)
}

fn cmd_translate(m: &ArgMatches) -> Result<()> {
    let model_path = path_of(m, "model");
    let in_dir = path_of(m, "in");
    let out = path_of(m, "out");
    let reverse = m.get_flag("reverse");

    let model = checkpoint::load_model(&model_path)?;
    let gen: &Generator = if reverse {
        model.reverse().ok_or_else(|| {
            Error::Usage("this model has no reverse direction (paired models translate one way)".into())
        })?
    } else {
        model.suppressor()
    };
    let size = model.image_size();

    let names = pgm_names(&in_dir)?;
    if names.is_empty() {
        return Err(Error::Data(format!("no .pgm files in {}", show(&in_dir))));
    }
    fs::create_dir_all(&out)?;
    let same_dir = fs::canonicalize(&out)? == fs::canonicalize(&in_dir)?;
    if same_dir {
        return Err(Error::Usage("--out must differ from --in (inputs are never overwritten)".into()));
    }
    for name in &names {
        let img = pgm::read_pgm(&in_dir.join(name))?;
        if img.width != size || img.height != size {
            return Err(Error::Data(format!(
                "{name} is {}x{}, the model expects {size}x{size}",
                img.width, img.height
            )));
        }
        let x = Tensor::new(&[1, 1, size, size], unit_to_signed(&img.to_unit()))?;
        let y = gen.apply(&x)?;
        pgm::write_pgm(&out.join(name), size, size, &signed_to_u8(y.data()))?;
    }
    config::write_resolved(&out, &translate_echo(&model_path, reverse))?;
    println!("translated {} images to {}", names.len(), show(&out));
    Ok(())
}

// ---------------------------------------------------------------- evaluate

fn cmd_evaluate(m: &ArgMatches) -> Result<()> {
    let model_path = path_of(m, "model");
    let data_dir = path_of(m, "data");
    let report_dir = path_of(m, "report");
    let clf_path = m.get_one::<PathBuf>("classifier");

    let model = checkpoint::load_model(&model_path)?;
    let ds = Dataset::open(&data_dir)?;
    let clf = match clf_path {
        Some(p) => Some(checkpoint::load_classifier(p)?),
        None => None,
    };

    let mut echo = BTreeMap::new();
    echo.insert("model".to_string(), show(&model_path));
    echo.insert("data".to_string(), show(&data_dir));
    echo.insert(
        "classifier".to_string(),
        clf_path.map_or("none".to_string(), |p| show(p)),
    );
    echo.insert("mode".to_string(), model.mode().as_str().to_string());

    let report =
        evaluate_model(&model, &ds, clf.as_ref(), &show(&model_path), echo.clone())?;
    fs::create_dir_all(&report_dir)?;
    report.write(&report_dir)?;
    config::write_resolved(&report_dir, &echo)?;

    let fmt = |b: &Option<crate::report::MetricBlock>, name: &str| match b {
        Some(b) => match b.mean {
            Some(m) => format!("{name} mean {m:.4} over {} images", b.count),
            None => format!("{name} had no finite values"),
        },
        None => format!("{name} unavailable (no ground truth)"),
    };
    println!("{}", fmt(&report.ssim, "ssim"));
    println!("{}", fmt(&report.psnr, "psnr"));
    if let Some(a) = &report.auc {
        println!("auc {:.4} ({} positive, {} negative)", a.value, a.positives, a.negatives);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_structure_is_valid() {
        command().debug_assert();
    }

    #[test]
    fn help_and_version_exit_cleanly() {
        run(["bonesup", "--help"]).unwrap();
        run(["bonesup", "--version"]).unwrap();
        run(["bonesup", "phantom", "--help"]).unwrap();
    }

    #[test]
    fn bad_invocations_are_usage_errors() {
        assert!(matches!(run(["bonesup"]), Err(Error::Usage(_))));
        assert!(matches!(run(["bonesup", "conjure"]), Err(Error::Usage(_))));
        assert!(matches!(run(["bonesup", "phantom"]), Err(Error::Usage(_))));
        assert!(matches!(
            run(["bonesup", "phantom", "--out", "d", "--count", "ten"]),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            run(["bonesup", "train", "--data", "d", "--out", "o", "--mode", "sideways"]),
            Err(Error::Usage(_))
        ));
    }
}
