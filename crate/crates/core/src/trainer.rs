//! Paired and unpaired adversarial training loops.
//!
//! Both trainers alternate one discriminator step with one generator step
//! per batch. The paired loop conditions the discriminator on the input
//! image (source and candidate concatenated along channels) and adds a
//! weighted L1 reconstruction term; the unpaired loop trains two
//! generators against two unconditional discriminators with a weighted
//! two-way cycle-consistency term, using the least-squares adversarial
//! variant. Every source of randomness derives from the config seed with a
//! fixed label, and samples are canonicalized by id before shuffling, so a
//! run is a pure function of (data contents, config) regardless of the
//! order samples arrive in.
//!
//! Any non-finite value surfacing inside a training step is reported as a
//! divergence error tagged with the epoch and step that produced it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;

use crate::autodiff::Graph;
use crate::dataset::{signed_to_unit, unit_to_signed, Dataset, ImageKind};
use crate::error::{Error, Result};
use crate::kernels::NormMode;
use crate::losses::{
    cycle_consistency_loss, disc_adversarial_loss, gen_adversarial_loss, l1_loss, GanMode,
};
use crate::metrics::ssim;
use crate::networks::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::optim::{adam_update, AdamConfig, AdamState};
use crate::rng::{derive_seed, rng_from_seed};
use crate::split::Split;
use crate::tensor::Tensor;

/// Which training procedure a model was (or will be) produced by.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    Paired,
    Unpaired,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Paired => "paired",
            TrainMode::Unpaired => "unpaired",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "paired" => Ok(TrainMode::Paired),
            "unpaired" => Ok(TrainMode::Unpaired),
            other => Err(Error::Usage(format!(
                "unknown mode {other:?}, expected \"paired\" or \"unpaired\""
            ))),
        }
    }
}

/// Everything a training run needs beyond the data itself.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub image_size: usize,
    pub base_channels: usize,
    /// Generator depth; 0 selects the size-based default.
    pub depth: usize,
    pub disc_levels: usize,
    /// Normalization override; `None` keeps the mode's convention
    /// (batch for paired, instance for unpaired).
    pub norm: Option<NormMode>,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub seed: u64,
    pub lambda_l1: f32,
    pub lambda_cycle: f32,
    /// Write an intermediate checkpoint every this many generator steps
    /// (0 disables); requires `checkpoint_dir`.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(mode: TrainMode) -> Self {
        TrainConfig {
            mode,
            image_size: 64,
            base_channels: 16,
            depth: 0,
            disc_levels: 3,
            norm: None,
            batch_size: 4,
            epochs: 40,
            learning_rate: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            seed: 17,
            lambda_l1: 100.0,
            lambda_cycle: 10.0,
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Usage("batch_size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Usage("epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Usage(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, w) in [("lambda_l1", self.lambda_l1), ("lambda_cycle", self.lambda_cycle)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Usage(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        if self.checkpoint_every > 0 && self.checkpoint_dir.is_none() {
            return Err(Error::Usage(
                "checkpoint_every needs a checkpoint directory to write into".into(),
            ));
        }
        // Network configs validate the size/depth/level relationships.
        self.generator_config()?;
        self.discriminator_config()?;
        Ok(())
    }

    pub fn norm_mode(&self) -> NormMode {
        self.norm.unwrap_or(match self.mode {
            TrainMode::Paired => NormMode::Batch,
            TrainMode::Unpaired => NormMode::Instance,
        })
    }

    pub fn generator_config(&self) -> Result<GeneratorConfig> {
        if self.depth == 0 {
            return GeneratorConfig::auto(self.image_size, self.base_channels, self.norm_mode());
        }
        let cfg = GeneratorConfig {
            image_size: self.image_size,
            in_channels: 1,
            out_channels: 1,
            base_channels: self.base_channels,
            depth: self.depth,
            norm: self.norm_mode(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn discriminator_config(&self) -> Result<DiscriminatorConfig> {
        let cfg = DiscriminatorConfig {
            image_size: self.image_size,
            in_channels: match self.mode {
                TrainMode::Paired => 2,
                TrainMode::Unpaired => 1,
            },
            base_channels: self.base_channels,
            levels: self.disc_levels,
            norm: self.norm_mode(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: 1e-8,
        }
    }
}

pub type OptState = BTreeMap<String, AdamState>;

/// Conditional-GAN translator: one generator, one conditional critic.
#[derive(Clone, Debug)]
pub struct PairedModel {
    pub gen: Generator,
    pub disc: Discriminator,
    pub gen_opt: OptState,
    pub disc_opt: OptState,
}

/// Cycle-consistent translator: generators for both directions, an
/// unconditional critic per domain.
#[derive(Clone, Debug)]
pub struct UnpairedModel {
    pub gen_ab: Generator,
    pub gen_ba: Generator,
    pub disc_a: Discriminator,
    pub disc_b: Discriminator,
    pub gen_ab_opt: OptState,
    pub gen_ba_opt: OptState,
    pub disc_a_opt: OptState,
    pub disc_b_opt: OptState,
}

#[derive(Debug)]
pub enum Model {
    Paired(PairedModel),
    Unpaired(UnpairedModel),
}

impl Model {
    pub fn mode(&self) -> TrainMode {
        match self {
            Model::Paired(_) => TrainMode::Paired,
            Model::Unpaired(_) => TrainMode::Unpaired,
        }
    }

    /// The generator that maps a standard radiograph to its soft-tissue
    /// estimate (the A-to-B direction of an unpaired model).
    pub fn suppressor(&self) -> &Generator {
        match self {
            Model::Paired(m) => &m.gen,
            Model::Unpaired(m) => &m.gen_ab,
        }
    }

    /// The reverse generator of an unpaired model, if there is one.
    pub fn reverse(&self) -> Option<&Generator> {
        match self {
            Model::Paired(_) => None,
            Model::Unpaired(m) => Some(&m.gen_ba),
        }
    }

    pub fn image_size(&self) -> usize {
        self.suppressor().cfg().image_size
    }
}

/// Per-epoch loss means. `gen_rec` is the unweighted reconstruction term:
/// L1 for paired training, the two-way cycle loss for unpaired.
#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub disc_loss: f64,
    pub gen_adv: f64,
    pub gen_rec: f64,
    pub val_ssim: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Mean cycle loss of the untrained generators, measured before the
    /// first update (unpaired runs only).
    pub cycle_initial: Option<f64>,
}

impl History {
    /// Mean reconstruction loss of the final epoch.
    pub fn final_rec(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.gen_rec)
    }

    /// Tab-separated rendering with a small `#`-prefixed preamble.
    pub fn to_tsv(&self, mode: TrainMode) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# mode = {}", mode.as_str());
        if let Some(c) = self.cycle_initial {
            let _ = writeln!(out, "# cycle_initial = {c}");
        }
        out.push_str("epoch\tdisc_loss\tgen_adv\tgen_rec\tval_ssim\n");
        for e in &self.epochs {
            let val = e.val_ssim.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{val}",
                e.epoch, e.disc_loss, e.gen_adv, e.gen_rec
            );
        }
        out
    }
}

/// One training example in the signed [-1, 1] range the networks use:
/// the composed radiograph and its soft-tissue target.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub standard: Vec<f32>,
    pub soft: Vec<f32>,
}

/// An id-tagged single image for the unpaired pools.
#[derive(Clone, Debug)]
pub struct PoolImage {
    pub id: String,
    pub pixels: Vec<f32>,
}

/// Train and validation samples preloaded into memory.
pub struct TrainData {
    pub image_size: usize,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

impl TrainData {
    /// Loads the train and val splits of a dataset directory.
    pub fn load(ds: &Dataset) -> Result<Self> {
        let image_size = ds.image_size()?;
        let load_split = |split: Split| -> Result<Vec<Sample>> {
            ds.rows_in(split)
                .iter()
                .map(|row| {
                    let standard = ds.load_unit(ImageKind::Standard, &row.id, Some(image_size))?;
                    let soft = ds.load_unit(ImageKind::Soft, &row.id, Some(image_size))?;
                    Ok(Sample {
                        id: row.id.clone(),
                        standard: unit_to_signed(&standard),
                        soft: unit_to_signed(&soft),
                    })
                })
                .collect()
        };
        let train = load_split(Split::Train)?;
        let val = load_split(Split::Val)?;
        if train.is_empty() {
            return Err(Error::Data("dataset has no training rows".into()));
        }
        Ok(TrainData { image_size, train, val })
    }

    /// The two single-domain pools unpaired training draws from: every
    /// training radiograph on one side, every soft-tissue image on the
    /// other, with the pairing forgotten.
    pub fn pools(&self) -> (Vec<PoolImage>, Vec<PoolImage>) {
        let a = self
            .train
            .iter()
            .map(|s| PoolImage { id: s.id.clone(), pixels: s.standard.clone() })
            .collect();
        let b = self
            .train
            .iter()
            .map(|s| PoolImage { id: s.id.clone(), pixels: s.soft.clone() })
            .collect();
        (a, b)
    }
}

fn batch_tensor(images: &[&[f32]], size: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(images.len() * size * size);
    for img in images {
        if img.len() != size * size {
            return Err(Error::Dim(format!(
                "sample has {} pixels, expected {}x{size}",
                img.len(),
                size
            )));
        }
        data.extend_from_slice(img);
    }
    Tensor::new(&[images.len(), 1, size, size], data)
}

fn epoch_order(n: usize, seed: u64, label: &str) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(derive_seed(seed, label)));
    idx
}

/// Tags numeric failures with where training stood when they appeared.
fn divergence(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::Numeric(msg) => {
            Error::Divergence(format!("epoch {epoch}, step {step}: {msg}"))
        }
        other => other,
    }
}

/// Mean SSIM of the suppressor's outputs against the soft-tissue targets,
/// evaluated one image at a time in the unit range.
fn validation_ssim(gen: &Generator, val: &[Sample], size: usize) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for sample in val {
        let x = batch_tensor(&[&sample.standard], size)?;
        let y = gen.apply(&x)?;
        total += ssim(
            &signed_to_unit(y.data()),
            &signed_to_unit(&sample.soft),
            size,
            size,
        )?;
    }
    Ok(Some(total / val.len() as f64))
}

fn checkpoint_path(cfg: &TrainConfig, global_step: usize) -> Option<PathBuf> {
    if cfg.checkpoint_every == 0 || global_step % cfg.checkpoint_every != 0 {
        return None;
    }
    let dir = cfg
        .checkpoint_dir
        .as_ref()
        .expect("validate() requires a directory when checkpoint_every is set");
    Some(dir.join(format!("model_step_{global_step:06}.bsgc")))
}

/// One conditional-discriminator update: real pair (x, t) toward 1, fake
/// pair (x, G(x)) toward 0. The generator is bound frozen, so no gradient
/// reaches it. Returns the discriminator loss.
fn paired_disc_step(
    model: &mut PairedModel,
    x_batch: &Tensor,
    t_batch: &Tensor,
    adam: &AdamConfig,
) -> Result<f64> {
    let mut g = Graph::new();
    let gen_b = model.gen.bind(&mut g, false);
    let disc_b = model.disc.bind(&mut g, true);
    let xs = g.constant(x_batch);
    let xt = g.constant(t_batch);
    let fake = model.gen.forward(&mut g, &gen_b, xs)?;
    let real_pair = g.concat_channels(xs, xt)?;
    let fake_pair = g.concat_channels(xs, fake)?;
    let real_logits = model.disc.forward(&mut g, &disc_b, real_pair)?;
    let fake_logits = model.disc.forward(&mut g, &disc_b, fake_pair)?;
    let loss = disc_adversarial_loss(&mut g, GanMode::Vanilla, real_logits, fake_logits)?;
    g.backward(loss)?;
    adam_update(&mut model.disc.params, &disc_b.grads(&g), &mut model.disc_opt, adam)?;
    g.scalar_f64(loss)
}

/// One generator update: adversarial term plus lambda_l1 times the L1
/// reconstruction. The discriminator is bound frozen. Returns the
/// (adversarial, unweighted L1) losses.
fn paired_gen_step(
    model: &mut PairedModel,
    x_batch: &Tensor,
    t_batch: &Tensor,
    lambda_l1: f32,
    adam: &AdamConfig,
) -> Result<(f64, f64)> {
    let mut g = Graph::new();
    let gen_b = model.gen.bind(&mut g, true);
    let disc_b = model.disc.bind(&mut g, false);
    let xs = g.constant(x_batch);
    let xt = g.constant(t_batch);
    let fake = model.gen.forward(&mut g, &gen_b, xs)?;
    let fake_pair = g.concat_channels(xs, fake)?;
    let fake_logits = model.disc.forward(&mut g, &disc_b, fake_pair)?;
    let adv = gen_adversarial_loss(&mut g, GanMode::Vanilla, fake_logits)?;
    let rec = l1_loss(&mut g, fake, xt)?;
    let weighted = g.mul_scalar(rec, lambda_l1)?;
    let loss = g.add(adv, weighted)?;
    g.backward(loss)?;
    adam_update(&mut model.gen.params, &gen_b.grads(&g), &mut model.gen_opt, adam)?;
    Ok((g.scalar_f64(adv)?, g.scalar_f64(rec)?))
}

/// Trains a conditional GAN on (standard, soft-tissue) pairs.
///
/// GAN training is not monotone, so the returned model is the snapshot from
/// the epoch with the best validation SSIM (the final state when the
/// validation split is empty). The history still records every epoch.
pub fn train_paired(data: &TrainData, cfg: &TrainConfig) -> Result<(Model, History)> {
    cfg.validate()?;
    if cfg.mode != TrainMode::Paired {
        return Err(Error::Usage("train_paired needs a config with mode paired".into()));
    }
    if cfg.image_size != data.image_size {
        return Err(Error::Dim(format!(
            "config expects {}px images but the dataset holds {}px",
            cfg.image_size, data.image_size
        )));
    }
    if data.train.len() < cfg.batch_size {
        return Err(Error::Data(format!(
            "{} training pairs cannot fill a batch of {}",
            data.train.len(),
            cfg.batch_size
        )));
    }

    let mut model = PairedModel {
        gen: Generator::new(cfg.generator_config()?, derive_seed(cfg.seed, "gen"))?,
        disc: Discriminator::new(cfg.discriminator_config()?, derive_seed(cfg.seed, "disc"))?,
        gen_opt: OptState::new(),
        disc_opt: OptState::new(),
    };
    let adam = cfg.adam();
    let size = cfg.image_size;

    let mut order_base: Vec<&Sample> = data.train.iter().collect();
    order_base.sort_by(|a, b| a.id.cmp(&b.id));

    let mut history = History::default();
    let steps = order_base.len() / cfg.batch_size;
    let mut global_step = 0usize;
    let mut best: Option<(f64, PairedModel)> = None;

    for epoch in 1..=cfg.epochs {
        let perm = epoch_order(order_base.len(), cfg.seed, &format!("epoch:{epoch}"));
        let (mut d_sum, mut adv_sum, mut rec_sum) = (0.0, 0.0, 0.0);
        for step in 0..steps {
            let members: Vec<&Sample> = perm[step * cfg.batch_size..(step + 1) * cfg.batch_size]
                .iter()
                .map(|&i| order_base[i])
                .collect();
            let x_batch =
                batch_tensor(&members.iter().map(|s| &s.standard[..]).collect::<Vec<_>>(), size)?;
            let t_batch =
                batch_tensor(&members.iter().map(|s| &s.soft[..]).collect::<Vec<_>>(), size)?;

            d_sum += paired_disc_step(&mut model, &x_batch, &t_batch, &adam)
                .map_err(|e| divergence(e, epoch, step))?;
            let (adv, rec) =
                paired_gen_step(&mut model, &x_batch, &t_batch, cfg.lambda_l1, &adam)
                    .map_err(|e| divergence(e, epoch, step))?;
            adv_sum += adv;
            rec_sum += rec;

            global_step += 1;
            if let Some(path) = checkpoint_path(cfg, global_step) {
                crate::checkpoint::save_paired(&model, &path)?;
            }
        }
        let val_ssim = validation_ssim(&model.gen, &data.val, size)?;
        if let Some(v) = val_ssim {
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, model.clone()));
            }
        }
        history.epochs.push(EpochRecord {
            epoch,
            disc_loss: d_sum / steps as f64,
            gen_adv: adv_sum / steps as f64,
            gen_rec: rec_sum / steps as f64,
            val_ssim,
        });
    }
    if let Some((_, snapshot)) = best {
        model = snapshot;
    }
    Ok((Model::Paired(model), history))
}

/// Mean two-way cycle loss of the current generators over full batches of
/// the (sorted) pools, without touching any parameters.
fn measure_cycle(
    model: &UnpairedModel,
    pool_a: &[&PoolImage],
    pool_b: &[&PoolImage],
    batch: usize,
    size: usize,
) -> Result<f64> {
    let steps = pool_a.len().min(pool_b.len()) / batch;
    let mut total = 0.0;
    for step in 0..steps {
        let a: Vec<&[f32]> =
            pool_a[step * batch..(step + 1) * batch].iter().map(|p| &p.pixels[..]).collect();
        let b: Vec<&[f32]> =
            pool_b[step * batch..(step + 1) * batch].iter().map(|p| &p.pixels[..]).collect();
        let a_batch = batch_tensor(&a, size)?;
        let b_batch = batch_tensor(&b, size)?;

        let mut g = Graph::new();
        let gab = model.gen_ab.bind(&mut g, false);
        let gba = model.gen_ba.bind(&mut g, false);
        let xa = g.constant(&a_batch);
        let xb = g.constant(&b_batch);
        let fake_b = model.gen_ab.forward(&mut g, &gab, xa)?;
        let rec_a = model.gen_ba.forward(&mut g, &gba, fake_b)?;
        let fake_a = model.gen_ba.forward(&mut g, &gba, xb)?;
        let rec_b = model.gen_ab.forward(&mut g, &gab, fake_a)?;
        let cyc = cycle_consistency_loss(&mut g, xa, rec_a, xb, rec_b)?;
        total += g.scalar_f64(cyc)?;
    }
    Ok(total / steps as f64)
}

/// One update of both unconditional discriminators on real images versus
/// their frozen-generator translations. Returns the summed loss.
fn unpaired_disc_step(
    model: &mut UnpairedModel,
    a_batch: &Tensor,
    b_batch: &Tensor,
    adam: &AdamConfig,
) -> Result<f64> {
    let mut g = Graph::new();
    let gab = model.gen_ab.bind(&mut g, false);
    let gba = model.gen_ba.bind(&mut g, false);
    let da = model.disc_a.bind(&mut g, true);
    let db = model.disc_b.bind(&mut g, true);
    let xa = g.constant(a_batch);
    let xb = g.constant(b_batch);
    let fake_b = model.gen_ab.forward(&mut g, &gab, xa)?;
    let fake_a = model.gen_ba.forward(&mut g, &gba, xb)?;
    let db_real = model.disc_b.forward(&mut g, &db, xb)?;
    let db_fake = model.disc_b.forward(&mut g, &db, fake_b)?;
    let da_real = model.disc_a.forward(&mut g, &da, xa)?;
    let da_fake = model.disc_a.forward(&mut g, &da, fake_a)?;
    let loss_b = disc_adversarial_loss(&mut g, GanMode::LeastSquares, db_real, db_fake)?;
    let loss_a = disc_adversarial_loss(&mut g, GanMode::LeastSquares, da_real, da_fake)?;
    let loss = g.add(loss_a, loss_b)?;
    g.backward(loss)?;
    adam_update(&mut model.disc_a.params, &da.grads(&g), &mut model.disc_a_opt, adam)?;
    adam_update(&mut model.disc_b.params, &db.grads(&g), &mut model.disc_b_opt, adam)?;
    g.scalar_f64(loss)
}

/// One joint update of both generators: least-squares adversarial terms in
/// each direction plus the weighted cycle loss. Returns the (summed
/// adversarial, unweighted cycle) losses.
fn unpaired_gen_step(
    model: &mut UnpairedModel,
    a_batch: &Tensor,
    b_batch: &Tensor,
    lambda_cycle: f32,
    adam: &AdamConfig,
) -> Result<(f64, f64)> {
    let mut g = Graph::new();
    let gab = model.gen_ab.bind(&mut g, true);
    let gba = model.gen_ba.bind(&mut g, true);
    let da = model.disc_a.bind(&mut g, false);
    let db = model.disc_b.bind(&mut g, false);
    let xa = g.constant(a_batch);
    let xb = g.constant(b_batch);
    let fake_b = model.gen_ab.forward(&mut g, &gab, xa)?;
    let rec_a = model.gen_ba.forward(&mut g, &gba, fake_b)?;
    let fake_a = model.gen_ba.forward(&mut g, &gba, xb)?;
    let rec_b = model.gen_ab.forward(&mut g, &gab, fake_a)?;
    let logits_b = model.disc_b.forward(&mut g, &db, fake_b)?;
    let logits_a = model.disc_a.forward(&mut g, &da, fake_a)?;
    let adv_b = gen_adversarial_loss(&mut g, GanMode::LeastSquares, logits_b)?;
    let adv_a = gen_adversarial_loss(&mut g, GanMode::LeastSquares, logits_a)?;
    let adv = g.add(adv_a, adv_b)?;
    let cyc = cycle_consistency_loss(&mut g, xa, rec_a, xb, rec_b)?;
    let weighted = g.mul_scalar(cyc, lambda_cycle)?;
    let loss = g.add(adv, weighted)?;
    g.backward(loss)?;
    adam_update(&mut model.gen_ab.params, &gab.grads(&g), &mut model.gen_ab_opt, adam)?;
    adam_update(&mut model.gen_ba.params, &gba.grads(&g), &mut model.gen_ba_opt, adam)?;
    Ok((g.scalar_f64(adv)?, g.scalar_f64(cyc)?))
}

/// Trains a cycle-consistent translator on two unaligned image pools. The
/// pools may differ in length; each epoch walks independently shuffled
/// streams and drops the remainder that cannot fill a batch. `val` pairs
/// are only used for the per-epoch validation SSIM and may be empty.
///
/// As with paired training, the returned model is the snapshot from the
/// epoch with the best validation SSIM, falling back to the final state
/// when no validation pairs exist.
pub fn train_unpaired(
    source: &[PoolImage],
    target: &[PoolImage],
    val: &[Sample],
    image_size: usize,
    cfg: &TrainConfig,
) -> Result<(Model, History)> {
    cfg.validate()?;
    if cfg.mode != TrainMode::Unpaired {
        return Err(Error::Usage("train_unpaired needs a config with mode unpaired".into()));
    }
    if cfg.image_size != image_size {
        return Err(Error::Dim(format!(
            "config expects {}px images but the pools hold {image_size}px",
            cfg.image_size
        )));
    }
    if source.len().min(target.len()) < cfg.batch_size {
        return Err(Error::Data(format!(
            "pools of {} and {} images cannot fill a batch of {}",
            source.len(),
            target.len(),
            cfg.batch_size
        )));
    }

    let gen_cfg = cfg.generator_config()?;
    let disc_cfg = cfg.discriminator_config()?;
    let mut model = UnpairedModel {
        gen_ab: Generator::new(gen_cfg, derive_seed(cfg.seed, "gen_ab"))?,
        gen_ba: Generator::new(gen_cfg, derive_seed(cfg.seed, "gen_ba"))?,
        disc_a: Discriminator::new(disc_cfg, derive_seed(cfg.seed, "disc_a"))?,
        disc_b: Discriminator::new(disc_cfg, derive_seed(cfg.seed, "disc_b"))?,
        gen_ab_opt: OptState::new(),
        gen_ba_opt: OptState::new(),
        disc_a_opt: OptState::new(),
        disc_b_opt: OptState::new(),
    };
    let adam = cfg.adam();
    let size = cfg.image_size;

    let mut pool_a: Vec<&PoolImage> = source.iter().collect();
    pool_a.sort_by(|x, y| x.id.cmp(&y.id));
    let mut pool_b: Vec<&PoolImage> = target.iter().collect();
    pool_b.sort_by(|x, y| x.id.cmp(&y.id));

    let mut history = History::default();
    history.cycle_initial =
        Some(measure_cycle(&model, &pool_a, &pool_b, cfg.batch_size, size)?);

    let steps = pool_a.len().min(pool_b.len()) / cfg.batch_size;
    let mut global_step = 0usize;
    let mut best: Option<(f64, UnpairedModel)> = None;

    for epoch in 1..=cfg.epochs {
        let perm_a = epoch_order(pool_a.len(), cfg.seed, &format!("epoch_a:{epoch}"));
        let perm_b = epoch_order(pool_b.len(), cfg.seed, &format!("epoch_b:{epoch}"));
        let (mut d_sum, mut adv_sum, mut cyc_sum) = (0.0, 0.0, 0.0);
        for step in 0..steps {
            let a: Vec<&[f32]> = perm_a[step * cfg.batch_size..(step + 1) * cfg.batch_size]
                .iter()
                .map(|&i| &pool_a[i].pixels[..])
                .collect();
            let b: Vec<&[f32]> = perm_b[step * cfg.batch_size..(step + 1) * cfg.batch_size]
                .iter()
                .map(|&i| &pool_b[i].pixels[..])
                .collect();
            let a_batch = batch_tensor(&a, size)?;
            let b_batch = batch_tensor(&b, size)?;

            d_sum += unpaired_disc_step(&mut model, &a_batch, &b_batch, &adam)
                .map_err(|e| divergence(e, epoch, step))?;
            let (adv, cyc) =
                unpaired_gen_step(&mut model, &a_batch, &b_batch, cfg.lambda_cycle, &adam)
                    .map_err(|e| divergence(e, epoch, step))?;
            adv_sum += adv;
            cyc_sum += cyc;

            global_step += 1;
            if let Some(path) = checkpoint_path(cfg, global_step) {
                crate::checkpoint::save_unpaired(&model, &path)?;
            }
        }
        let val_ssim = validation_ssim(&model.gen_ab, val, size)?;
        if let Some(v) = val_ssim {
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, model.clone()));
            }
        }
        history.epochs.push(EpochRecord {
            epoch,
            disc_loss: d_sum / steps as f64,
            gen_adv: adv_sum / steps as f64,
            gen_rec: cyc_sum / steps as f64,
            val_ssim,
        });
    }
    if let Some((_, snapshot)) = best {
        model = snapshot;
    }
    Ok((Model::Unpaired(model), history))
}
