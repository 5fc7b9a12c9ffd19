//! Small convolutional abnormality classifier.
//!
//! Three stride-2 conv blocks, global average pooling, and a logistic
//! head — about 52k parameters at the default width. It trains with
//! binary cross-entropy under the same Adam optimizer as the translators
//! and exists to score translated images: a suppression model is only
//! useful if nodules survive it.
//!
//! There is no normalization layer, so a batch of N images produces
//! bitwise the same outputs as N single-image calls.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::ReduceKind;
use crate::losses::bce_with_logits_loss;
use crate::networks::{require_pow2_size, LEAKY_SLOPE};
use crate::optim::{adam_update, AdamConfig, AdamState};
use crate::params::{BoundParams, Params};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::Tensor;

const BLOCKS: usize = 3;

/// Fan-in-scaled normal initialization. The translation networks use a
/// fixed small stddev because their normalization layers rescale every
/// activation anyway; this stack has no normalization, so a mis-scaled
/// start would shrink activations multiplicatively per block and leave
/// the loss parked at ln 2 for most of a training run.
fn fan_in_tensor(shape: &[usize], rng: &mut impl rand::Rng) -> Tensor {
    let fan_in: usize = shape[1..].iter().product();
    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("stddev is positive");
    Tensor::from_fn(shape, |_| dist.sample(rng) as f32)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassifierConfig {
    pub image_size: usize,
    pub base_channels: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { image_size: 64, base_channels: 24 }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        require_pow2_size(self.image_size)?;
        if self.base_channels == 0 {
            return Err(Error::Usage("classifier base_channels must be positive".into()));
        }
        if self.image_size >> BLOCKS == 0 {
            return Err(Error::Usage(format!(
                "classifier needs at least {}px images, got {}",
                1 << BLOCKS,
                self.image_size
            )));
        }
        Ok(())
    }

    fn channels(&self, block: usize) -> usize {
        self.base_channels << (block - 1)
    }
}

/// Conv stack emitting one abnormality logit per image.
#[derive(Debug)]
pub struct Classifier {
    cfg: ClassifierConfig,
    pub params: Params,
}

impl Classifier {
    pub fn new(cfg: ClassifierConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_from_seed(seed);
        let mut params = Params::new();
        for i in 1..=BLOCKS {
            let cin = if i == 1 { 1 } else { cfg.channels(i - 1) };
            let cout = cfg.channels(i);
            params.insert(&format!("blk{i}.weight"), fan_in_tensor(&[cout, cin, 3, 3], &mut rng))?;
            params.insert(&format!("blk{i}.bias"), Tensor::zeros(&[cout]))?;
        }
        params.insert(
            "head.weight",
            fan_in_tensor(&[1, cfg.channels(BLOCKS), 1, 1], &mut rng),
        )?;
        params.insert("head.bias", Tensor::zeros(&[1]))?;
        Ok(Classifier { cfg, params })
    }

    pub fn cfg(&self) -> &ClassifierConfig {
        &self.cfg
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        if trainable {
            BoundParams::bind_trainable(g, &self.params)
        } else {
            BoundParams::bind_frozen(g, &self.params)
        }
    }

    /// Produces the [N, 1, 1, 1] logit tensor for a [N, 1, size, size]
    /// batch in the signed image range.
    pub fn forward(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<Var> {
        let s = self.cfg.image_size;
        let xs = g.value(x).shape().to_vec();
        if xs.len() != 4 || xs[1] != 1 || xs[2] != s || xs[3] != s {
            return Err(Error::Dim(format!(
                "classifier expects [N, 1, {s}, {s}] input, got {xs:?}"
            )));
        }
        let mut h = x;
        for i in 1..=BLOCKS {
            let w = p.var(&format!("blk{i}.weight"))?;
            let b = p.var(&format!("blk{i}.bias"))?;
            h = g.conv2d(h, w, 2, 1)?;
            h = g.bias_add(h, b)?;
            h = g.leaky_relu(h, LEAKY_SLOPE)?;
        }
        let pooled = g.reduce(h, ReduceKind::Mean, &[2, 3])?;
        let w = p.var("head.weight")?;
        let b = p.var("head.bias")?;
        let y = g.conv2d(pooled, w, 1, 0)?;
        g.bias_add(y, b)
    }

    /// Sigmoid abnormality scores for a batch of signed images, one per
    /// sample.
    pub fn score(&self, images: &[&[f32]]) -> Result<Vec<f64>> {
        let s = self.cfg.image_size;
        let mut data = Vec::with_capacity(images.len() * s * s);
        for img in images {
            if img.len() != s * s {
                return Err(Error::Dim(format!(
                    "classifier image has {} pixels, expected {s}x{s}",
                    img.len()
                )));
            }
            data.extend_from_slice(img);
        }
        let x = Tensor::new(&[images.len(), 1, s, s], data)?;
        let mut g = Graph::new();
        let xv = g.constant(&x);
        let p = self.bind(&mut g, false);
        let logits = self.forward(&mut g, &p, xv)?;
        let probs = g.sigmoid(logits)?;
        Ok(g.value(probs).data().iter().map(|&v| f64::from(v)).collect())
    }
}

/// One labeled image in the signed range.
#[derive(Clone, Debug)]
pub struct LabeledImage {
    pub pixels: Vec<f32>,
    pub abnormal: bool,
}

#[derive(Clone, Debug)]
pub struct ClassifierTrainConfig {
    pub image_size: usize,
    pub base_channels: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            image_size: 64,
            base_channels: 24,
            batch_size: 8,
            epochs: 30,
            learning_rate: 1e-3,
            seed: 17,
        }
    }
}

impl ClassifierTrainConfig {
    pub fn validate(&self) -> Result<()> {
        ClassifierConfig { image_size: self.image_size, base_channels: self.base_channels }
            .validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Usage("classifier batch_size and epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Usage(format!(
                "classifier learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        // Plain momentum settings: classification is not a two-player game.
        AdamConfig { lr: self.learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Trains the classifier with cross-entropy over seeded shuffled batches.
/// Returns the model and the per-epoch mean loss trajectory.
pub fn train_classifier(
    images: &[LabeledImage],
    cfg: &ClassifierTrainConfig,
) -> Result<(Classifier, Vec<f64>)> {
    cfg.validate()?;
    let positives = images.iter().filter(|s| s.abnormal).count();
    if positives == 0 || positives == images.len() {
        return Err(Error::Data(format!(
            "classifier training needs both classes, got {positives} abnormal of {}",
            images.len()
        )));
    }
    if images.len() < cfg.batch_size {
        return Err(Error::Data(format!(
            "{} images cannot fill a batch of {}",
            images.len(),
            cfg.batch_size
        )));
    }
    let s = cfg.image_size;
    for img in images {
        if img.pixels.len() != s * s {
            return Err(Error::Dim(format!(
                "classifier image has {} pixels, expected {s}x{s}",
                img.pixels.len()
            )));
        }
    }

    let mut clf = Classifier::new(
        ClassifierConfig { image_size: s, base_channels: cfg.base_channels },
        derive_seed(cfg.seed, "clf"),
    )?;
    let mut opt: BTreeMap<String, AdamState> = BTreeMap::new();
    let adam = cfg.adam();
    let steps = images.len() / cfg.batch_size;
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let perm = {
            use rand::seq::SliceRandom;
            let mut idx: Vec<usize> = (0..images.len()).collect();
            idx.shuffle(&mut rng_from_seed(derive_seed(cfg.seed, &format!("clf_epoch:{epoch}"))));
            idx
        };
        let mut sum = 0.0;
        for step in 0..steps {
            let members = &perm[step * cfg.batch_size..(step + 1) * cfg.batch_size];
            let mut data = Vec::with_capacity(members.len() * s * s);
            let mut targets = Vec::with_capacity(members.len());
            for &i in members {
                data.extend_from_slice(&images[i].pixels);
                targets.push(if images[i].abnormal { 1.0 } else { 0.0 });
            }
            let x = Tensor::new(&[members.len(), 1, s, s], data)?;
            let t = Tensor::new(&[members.len(), 1, 1, 1], targets)?;

            let mut g = Graph::new();
            let bound = clf.bind(&mut g, true);
            let xv = g.constant(&x);
            let tv = g.constant(&t);
            let logits = clf.forward(&mut g, &bound, xv)?;
            let loss = bce_with_logits_loss(&mut g, logits, tv)?;
            g.backward(loss)?;
            adam_update(&mut clf.params, &bound.grads(&g), &mut opt, &adam)?;
            sum += g.scalar_f64(loss).map_err(|e| match e {
                Error::Numeric(msg) => {
                    Error::Divergence(format!("classifier epoch {epoch}, step {step}: {msg}"))
                }
                other => other,
            })?;
        }
        losses.push(sum / steps as f64);
    }
    Ok((clf, losses))
}
