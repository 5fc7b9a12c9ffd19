//! U-Net generator and PatchGAN discriminator.
//!
//! Both nets are plain conv stacks over NCHW tensors. Normalization always
//! uses the statistics of the current batch — there are no running
//! averages — which matches how small-batch adversarial translation models
//! are trained and evaluated.
//!
//! Channel widths double per level from `base_channels`, capped at 512.
//! Weights start from N(0, 0.02), biases at zero, and affine norm
//! parameters at identity, drawn from a ChaCha stream so construction is
//! reproducible from the seed alone.

use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::NormMode;
use crate::params::{BoundParams, Params};
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

const CHANNEL_CAP: usize = 512;
pub(crate) const LEAKY_SLOPE: f32 = 0.2;
const NORM_EPS: f32 = 1e-5;
const INIT_STDDEV: f64 = 0.02;

fn level_channels(base: usize, level: usize) -> usize {
    (base << (level - 1)).min(CHANNEL_CAP)
}

pub(crate) fn require_pow2_size(size: usize) -> Result<()> {
    if !size.is_power_of_two() || size < 8 {
        return Err(Error::Usage(format!(
            "image size must be a power of two of at least 8, got {size}"
        )));
    }
    Ok(())
}

pub(crate) fn normal_tensor(shape: &[usize], rng: &mut impl rand::Rng) -> Tensor {
    let dist = Normal::new(0.0, INIT_STDDEV).expect("stddev is positive");
    Tensor::from_fn(shape, |_| dist.sample(rng) as f32)
}

/// Shape of a U-Net translator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub norm: NormMode,
}

impl GeneratorConfig {
    /// Depth chosen by the default rule log2(size) - 3, floored at 1, which
    /// leaves an 8x8 bottleneck for sizes of 64 and up.
    pub fn auto(image_size: usize, base_channels: usize, norm: NormMode) -> Result<Self> {
        require_pow2_size(image_size)?;
        let depth = (image_size.trailing_zeros() as usize).saturating_sub(3).max(1);
        let cfg = GeneratorConfig {
            image_size,
            in_channels: 1,
            out_channels: 1,
            base_channels,
            depth,
            norm,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        require_pow2_size(self.image_size)?;
        if self.in_channels == 0 || self.out_channels == 0 || self.base_channels == 0 {
            return Err(Error::Usage("generator channel counts must be positive".into()));
        }
        if self.depth == 0 {
            return Err(Error::Usage("generator depth must be at least 1".into()));
        }
        if self.image_size >> self.depth < 2 {
            return Err(Error::Usage(format!(
                "depth {} collapses a {}px image below the 2px bottleneck",
                self.depth, self.image_size
            )));
        }
        Ok(())
    }
}

/// U-Net translator: a strided conv encoder mirrored by a transposed-conv
/// decoder with skip concatenations, ending in tanh.
#[derive(Clone, Debug)]
pub struct Generator {
    cfg: GeneratorConfig,
    pub params: Params,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_from_seed(seed);
        let mut params = Params::new();
        let ch = |i: usize| level_channels(cfg.base_channels, i);

        for i in 1..=cfg.depth {
            let cin = if i == 1 { cfg.in_channels } else { ch(i - 1) };
            let cout = ch(i);
            params.insert(&format!("enc{i}.weight"), normal_tensor(&[cout, cin, 4, 4], &mut rng))?;
            params.insert(&format!("enc{i}.bias"), Tensor::zeros(&[cout]))?;
            if i >= 2 {
                params.insert(&format!("enc{i}.gamma"), Tensor::full(&[cout], 1.0))?;
                params.insert(&format!("enc{i}.beta"), Tensor::zeros(&[cout]))?;
            }
        }
        for i in (2..=cfg.depth).rev() {
            // Innermost decoder sees the bottleneck alone; the rest see the
            // previous decoder output concatenated with the skip.
            let cin = if i == cfg.depth { ch(i) } else { 2 * ch(i) };
            let cout = ch(i - 1);
            params.insert(&format!("dec{i}.weight"), normal_tensor(&[cin, cout, 4, 4], &mut rng))?;
            params.insert(&format!("dec{i}.bias"), Tensor::zeros(&[cout]))?;
            params.insert(&format!("dec{i}.gamma"), Tensor::full(&[cout], 1.0))?;
            params.insert(&format!("dec{i}.beta"), Tensor::zeros(&[cout]))?;
        }
        let final_cin = if cfg.depth == 1 { ch(1) } else { 2 * ch(1) };
        params.insert(
            "dec1.weight",
            normal_tensor(&[final_cin, cfg.out_channels, 4, 4], &mut rng),
        )?;
        params.insert("dec1.bias", Tensor::zeros(&[cfg.out_channels]))?;

        Ok(Generator { cfg, params })
    }

    pub fn cfg(&self) -> &GeneratorConfig {
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

    /// Runs the net on a bound parameter set. Parameters bound once can be
    /// reused across several forward calls on the same graph, so repeated
    /// applications share leaves and accumulate gradients jointly.
    pub fn forward(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<Var> {
        let s = self.cfg.image_size;
        let xs = g.value(x).shape().to_vec();
        if xs.len() != 4 || xs[1] != self.cfg.in_channels || xs[2] != s || xs[3] != s {
            return Err(Error::Dim(format!(
                "generator expects [N, {}, {s}, {s}] input, got {xs:?}",
                self.cfg.in_channels
            )));
        }

        let mut enc = Vec::with_capacity(self.cfg.depth);
        let mut h = x;
        for i in 1..=self.cfg.depth {
            let w = p.var(&format!("enc{i}.weight"))?;
            let b = p.var(&format!("enc{i}.bias"))?;
            h = g.conv2d(h, w, 2, 1)?;
            h = g.bias_add(h, b)?;
            if i >= 2 {
                let gamma = p.var(&format!("enc{i}.gamma"))?;
                let beta = p.var(&format!("enc{i}.beta"))?;
                h = g.normalize(h, self.cfg.norm, gamma, beta, NORM_EPS)?;
            }
            h = g.leaky_relu(h, LEAKY_SLOPE)?;
            enc.push(h);
        }

        let mut d = enc[self.cfg.depth - 1];
        for i in (2..=self.cfg.depth).rev() {
            let input = if i == self.cfg.depth { d } else { g.concat_channels(d, enc[i - 1])? };
            let w = p.var(&format!("dec{i}.weight"))?;
            let b = p.var(&format!("dec{i}.bias"))?;
            d = g.conv_transpose2d(input, w, 2, 1)?;
            d = g.bias_add(d, b)?;
            let gamma = p.var(&format!("dec{i}.gamma"))?;
            let beta = p.var(&format!("dec{i}.beta"))?;
            d = g.normalize(d, self.cfg.norm, gamma, beta, NORM_EPS)?;
            d = g.leaky_relu(d, LEAKY_SLOPE)?;
        }
        let final_in = if self.cfg.depth == 1 { enc[0] } else { g.concat_channels(d, enc[0])? };
        let w = p.var("dec1.weight")?;
        let b = p.var("dec1.bias")?;
        let y = g.conv_transpose2d(final_in, w, 2, 1)?;
        let y = g.bias_add(y, b)?;
        g.tanh(y)
    }

    /// Convenience inference path: binds frozen parameters on a private
    /// graph and returns the output tensor.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x);
        let p = self.bind(&mut g, false);
        let y = self.forward(&mut g, &p, xv)?;
        Ok(g.value(y).clone())
    }
}

/// Shape of a patch discriminator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub base_channels: usize,
    pub levels: usize,
    pub norm: NormMode,
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        require_pow2_size(self.image_size)?;
        if self.in_channels == 0 || self.base_channels == 0 {
            return Err(Error::Usage("discriminator channel counts must be positive".into()));
        }
        if self.levels == 0 {
            return Err(Error::Usage("discriminator needs at least one level".into()));
        }
        if self.image_size >> self.levels < 1 {
            return Err(Error::Usage(format!(
                "{} levels collapse a {}px image to nothing",
                self.levels, self.image_size
            )));
        }
        Ok(())
    }

    /// Spatial extent of the output logit grid.
    pub fn patch_grid(&self) -> usize {
        self.image_size >> self.levels
    }
}

/// PatchGAN critic: strided conv blocks followed by a 1-channel conv head,
/// emitting a grid of per-patch real/fake logits. A conditional critic
/// takes the source and candidate images concatenated along channels.
#[derive(Clone, Debug)]
pub struct Discriminator {
    cfg: DiscriminatorConfig,
    pub params: Params,
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_from_seed(seed);
        let mut params = Params::new();
        let ch = |i: usize| level_channels(cfg.base_channels, i);

        for i in 1..=cfg.levels {
            let cin = if i == 1 { cfg.in_channels } else { ch(i - 1) };
            let cout = ch(i);
            params.insert(&format!("blk{i}.weight"), normal_tensor(&[cout, cin, 4, 4], &mut rng))?;
            params.insert(&format!("blk{i}.bias"), Tensor::zeros(&[cout]))?;
            if i >= 2 {
                params.insert(&format!("blk{i}.gamma"), Tensor::full(&[cout], 1.0))?;
                params.insert(&format!("blk{i}.beta"), Tensor::zeros(&[cout]))?;
            }
        }
        params.insert("head.weight", normal_tensor(&[1, ch(cfg.levels), 3, 3], &mut rng))?;
        params.insert("head.bias", Tensor::zeros(&[1]))?;
        Ok(Discriminator { cfg, params })
    }

    pub fn cfg(&self) -> &DiscriminatorConfig {
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

    /// Produces the [N, 1, size/2^levels, size/2^levels] logit grid.
    pub fn forward(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<Var> {
        let s = self.cfg.image_size;
        let xs = g.value(x).shape().to_vec();
        if xs.len() != 4 || xs[1] != self.cfg.in_channels || xs[2] != s || xs[3] != s {
            return Err(Error::Dim(format!(
                "discriminator expects [N, {}, {s}, {s}] input, got {xs:?}",
                self.cfg.in_channels
            )));
        }
        let mut h = x;
        for i in 1..=self.cfg.levels {
            let w = p.var(&format!("blk{i}.weight"))?;
            let b = p.var(&format!("blk{i}.bias"))?;
            h = g.conv2d(h, w, 2, 1)?;
            h = g.bias_add(h, b)?;
            if i >= 2 {
                let gamma = p.var(&format!("blk{i}.gamma"))?;
                let beta = p.var(&format!("blk{i}.beta"))?;
                h = g.normalize(h, self.cfg.norm, gamma, beta, NORM_EPS)?;
            }
            h = g.leaky_relu(h, LEAKY_SLOPE)?;
        }
        let w = p.var("head.weight")?;
        let b = p.var("head.bias")?;
        let y = g.conv2d(h, w, 1, 1)?;
        g.bias_add(y, b)
    }
}
