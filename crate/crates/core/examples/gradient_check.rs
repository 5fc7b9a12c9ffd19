//! Validates the autodiff engine against central finite differences.
//!
//! Every gradient in this crate flows through the same reverse-mode tape,
//! so checking a handful of representative computations — single ops,
//! a convolution pipeline, and a full U-Net forward pass — exercises the
//! machinery end to end. The numeric side runs in f64 shadow mode; the
//! analytic side is the ordinary f32 backward pass.
//!
//! Usage: cargo run --example gradient_check

use bonesup::gradcheck::grad_check;
use bonesup::kernels::{NormMode, ReduceKind};
use bonesup::networks::{Generator, GeneratorConfig};
use bonesup::rng::{derive_seed, rng_from_seed};
use bonesup::tensor::Tensor;
use bonesup::{Graph, Result, Var};

const STEP: f32 = 1e-3;
const TOL: f64 = 1e-2;

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    use rand::Rng;
    let mut rng = rng_from_seed(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn check(name: &str, x: &Tensor, f: impl Fn(&mut Graph, Var) -> Result<Var>) -> Result<()> {
    let report = grad_check(f, x, STEP, TOL)?;
    println!(
        "{name:<26} {:>5} coordinates, max relative error {:.2e} -> {}",
        report.checked,
        report.max_rel_error,
        if report.ok() { "ok" } else { "MISMATCH" }
    );
    Ok(())
}

fn main() -> Result<()> {
    let x = random_tensor(&[2, 3, 6, 6], derive_seed(1, "x"));

    check("tanh . mean", &x, |g, v| {
        let t = g.tanh(v)?;
        g.mean_all(t)
    })?;

    check("leaky_relu . sum", &x, |g, v| {
        let t = g.leaky_relu(v, 0.2)?;
        g.sum_all(t)
    })?;

    let k = random_tensor(&[4, 3, 3, 3], derive_seed(1, "k"));
    check("conv2d (wrt input)", &x, |g, v| {
        let kv = g.constant(&k);
        let y = g.conv2d(v, kv, 2, 1)?;
        g.mean_all(y)
    })?;

    let xc = x.clone();
    check("conv2d (wrt kernel)", &k, move |g, v| {
        let xv = g.constant(&xc);
        let y = g.conv2d(xv, v, 2, 1)?;
        g.mean_all(y)
    })?;

    check("instance norm . mean", &x, |g, v| {
        let gamma = g.constant(&Tensor::from_fn(&[3], |_| 1.2));
        let beta = g.constant(&Tensor::from_fn(&[3], |_| -0.1));
        let y = g.normalize(v, NormMode::Instance, gamma, beta, 1e-5)?;
        let y = g.reduce(y, ReduceKind::Mean, &[0, 1, 2, 3])?;
        Ok(y)
    })?;

    // A whole translator: scalar loss over the generator output as a
    // function of the INPUT image. Every layer's backward participates.
    let cfg = GeneratorConfig {
        image_size: 16,
        in_channels: 1,
        out_channels: 1,
        base_channels: 4,
        depth: 2,
        norm: NormMode::Instance,
    };
    let net = Generator::new(cfg, 99)?;
    let img = random_tensor(&[1, 1, 16, 16], derive_seed(1, "img"));
    check("U-Net forward . mean", &img, move |g, v| {
        let p = net.bind(g, false);
        let y = net.forward(g, &p, v)?;
        g.mean_all(y)
    })?;

    println!("\nall gradients verified against finite differences");
    Ok(())
}
