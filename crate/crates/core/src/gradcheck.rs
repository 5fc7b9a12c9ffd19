//! Finite-difference validation of reverse-mode gradients.
//!
//! The function under test is rebuilt on a shadow graph, so central
//! differences are evaluated in f64 while the analytic gradient comes from
//! the ordinary f32 backward pass. That keeps the numeric side of the
//! comparison far below the tolerances of interest even for tensors with
//! tens of thousands of elements; naive f32 differences would drown a 1e-2
//! tolerance in cancellation noise.
//!
//! Steps are applied in f32 and the achieved step is measured after
//! rounding, so the quotient uses the perturbation that actually happened.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One coordinate whose analytic and numeric derivatives disagree.
#[derive(Clone, Debug)]
pub struct GradCheckFailure {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Outcome of a full finite-difference sweep over one input tensor.
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub failures: Vec<GradCheckFailure>,
}

impl GradCheckReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

fn eval_f64<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::with_shadow();
    let v = g.param(x);
    let y = f(&mut g, v)?;
    g.scalar_f64(y)
}

/// Compares the backward pass of `f` against central finite differences at
/// `x`, coordinate by coordinate. `f` must be pure and deterministic: it is
/// re-evaluated 2*numel times. Returns the per-coordinate verdicts; entries
/// whose relative error exceeds `tol` land in `failures`.
pub fn grad_check<F>(f: F, x: &Tensor, step: f32, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Usage(format!("finite-difference step must be positive, got {step}")));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::Usage(format!("tolerance must be positive, got {tol}")));
    }

    let mut g = Graph::new();
    let v = g.param(x);
    let y = f(&mut g, v)?;
    if g.value(y).numel() != 1 {
        return Err(Error::Usage(format!(
            "grad_check needs a scalar-valued function, got output shape {:?}",
            g.value(y).shape()
        )));
    }
    g.backward(y)?;
    let analytic: Vec<f32> = g
        .grad(v)
        .ok_or_else(|| Error::Usage("function output does not depend on the input".into()))?
        .to_vec();

    let base = x.data().to_vec();
    let mut report = GradCheckReport::default();
    for i in 0..base.len() {
        let plus = base[i] + step;
        let minus = base[i] - step;
        // Measure the step that survives f32 rounding.
        let hp = f64::from(plus) - f64::from(base[i]);
        let hm = f64::from(base[i]) - f64::from(minus);
        if hp + hm == 0.0 {
            return Err(Error::Numeric(format!(
                "finite-difference step {step} vanishes at index {i} (value {})",
                base[i]
            )));
        }
        let mut data_p = base.clone();
        data_p[i] = plus;
        let mut data_m = base.clone();
        data_m[i] = minus;
        let fp = eval_f64(&f, &Tensor::new(x.shape(), data_p)?)?;
        let fm = eval_f64(&f, &Tensor::new(x.shape(), data_m)?)?;
        let numeric = (fp - fm) / (hp + hm);
        let a = f64::from(analytic[i]);
        let rel = rel_error(a, numeric);
        report.checked += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
        }
        if rel > tol {
            report.failures.push(GradCheckFailure { index: i, analytic: a, numeric, rel_error: rel });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{NormMode, ReduceKind};
    use rand::Rng;

    const STEP: f32 = 1e-3;
    const TOL: f64 = 1e-2;

    fn sample(shape: &[usize], seed: u64, lo: f32, hi: f32) -> Tensor {
        let mut rng = crate::rng::rng_from_seed(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
    }

    fn assert_pass(report: &GradCheckReport, what: &str) {
        assert!(
            report.ok(),
            "{what}: {} of {} coordinates failed, worst rel error {:.3e} \
             (first failure: {:?})",
            report.failures.len(),
            report.checked,
            report.max_rel_error,
            report.failures.first()
        );
    }

    #[test]
    fn linear_function_is_exact_to_1e6() {
        let x = sample(&[17], 1, -1.0, 1.0);
        let r = grad_check(
            |g, v| {
                let a = g.mul_scalar(v, 3.0)?;
                let b = g.add_scalar(a, 1.0)?;
                g.sum_all(b)
            },
            &x,
            STEP,
            1e-6,
        )
        .unwrap();
        assert_pass(&r, "linear form");
        assert!(r.max_rel_error < 1e-6, "max rel error {:.3e}", r.max_rel_error);
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        // sum(x * detach(x)) reports d/dx = x while the true derivative is
        // 2x, emulating a broken backward rule; every coordinate must fail.
        let x = sample(&[9], 2, 0.3, 1.2);
        let r = grad_check(
            |g, v| {
                let d = g.detach(v);
                let p = g.mul(v, d)?;
                g.sum_all(p)
            },
            &x,
            STEP,
            TOL,
        )
        .unwrap();
        assert_eq!(r.failures.len(), r.checked, "every coordinate should be flagged");
    }

    #[test]
    fn elementwise_activations() {
        let x = sample(&[13], 3, -1.5, 1.5);
        for (name, f) in [
            ("tanh", (|g: &mut Graph, v: Var| {
                let y = g.tanh(v)?;
                g.sum_all(y)
            }) as fn(&mut Graph, Var) -> crate::error::Result<Var>),
            ("sigmoid", |g, v| {
                let y = g.sigmoid(v)?;
                g.sum_all(y)
            }),
            ("neg", |g, v| {
                let y = g.neg(v)?;
                g.sum_all(y)
            }),
        ] {
            let r = grad_check(f, &x, STEP, TOL).unwrap();
            assert_pass(&r, name);
        }
    }

    #[test]
    fn kinked_activations_away_from_kinks() {
        // abs and leaky_relu have a corner at 0; sample magnitudes > 0.05 so
        // the finite-difference stencil never straddles it.
        let mut rng = crate::rng::rng_from_seed(4);
        let x = Tensor::from_fn(&[16], |_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.gen_range(0.06..1.4)
        });
        let abs = grad_check(
            |g, v| {
                let y = g.abs(v)?;
                g.sum_all(y)
            },
            &x,
            STEP,
            TOL,
        )
        .unwrap();
        assert_pass(&abs, "abs");
        let leaky = grad_check(
            |g, v| {
                let y = g.leaky_relu(v, 0.2)?;
                g.sum_all(y)
            },
            &x,
            STEP,
            TOL,
        )
        .unwrap();
        assert_pass(&leaky, "leaky_relu");
    }

    #[test]
    fn log_and_clamp_interior() {
        let x = sample(&[11], 5, 0.2, 2.0);
        let log = grad_check(
            |g, v| {
                let y = g.log(v)?;
                g.sum_all(y)
            },
            &x,
            STEP,
            TOL,
        )
        .unwrap();
        assert_pass(&log, "log");
        // Keep samples at least 0.05 from the clamp bounds.
        let clamp = grad_check(
            |g, v| {
                let y = g.clamp(v, 0.1, 2.5)?;
                g.sum_all(y)
            },
            &sample(&[11], 6, 0.3, 1.9),
            STEP,
            TOL,
        )
        .unwrap();
        assert_pass(&clamp, "clamp");
    }

    #[test]
    fn binary_ops_both_roles() {
        let x = sample(&[10], 7, -1.0, 1.0);
        let other = sample(&[10], 8, 0.5, 1.5);
        for (name, kind) in [("add", 0), ("sub", 1), ("mul", 2)] {
            for lhs in [true, false] {
                let o = other.clone();
                let r = grad_check(
                    move |g, v| {
                        let c = g.constant(&o);
                        let y = match (kind, lhs) {
                            (0, true) => g.add(v, c)?,
                            (0, false) => g.add(c, v)?,
                            (1, true) => g.sub(v, c)?,
                            (1, false) => g.sub(c, v)?,
                            (2, true) => g.mul(v, c)?,
                            _ => g.mul(c, v)?,
                        };
                        g.sum_all(y)
                    },
                    &x,
                    STEP,
                    TOL,
                )
                .unwrap();
                assert_pass(&r, &format!("{name} lhs={lhs}"));
            }
        }
    }

    #[test]
    fn scalar_broadcast_gradient() {
        let x = sample(&[1], 9, 0.5, 1.5);
        let field = sample(&[12], 10, -1.0, 1.0);
        let r = grad_check(
            move |g, v| {
                let c = g.constant(&field);
                let y = g.mul(c, v)?;
                let z = g.tanh(y)?;
                g.sum_all(z)
            },
            &x,
            STEP,
            TOL,
        )
        .unwrap();
        assert_pass(&r, "broadcast scalar");
    }

    #[test]
    fn conv2d_wrt_input_and_kernel() {
        let x = sample(&[2, 3, 6, 5], 11, -1.0, 1.0);
        let k = sample(&[4, 3, 3, 3], 12, -0.5, 0.5);
        for &(stride, pad) in &[(1usize, 1usize), (2, 1)] {
            let kk = k.clone();
            let wrt_x = grad_check(
                move |g, v| {
                    let kc = g.constant(&kk);
                    let y = g.conv2d(v, kc, stride, pad)?;
                    let t = g.tanh(y)?;
                    g.mean_all(t)
                },
                &x,
                STEP,
                TOL,
            )
            .unwrap();
            assert_pass(&wrt_x, &format!("conv2d input s{stride} p{pad}"));
            let xx = x.clone();
            let wrt_k = grad_check(
                move |g, v| {
                    let xc = g.constant(&xx);
                    let y = g.conv2d(xc, v, stride, pad)?;
                    let t = g.tanh(y)?;
                    g.mean_all(t)
                },
                &k,
                STEP,
                TOL,
            )
            .unwrap();
            assert_pass(&wrt_k, &format!("conv2d kernel s{stride} p{pad}"));
        }
    }

    #[test]
    fn conv_transpose_wrt_input_and_kernel() {
        let x = sample(&[1, 4, 3, 3], 13, -1.0, 1.0);
        let k = sample(&[4, 2, 4, 4], 14, -0.4, 0.4);
        let kk = k.clone();
        let wrt_x = grad_check(
            move |g, v| {
                let kc = g.constant(&kk);
                let y = g.conv_transpose2d(v, kc, 2, 1)?;
                let t = g.tanh(y)?;
                g.mean_all(t)
            },
            &x,
            STEP,
            TOL,
        )
        .unwrap();
        assert_pass(&wrt_x, "conv_transpose2d input");
        let xx = x.clone();
        let wrt_k = grad_check(
            move |g, v| {
                let xc = g.constant(&xx);
                let y = g.conv_transpose2d(xc, v, 2, 1)?;
                let t = g.tanh(y)?;
                g.mean_all(t)
            },
            &k,
            STEP,
            TOL,
        )
        .unwrap();
        assert_pass(&wrt_k, "conv_transpose2d kernel");
    }

    #[test]
    fn bias_and_concat() {
        let x = sample(&[2, 3, 4, 4], 15, -1.0, 1.0);
        let b = sample(&[3], 16, -0.5, 0.5);
        let bb = b.clone();
        let wrt_x = grad_check(
            move |g, v| {
                let bc = g.constant(&bb);
                let y = g.bias_add(v, bc)?;
                let t = g.sigmoid(y)?;
                g.mean_all(t)
            },
            &x,
            STEP,
            TOL,
        )
        .unwrap();
        assert_pass(&wrt_x, "bias_add input");
        let xx = x.clone();
        let wrt_b = grad_check(
            move |g, v| {
                let xc = g.constant(&xx);
                let y = g.bias_add(xc, v)?;
                let t = g.sigmoid(y)?;
                g.mean_all(t)
            },
            &b,
            STEP,
            TOL,
        )
        .unwrap();
        assert_pass(&wrt_b, "bias_add bias");

        let other = sample(&[1, 2, 3, 3], 17, -1.0, 1.0);
        let lhs = sample(&[1, 1, 3, 3], 18, -1.0, 1.0);
        let r = grad_check(
            move |g, v| {
                let oc = g.constant(&other);
                let y = g.concat_channels(v, oc)?;
                let t = g.tanh(y)?;
                g.mean_all(t)
            },
            &lhs,
            STEP,
            TOL,
        )
        .unwrap();
        assert_pass(&r, "concat_channels");
    }

    #[test]
    fn normalization_both_modes_all_inputs() {
        let x = sample(&[2, 2, 4, 4], 19, -1.0, 1.0);
        let gamma = sample(&[2], 20, 0.8, 1.2);
        let beta = sample(&[2], 21, -0.3, 0.3);
        for mode in [NormMode::Batch, NormMode::Instance] {
            let (gg, bb) = (gamma.clone(), beta.clone());
            let wrt_x = grad_check(
                move |g, v| {
                    let gc = g.constant(&gg);
                    let bc = g.constant(&bb);
                    let y = g.normalize(v, mode, gc, bc, 1e-5)?;
                    let t = g.tanh(y)?;
                    g.mean_all(t)
                },
                &x,
                STEP,
                TOL,
            )
            .unwrap();
            assert_pass(&wrt_x, &format!("normalize {mode:?} input"));
            let (xx, bb) = (x.clone(), beta.clone());
            let wrt_gamma = grad_check(
                move |g, v| {
                    let xc = g.constant(&xx);
                    let bc = g.constant(&bb);
                    let y = g.normalize(xc, mode, v, bc, 1e-5)?;
                    let t = g.tanh(y)?;
                    g.mean_all(t)
                },
                &gamma,
                STEP,
                TOL,
            )
            .unwrap();
            assert_pass(&wrt_gamma, &format!("normalize {mode:?} gamma"));
            let (xx, gg) = (x.clone(), gamma.clone());
            let wrt_beta = grad_check(
                move |g, v| {
                    let xc = g.constant(&xx);
                    let gc = g.constant(&gg);
                    let y = g.normalize(xc, mode, gc, v, 1e-5)?;
                    let t = g.tanh(y)?;
                    g.mean_all(t)
                },
                &beta,
                STEP,
                TOL,
            )
            .unwrap();
            assert_pass(&wrt_beta, &format!("normalize {mode:?} beta"));
        }
    }

    #[test]
    fn reductions_over_axis_subsets() {
        let x = sample(&[3, 4, 2], 22, -1.0, 1.0);
        for kind in [ReduceKind::Sum, ReduceKind::Mean] {
            for axes in [vec![0], vec![1], vec![0, 2], vec![0, 1, 2]] {
                let ax = axes.clone();
                let r = grad_check(
                    move |g, v| {
                        let y = g.reduce(v, kind, &ax)?;
                        let t = g.tanh(y)?;
                        g.sum_all(t)
                    },
                    &x,
                    STEP,
                    TOL,
                )
                .unwrap();
                assert_pass(&r, &format!("reduce {kind:?} axes {axes:?}"));
            }
        }
    }

    #[test]
    fn composite_expression_with_shared_subtrees() {
        // A small expression reusing one node in three places, the pattern
        // adversarial losses take.
        let x = sample(&[6], 23, 0.2, 1.0);
        let r = grad_check(
            |g, v| {
                let s = g.sigmoid(v)?;
                let ls = g.log(s)?;
                let ns = g.neg(s)?;
                let oms = g.add_scalar(ns, 1.0)?;
                let lo = g.log(oms)?;
                let sum = g.add(ls, lo)?;
                let sq = g.mul(sum, sum)?;
                g.mean_all(sq)
            },
            &x,
            STEP,
            TOL,
        )
        .unwrap();
        assert_pass(&r, "shared-subtree composite");
    }
}
