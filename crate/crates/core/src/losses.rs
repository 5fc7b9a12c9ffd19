//! Loss heads for adversarial translation, built as graph fragments so
//! they differentiate like everything else.
//!
//! Sigmoid log terms go through the epsilon-clamped `log`, which keeps a
//! saturated discriminator from producing infinities; the corresponding
//! gradient is zero in the clamped region, so a fully-confident critic
//! simply stops pushing rather than exploding.

use crate::autodiff::{Graph, Var};
use crate::error::Result;

/// Adversarial objective family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GanMode {
    /// Cross-entropy on sigmoid probabilities.
    Vanilla,
    /// Least-squares on raw logits; smoother gradients far from the
    /// decision boundary.
    LeastSquares,
}

fn mean_log_sigmoid(g: &mut Graph, logits: Var) -> Result<Var> {
    let s = g.sigmoid(logits)?;
    let l = g.log(s)?;
    g.mean_all(l)
}

fn mean_log_one_minus_sigmoid(g: &mut Graph, logits: Var) -> Result<Var> {
    let s = g.sigmoid(logits)?;
    let ns = g.neg(s)?;
    let oms = g.add_scalar(ns, 1.0)?;
    let l = g.log(oms)?;
    g.mean_all(l)
}

fn mean_square_offset(g: &mut Graph, logits: Var, target: f32) -> Result<Var> {
    let d = g.add_scalar(logits, -target)?;
    let sq = g.mul(d, d)?;
    g.mean_all(sq)
}

/// Discriminator objective: score real patches toward 1 and fake patches
/// toward 0. With zero logits everywhere the vanilla form equals 2*ln 2 and
/// the least-squares form (halved, as is conventional) equals 0.5.
pub fn disc_adversarial_loss(
    g: &mut Graph,
    mode: GanMode,
    real_logits: Var,
    fake_logits: Var,
) -> Result<Var> {
    match mode {
        GanMode::Vanilla => {
            let t_real = mean_log_sigmoid(g, real_logits)?;
            let t_fake = mean_log_one_minus_sigmoid(g, fake_logits)?;
            let s = g.add(t_real, t_fake)?;
            g.neg(s)
        }
        GanMode::LeastSquares => {
            let t_real = mean_square_offset(g, real_logits, 1.0)?;
            let t_fake = mean_square_offset(g, fake_logits, 0.0)?;
            let s = g.add(t_real, t_fake)?;
            g.mul_scalar(s, 0.5)
        }
    }
}

/// Generator objective: make fake patches score as real. Uses the
/// non-saturating form -mean(log sigmoid(D(fake))) for the vanilla mode and
/// mean((D(fake) - 1)^2) / 2 for least squares.
pub fn gen_adversarial_loss(g: &mut Graph, mode: GanMode, fake_logits: Var) -> Result<Var> {
    match mode {
        GanMode::Vanilla => {
            let t = mean_log_sigmoid(g, fake_logits)?;
            g.neg(t)
        }
        GanMode::LeastSquares => {
            let t = mean_square_offset(g, fake_logits, 1.0)?;
            g.mul_scalar(t, 0.5)
        }
    }
}

/// Mean absolute error; the reconstruction term of paired training. The
/// subgradient at exact equality is zero.
pub fn l1_loss(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let ad = g.abs(d)?;
    g.mean_all(ad)
}

/// Cycle-consistency term for unpaired training: L1 distance of both
/// round trips back to their originals, summed without weights (the trainer
/// applies lambda).
pub fn cycle_consistency_loss(
    g: &mut Graph,
    real_a: Var,
    rec_a: Var,
    real_b: Var,
    rec_b: Var,
) -> Result<Var> {
    let fwd = l1_loss(g, rec_a, real_a)?;
    let bwd = l1_loss(g, rec_b, real_b)?;
    g.add(fwd, bwd)
}

/// Binary cross-entropy on logits against soft or hard targets in [0, 1];
/// the abnormality classifier trains with this.
pub fn bce_with_logits_loss(g: &mut Graph, logits: Var, targets: Var) -> Result<Var> {
    let log_s = {
        let s = g.sigmoid(logits)?;
        g.log(s)?
    };
    let log_oms = {
        let s = g.sigmoid(logits)?;
        let ns = g.neg(s)?;
        let oms = g.add_scalar(ns, 1.0)?;
        g.log(oms)?
    };
    let pos = g.mul(targets, log_s)?;
    let nt = g.neg(targets)?;
    let omt = g.add_scalar(nt, 1.0)?;
    let neg_term = g.mul(omt, log_oms)?;
    let s = g.add(pos, neg_term)?;
    let m = g.mean_all(s)?;
    g.neg(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::tensor::Tensor;
    use rand::Rng;

    const LN2: f32 = std::f32::consts::LN_2;

    fn assert_close(got: f32, want: f32, tol: f32, what: &str) {
        assert!((got - want).abs() <= tol, "{what}: got {got}, want {want}");
    }

    #[test]
    fn vanilla_losses_at_zero_logits_hit_ln2_marks() {
        let mut g = Graph::new();
        let real = g.leaf(&Tensor::zeros(&[2, 1, 3, 3]));
        let fake = g.leaf(&Tensor::zeros(&[2, 1, 3, 3]));
        let d = disc_adversarial_loss(&mut g, GanMode::Vanilla, real, fake).unwrap();
        assert_close(g.scalar_value(d).unwrap(), 2.0 * LN2, 1e-5, "disc at zero");
        let a = gen_adversarial_loss(&mut g, GanMode::Vanilla, fake).unwrap();
        assert_close(g.scalar_value(a).unwrap(), LN2, 1e-6, "gen at zero");
    }

    #[test]
    fn least_squares_losses_at_zero_logits() {
        let mut g = Graph::new();
        let real = g.leaf(&Tensor::zeros(&[1, 1, 2, 2]));
        let fake = g.leaf(&Tensor::zeros(&[1, 1, 2, 2]));
        let d = disc_adversarial_loss(&mut g, GanMode::LeastSquares, real, fake).unwrap();
        assert_close(g.scalar_value(d).unwrap(), 0.5, 1e-6, "ls disc at zero");
        let a = gen_adversarial_loss(&mut g, GanMode::LeastSquares, fake).unwrap();
        assert_close(g.scalar_value(a).unwrap(), 0.5, 1e-6, "ls gen at zero");
    }

    #[test]
    fn saturated_logits_stay_finite_both_directions() {
        let mut g = Graph::new();
        let hi = g.leaf(&Tensor::full(&[4], 80.0));
        let lo = g.leaf(&Tensor::full(&[4], -80.0));
        // Correctly classified: loss near zero.
        let good = disc_adversarial_loss(&mut g, GanMode::Vanilla, hi, lo).unwrap();
        assert!(g.scalar_value(good).unwrap().abs() < 1e-3);
        // Totally fooled: loss large but finite thanks to the log clamp.
        let bad = disc_adversarial_loss(&mut g, GanMode::Vanilla, lo, hi).unwrap();
        let v = g.scalar_value(bad).unwrap();
        assert!(v.is_finite() && v > 10.0, "got {v}");
    }

    #[test]
    fn l1_hand_value_and_zero_at_equality() {
        let mut g = Graph::new();
        let a = g.leaf(&Tensor::new(&[2], vec![1.0, -2.0]).unwrap());
        let b = g.leaf(&Tensor::new(&[2], vec![0.0, 1.0]).unwrap());
        let l = l1_loss(&mut g, a, b).unwrap();
        assert_close(g.scalar_value(l).unwrap(), 2.0, 1e-6, "l1 hand value");
        let same = l1_loss(&mut g, a, a).unwrap();
        assert_eq!(g.scalar_value(same).unwrap(), 0.0);
    }

    #[test]
    fn cycle_loss_sums_both_directions() {
        let mut g = Graph::new();
        let ra = g.leaf(&Tensor::full(&[4], 1.0));
        let xa = g.leaf(&Tensor::full(&[4], 0.5));
        let rb = g.leaf(&Tensor::full(&[4], -1.0));
        let xb = g.leaf(&Tensor::full(&[4], -0.75));
        let l = cycle_consistency_loss(&mut g, ra, xa, rb, xb).unwrap();
        assert_close(g.scalar_value(l).unwrap(), 0.5 + 0.25, 1e-6, "two-way cycle");
    }

    #[test]
    fn bce_with_logits_matches_hand_values() {
        let mut g = Graph::new();
        // Logit 0 against any target gives ln 2.
        let x = g.leaf(&Tensor::zeros(&[3]));
        let y = g.leaf(&Tensor::new(&[3], vec![0.0, 0.5, 1.0]).unwrap());
        let l = bce_with_logits_loss(&mut g, x, y).unwrap();
        assert_close(g.scalar_value(l).unwrap(), LN2, 1e-6, "bce at zero logits");
    }

    #[test]
    fn all_losses_pass_finite_difference_checks() {
        let mut rng = crate::rng::rng_from_seed(77);
        let logits = Tensor::from_fn(&[8], |_| rng.gen_range(-2.0..2.0));
        let other = Tensor::from_fn(&[8], |_| rng.gen_range(-2.0..2.0));
        let targets = Tensor::from_fn(&[8], |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });

        for mode in [GanMode::Vanilla, GanMode::LeastSquares] {
            let o = other.clone();
            let r = grad_check(
                move |g, v| {
                    let c = g.constant(&o);
                    disc_adversarial_loss(g, mode, v, c)
                },
                &logits,
                1e-3,
                1e-2,
            )
            .unwrap();
            assert!(r.ok(), "disc {mode:?} wrt real: worst {:.3e}", r.max_rel_error);
            let o = other.clone();
            let r = grad_check(
                move |g, v| {
                    let c = g.constant(&o);
                    disc_adversarial_loss(g, mode, c, v)
                },
                &logits,
                1e-3,
                1e-2,
            )
            .unwrap();
            assert!(r.ok(), "disc {mode:?} wrt fake: worst {:.3e}", r.max_rel_error);
            let r = grad_check(
                move |g, v| gen_adversarial_loss(g, mode, v),
                &logits,
                1e-3,
                1e-2,
            )
            .unwrap();
            assert!(r.ok(), "gen {mode:?}: worst {:.3e}", r.max_rel_error);
        }

        // L1 kinks where a == b; the random draws keep |a-b| comfortably
        // above the finite-difference step.
        let o = other.clone();
        let r = grad_check(
            move |g, v| {
                let c = g.constant(&o);
                l1_loss(g, v, c)
            },
            &logits,
            1e-4,
            1e-2,
        )
        .unwrap();
        assert!(r.ok(), "l1: worst {:.3e}", r.max_rel_error);

        let t = targets.clone();
        let r = grad_check(
            move |g, v| {
                let c = g.constant(&t);
                bce_with_logits_loss(g, v, c)
            },
            &logits,
            1e-3,
            1e-2,
        )
        .unwrap();
        assert!(r.ok(), "bce: worst {:.3e}", r.max_rel_error);
    }
}
