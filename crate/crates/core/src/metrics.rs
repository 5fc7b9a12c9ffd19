//! Image-quality and classification metrics.
//!
//! All computation here is f64: these numbers are the ones reports freeze,
//! so they must not wobble with summation order. SSIM follows the standard
//! recipe — 11x11 Gaussian window (sigma 1.5), valid-mode filtering (no
//! padding), constants K1 = 0.01 / K2 = 0.03 on a unit dynamic range —
//! evaluated with separable filters. Identical inputs score exactly 1.0
//! because every factor of the per-window ratio is computed from bitwise
//! identical moments.

use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 1e-4; // (0.01 * L)^2 with L = 1
const SSIM_C2: f64 = 9e-4; // (0.03 * L)^2

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Valid-mode separable Gaussian filter; the result is
/// (width-10) x (height-10).
fn filter_valid(img: &[f64], width: usize, height: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = width - (SSIM_WINDOW - 1);
    let oh = height - (SSIM_WINDOW - 1);
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * img[y * width + x + i];
            }
            rows[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * rows[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

fn check_pair(a: &[f32], b: &[f32], width: usize, height: usize) -> Result<()> {
    if width * height != a.len() || a.len() != b.len() {
        return Err(Error::Dim(format!(
            "image pair mismatch: {width}x{height} vs {} and {} samples",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("metric input contains a non-finite sample".into()));
    }
    Ok(())
}

/// Mean structural similarity over all valid window positions. Inputs are
/// unit-range grayscale images in row-major order.
pub fn ssim(a: &[f32], b: &[f32], width: usize, height: usize) -> Result<f64> {
    check_pair(a, b, width, height)?;
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(Error::Dim(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {width}x{height}"
        )));
    }
    let x: Vec<f64> = a.iter().map(|&v| f64::from(v)).collect();
    let y: Vec<f64> = b.iter().map(|&v| f64::from(v)).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();

    let k = gaussian_kernel();
    let mx = filter_valid(&x, width, height, &k);
    let my = filter_valid(&y, width, height, &k);
    let mxx = filter_valid(&xx, width, height, &k);
    let myy = filter_valid(&yy, width, height, &k);
    let mxy = filter_valid(&xy, width, height, &k);

    let mut sum = 0.0;
    for i in 0..mx.len() {
        let vx = mxx[i] - mx[i] * mx[i];
        let vy = myy[i] - my[i] * my[i];
        let cxy = mxy[i] - mx[i] * my[i];
        let num = (2.0 * mx[i] * my[i] + SSIM_C1) * (2.0 * cxy + SSIM_C2);
        let den = (mx[i] * mx[i] + my[i] * my[i] + SSIM_C1) * (vx + vy + SSIM_C2);
        sum += num / den;
    }
    Ok(sum / mx.len() as f64)
}

/// Peak signal-to-noise ratio in dB against the given peak value.
/// Identical images have zero error and return positive infinity; callers
/// aggregating PSNR must treat that case separately.
pub fn psnr(a: &[f32], b: &[f32], peak: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Dim(format!(
            "psnr needs equal non-empty images, got {} and {} samples",
            a.len(),
            b.len()
        )));
    }
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Usage(format!("psnr peak must be positive, got {peak}")));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("metric input contains a non-finite sample".into()));
    }
    let mse = a
        .iter()
        .zip(b)
        .map(|(&p, &q)| {
            let d = f64::from(p) - f64::from(q);
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Area under the ROC curve by the Mann-Whitney statistic with tie-averaged
/// ranks: the probability that a random positive outscores a random
/// negative, counting ties as half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dim(format!(
            "auc needs one label per score, got {} scores and {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("auc received a non-finite score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data(format!(
            "auc needs both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].partial_cmp(&scores[j]).expect("scores checked finite"));

    // Average ranks across tie groups (ranks are 1-based).
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Direct per-window SSIM, no separable trick: the oracle.
    fn ssim_bruteforce(a: &[f32], b: &[f32], width: usize, height: usize) -> f64 {
        let k = gaussian_kernel();
        let mut weights = vec![0.0; SSIM_WINDOW * SSIM_WINDOW];
        for r in 0..SSIM_WINDOW {
            for c in 0..SSIM_WINDOW {
                weights[r * SSIM_WINDOW + c] = k[r] * k[c];
            }
        }
        let ow = width - SSIM_WINDOW + 1;
        let oh = height - SSIM_WINDOW + 1;
        let mut sum = 0.0;
        for wy in 0..oh {
            for wx in 0..ow {
                let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for r in 0..SSIM_WINDOW {
                    for c in 0..SSIM_WINDOW {
                        let w = weights[r * SSIM_WINDOW + c];
                        let xv = f64::from(a[(wy + r) * width + wx + c]);
                        let yv = f64::from(b[(wy + r) * width + wx + c]);
                        mx += w * xv;
                        my += w * yv;
                        mxx += w * xv * xv;
                        myy += w * yv * yv;
                        mxy += w * xv * yv;
                    }
                }
                let (vx, vy, cxy) = (mxx - mx * mx, myy - my * my, mxy - mx * my);
                sum += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
            }
        }
        sum / (ow * oh) as f64
    }

    /// Exhaustive pair counting: the AUC oracle.
    fn auc_bruteforce(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut total = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                total += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / total
    }

    fn random_image(w: usize, h: usize, seed: u64) -> Vec<f32> {
        let mut rng = crate::rng::rng_from_seed(seed);
        (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect()
    }

    #[test]
    fn identical_images_score_exactly_one() {
        let img = random_image(16, 16, 1);
        let s = ssim(&img, &img, 16, 16).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn constant_images_match_the_closed_form() {
        let a = vec![0.25f32; 12 * 12];
        let b = vec![0.75f32; 12 * 12];
        let s = ssim(&a, &b, 12, 12).unwrap();
        // Zero variances: the structure factor is C2/C2 = 1 and the
        // luminance factor is (2*0.25*0.75 + C1)/(0.25^2 + 0.75^2 + C1).
        let want = 0.3751 / 0.6251;
        assert!((s - want).abs() < 1e-9, "got {s}, want {want}");
    }

    #[test]
    fn separable_filtering_matches_direct_windows() {
        let (w, h) = (16, 13);
        let a = random_image(w, h, 2);
        let b = random_image(w, h, 3);
        let fast = ssim(&a, &b, w, h).unwrap();
        let slow = ssim_bruteforce(&a, &b, w, h);
        assert!((fast - slow).abs() < 1e-10, "separable {fast} vs direct {slow}");
    }

    #[test]
    fn ssim_is_exactly_symmetric() {
        let a = random_image(14, 14, 4);
        let b = random_image(14, 14, 5);
        assert_eq!(ssim(&a, &b, 14, 14).unwrap(), ssim(&b, &a, 14, 14).unwrap());
    }

    #[test]
    fn heavier_corruption_scores_lower() {
        let base = random_image(20, 20, 6);
        let mut rng = crate::rng::rng_from_seed(7);
        let light: Vec<f32> =
            base.iter().map(|&v| (v + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0)).collect();
        let heavy: Vec<f32> =
            base.iter().map(|&v| (v + rng.gen_range(-0.3..0.3)).clamp(0.0, 1.0)).collect();
        let s_light = ssim(&base, &light, 20, 20).unwrap();
        let s_heavy = ssim(&base, &heavy, 20, 20).unwrap();
        assert!(s_light > s_heavy, "light {s_light} <= heavy {s_heavy}");
        assert!(s_light < 1.0);
    }

    #[test]
    fn ssim_rejects_undersized_or_mismatched_input() {
        let img = random_image(10, 10, 8);
        assert!(ssim(&img, &img, 10, 10).is_err());
        let a = random_image(12, 12, 9);
        let b = random_image(12, 11, 10);
        assert!(ssim(&a, &b, 12, 12).is_err());
    }

    #[test]
    fn psnr_known_value_and_infinity() {
        let a = vec![0.25f32; 64];
        let b = vec![0.75f32; 64];
        // A constant offset of 0.5 (exact in f32) gives MSE 0.25 against
        // peak 1, so PSNR is 10*log10(4) = 6.0206 dB.
        let p = psnr(&a, &b, 1.0).unwrap();
        assert!((p - 10.0 * 4.0f64.log10()).abs() < 1e-12, "got {p}");
        assert!((p - 6.0206).abs() < 1e-4, "got {p}");
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_decreases_along_a_noise_ladder() {
        let base = random_image(12, 12, 21);
        let noise: Vec<f32> = {
            let mut rng = crate::rng::rng_from_seed(22);
            (0..base.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        let mut last = f64::INFINITY;
        for amp in [0.01f32, 0.05, 0.1, 0.2] {
            let noisy: Vec<f32> = base
                .iter()
                .zip(&noise)
                .map(|(&v, &n)| (v + amp * n).clamp(0.0, 1.0))
                .collect();
            let p = psnr(&base, &noisy, 1.0).unwrap();
            assert!(p < last, "amp {amp}: psnr {p} did not drop below {last}");
            last = p;
        }
    }

    #[test]
    fn auc_hand_case_and_extremes() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [false, false, true, true];
        let a = roc_auc(&scores, &labels).unwrap();
        assert!((a - 0.75).abs() < 1e-12, "got {a}");

        let perfect = roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap();
        assert_eq!(perfect, 1.0);
        let inverted = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]).unwrap();
        assert_eq!(inverted, 0.0);
        let uninformative = roc_auc(&[0.5, 0.5, 0.5, 0.5], &[false, true, false, true]).unwrap();
        assert_eq!(uninformative, 0.5);
    }

    #[test]
    fn rank_auc_matches_exhaustive_pair_counting() {
        let mut rng = crate::rng::rng_from_seed(11);
        for round in 0..20 {
            let n = rng.gen_range(5..40);
            // Quantized scores force plenty of ties.
            let scores: Vec<f64> =
                (0..n).map(|_| f64::from(rng.gen_range(0..10)) / 10.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            labels[0] = true;
            labels[1] = false;
            let fast = roc_auc(&scores, &labels).unwrap();
            let slow = auc_bruteforce(&scores, &labels);
            assert!((fast - slow).abs() < 1e-12, "round {round}: rank {fast} vs pairs {slow}");
        }
    }

    #[test]
    fn auc_ignores_monotone_rescaling_and_flips_with_labels() {
        let mut rng = crate::rng::rng_from_seed(13);
        let scores: Vec<f64> = (0..30).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut labels: Vec<bool> = (0..30).map(|_| rng.gen_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let base = roc_auc(&scores, &labels).unwrap();

        // Any strictly increasing transform preserves the ranking.
        let warped: Vec<f64> = scores.iter().map(|&s| (0.7 * s).exp() + 3.0 * s).collect();
        let w = roc_auc(&warped, &labels).unwrap();
        assert!((w - base).abs() < 1e-12, "warped {w} vs {base}");

        // Flipping every label complements the statistic.
        let flipped: Vec<bool> = labels.iter().map(|&l| !l).collect();
        let f = roc_auc(&scores, &flipped).unwrap();
        assert!((f - (1.0 - base)).abs() < 1e-12, "flipped {f} vs 1-{base}");
    }

    #[test]
    fn auc_requires_both_classes() {
        assert!(roc_auc(&[0.1, 0.9], &[true, true]).is_err());
        assert!(roc_auc(&[0.1, 0.9], &[false, false]).is_err());
        assert!(roc_auc(&[f64::NAN, 0.5], &[true, false]).is_err());
    }
}
