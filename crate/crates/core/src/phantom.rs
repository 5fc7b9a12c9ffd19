//! Synthetic dual-energy chest phantoms.
//!
//! Each sample is drawn from a per-sample RNG stream, so any single phantom
//! can be regenerated in isolation. A sample consists of three 8-bit
//! images: a soft-tissue image (smooth background, darker lung fields,
//! optionally a bright nodule), a bone image (spine, rib arcs, clavicles),
//! and the standard radiograph composed from them on the quantized grid:
//!
//!   standard = min(soft + bone, 255)   (per pixel, u8)
//!
//! Composing after quantization makes the law integer-exact on disk, so
//! tests can verify it bitwise. A small fraction of samples are
//! "misregistered": the bone image is shifted before composition while the
//! stored soft and bone targets stay in place, mimicking the motion
//! artifacts dual-energy subtraction suffers between exposures.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Clone, Copy, Debug)]
pub struct PhantomConfig {
    pub count: usize,
    pub image_size: usize,
    pub seed: u64,
    /// Probability that a sample carries a nodule-like bright blob.
    pub abnormal_rate: f64,
    /// Probability that the bone image is shifted before composition.
    pub misregister_rate: f64,
    /// Peak intensity range the nodule blob is drawn from.
    pub nodule_amp: (f32, f32),
    /// Nodule radius range as a fraction of the image side.
    pub nodule_radius: (f32, f32),
    /// Standard deviation of the per-pixel Gaussian noise.
    pub noise_amp: f32,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            count: 200,
            image_size: 64,
            seed: 17,
            abnormal_rate: 0.5,
            misregister_rate: 0.05,
            nodule_amp: (0.18, 0.26),
            nodule_radius: (0.035, 0.06),
            noise_amp: 0.01,
        }
    }
}

impl PhantomConfig {
    /// Larger, brighter nodules: a deliberately separable population for
    /// exercising the downstream abnormality classifier.
    pub fn with_easy_nodules(mut self) -> Self {
        self.nodule_amp = (0.30, 0.40);
        self.nodule_radius = (0.09, 0.14);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Usage("phantom count must be positive".into()));
        }
        if self.image_size < 16 || self.image_size > 1024 {
            return Err(Error::Usage(format!(
                "phantom image size must lie in 16..=1024, got {}",
                self.image_size
            )));
        }
        for (name, r) in [("abnormal_rate", self.abnormal_rate), ("misregister_rate", self.misregister_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Usage(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        for (name, (lo, hi), max) in [
            ("nodule_amp", self.nodule_amp, 0.5f32),
            ("nodule_radius", self.nodule_radius, 0.25),
        ] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi && hi <= max) {
                return Err(Error::Usage(format!(
                    "{name} range must satisfy 0 < lo < hi <= {max}, got ({lo}, {hi})"
                )));
            }
        }
        if !(self.noise_amp.is_finite() && (0.0..0.2).contains(&self.noise_amp)) {
            return Err(Error::Usage(format!(
                "noise_amp must lie in [0, 0.2), got {}",
                self.noise_amp
            )));
        }
        Ok(())
    }
}

/// One generated phantom. `standard` is the composed radiograph the models
/// take as input; `soft` and `bone` are the decomposition targets, stored
/// unshifted even when the composition used a shifted bone image.
#[derive(Clone, Debug)]
pub struct PhantomSample {
    pub index: usize,
    pub id: String,
    pub standard: Vec<u8>,
    pub soft: Vec<u8>,
    pub bone: Vec<u8>,
    pub abnormal: bool,
    pub misregistered: bool,
    pub seed: u64,
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Shifts an image by (dy, dx), filling vacated pixels with zero.
fn shift_image(img: &[u8], size: usize, dy: isize, dx: isize) -> Vec<u8> {
    let mut out = vec![0u8; img.len()];
    for y in 0..size as isize {
        let sy = y - dy;
        if sy < 0 || sy >= size as isize {
            continue;
        }
        for x in 0..size as isize {
            let sx = x - dx;
            if sx < 0 || sx >= size as isize {
                continue;
            }
            out[(y * size as isize + x) as usize] = img[(sy * size as isize + sx) as usize];
        }
    }
    out
}

/// The dual-energy subtraction analogue: what remains of the standard image
/// after the (unshifted) bone estimate is subtracted. On misregistered
/// samples this leaves bright bone residue where the shift exposed it.
pub fn subtract_bone(standard: &[u8], bone: &[u8]) -> Vec<u8> {
    standard.iter().zip(bone).map(|(&s, &b)| s.saturating_sub(b)).collect()
}

struct Ellipse {
    cx: f32,
    cy: f32,
    a: f32,
    b: f32,
}

impl Ellipse {
    fn field(&self, u: f32, v: f32) -> f32 {
        let du = (u - self.cx) / self.a;
        let dv = (v - self.cy) / self.b;
        du * du + dv * dv
    }
}

/// Generates sample `index` of the configured population. Every draw comes
/// from a stream derived from (seed, index), so samples are independent and
/// individually reproducible.
pub fn generate_sample(cfg: &PhantomConfig, index: usize) -> Result<PhantomSample> {
    cfg.validate()?;
    if index >= cfg.count {
        return Err(Error::Usage(format!(
            "sample index {index} outside population of {}",
            cfg.count
        )));
    }
    let sample_seed = derive_seed(cfg.seed, &format!("sample:{index}"));
    let mut rng = rng_from_seed(sample_seed);
    let s = cfg.image_size;
    let sf = s as f32;

    // --- structural parameters, drawn in a fixed order -----------------
    let bg_fu: f32 = rng.gen_range(0.6..1.4);
    let bg_fv: f32 = rng.gen_range(0.6..1.4);
    let bg_pu: f32 = rng.gen_range(0.0..1.0);
    let bg_pv: f32 = rng.gen_range(0.0..1.0);

    let mut lungs = Vec::with_capacity(2);
    for &cx0 in &[0.32f32, 0.68] {
        lungs.push(Ellipse {
            cx: cx0 + rng.gen_range(-0.02..0.02),
            cy: 0.52 + rng.gen_range(-0.02..0.02),
            a: 0.15 + rng.gen_range(-0.015..0.015),
            b: 0.27 + rng.gen_range(-0.025..0.025),
        });
    }

    let abnormal = rng.gen_bool(cfg.abnormal_rate);
    // Nodule parameters are drawn even for normal samples so the stream
    // layout does not depend on the outcome of the coin above.
    let nod_lung = usize::from(rng.gen_bool(0.5));
    let nod_off_u: f32 = rng.gen_range(-0.5..0.5);
    let nod_off_v: f32 = rng.gen_range(-0.5..0.5);
    let nod_rad: f32 = rng.gen_range(cfg.nodule_radius.0..cfg.nodule_radius.1);
    let nod_amp: f32 = rng.gen_range(cfg.nodule_amp.0..cfg.nodule_amp.1);

    let spine_wobble: f32 = rng.gen_range(0.0..0.015);
    let spine_phase: f32 = rng.gen_range(0.0..1.0);
    let vert_freq: f32 = rng.gen_range(8.0..10.0);
    let vert_phase: f32 = rng.gen_range(0.0..1.0);

    const N_RIBS: usize = 5;
    let mut rib_base = [0.0f32; N_RIBS];
    let mut rib_arc = [0.0f32; N_RIBS];
    let mut rib_th = [0.0f32; N_RIBS];
    for k in 0..N_RIBS {
        rib_base[k] = 0.30 + 0.095 * k as f32 + rng.gen_range(-0.01..0.01);
        rib_arc[k] = 0.05 + rng.gen_range(-0.012..0.012);
        rib_th[k] = 0.011 + rng.gen_range(-0.002..0.002);
    }

    let clav_v: f32 = 0.165 + rng.gen_range(-0.01..0.01);
    let clav_slope: f32 = 0.08 + rng.gen_range(-0.02..0.02);
    let clav_th: f32 = 0.012 + rng.gen_range(-0.002..0.002);

    let misregistered = rng.gen_bool(cfg.misregister_rate);
    let max_shift = (s / 16).max(1) as isize;
    let (shift_dy, shift_dx) = loop {
        let dy = rng.gen_range(-max_shift..=max_shift);
        let dx = rng.gen_range(-max_shift..=max_shift);
        if (dy, dx) != (0, 0) {
            break (dy, dx);
        }
    };

    // --- soft-tissue image ----------------------------------------------
    let noise = Normal::new(0.0f32, cfg.noise_amp).expect("stddev checked by validate");
    let tau = std::f32::consts::TAU;
    let mut soft_f = vec![0.0f32; s * s];
    for y in 0..s {
        let v = (y as f32 + 0.5) / sf;
        for x in 0..s {
            let u = (x as f32 + 0.5) / sf;
            let mut val = 0.5
                + 0.10 * (tau * (bg_fu * u + bg_pu)).sin() * (tau * (bg_fv * v + bg_pv)).cos();
            let r2 = 2.0 * ((u - 0.5).powi(2) + (v - 0.5).powi(2));
            val -= 0.12 * r2;
            for lung in &lungs {
                let e = lung.field(u, v);
                val *= 1.0 - 0.40 * sigmoid((1.0 - e) / 0.08);
            }
            if abnormal {
                let lung = &lungs[nod_lung];
                let ncx = lung.cx + nod_off_u * lung.a * 0.6;
                let ncy = lung.cy + nod_off_v * lung.b * 0.6;
                let d2 = (u - ncx).powi(2) + (v - ncy).powi(2);
                val += nod_amp * (-d2 / (nod_rad * nod_rad)).exp();
            }
            soft_f[y * s + x] = val;
        }
    }
    // Noise is drawn last, in pixel order, so the structural draws above
    // stay aligned across noise-model changes.
    for p in soft_f.iter_mut() {
        *p += noise.sample(&mut rng);
    }

    // --- bone image ------------------------------------------------------
    let mut bone_f = vec![0.0f32; s * s];
    for y in 0..s {
        let v = (y as f32 + 0.5) / sf;
        for x in 0..s {
            let u = (x as f32 + 0.5) / sf;
            let mut val = 0.0f32;

            // Spine: a vertical band with vertebra striping.
            let dxs = u - 0.5 - spine_wobble * (tau * (v + spine_phase)).sin();
            let profile = (-(dxs / 0.045).powi(2)).exp();
            let stripes = 0.82 + 0.18 * (tau * (vert_freq * v + vert_phase)).sin();
            val += 0.32 * profile * stripes;

            // Ribs: arcs over each lung span, tapered toward the ends.
            for k in 0..N_RIBS {
                for (u0, u1) in [(0.10f32, 0.47f32), (0.53, 0.90)] {
                    if u < u0 || u > u1 {
                        continue;
                    }
                    let t = (u - u0) / (u1 - u0);
                    let vc = rib_base[k] - rib_arc[k] * (std::f32::consts::PI * t).sin();
                    let taper = (std::f32::consts::PI * t).sin().max(0.0).sqrt();
                    val += 0.26 * taper * (-((v - vc) / rib_th[k]).powi(2)).exp();
                }
            }

            // Clavicles: straight slanted tubes near the apex.
            for (u0, u1, sign) in [(0.14f32, 0.48f32, -1.0f32), (0.52, 0.86, 1.0)] {
                if u < u0 || u > u1 {
                    continue;
                }
                let t = (u - u0) / (u1 - u0);
                let vc = clav_v + sign * clav_slope * (u - 0.5);
                let taper = (std::f32::consts::PI * t).sin().max(0.0).sqrt();
                val += 0.28 * taper * (-((v - vc) / clav_th).powi(2)).exp();
            }

            bone_f[y * s + x] = val;
        }
    }

    // --- quantize, then compose on the integer grid ----------------------
    let soft: Vec<u8> = soft_f.iter().map(|&v| quantize(v)).collect();
    let bone: Vec<u8> = bone_f.iter().map(|&v| quantize(v)).collect();
    let composed_bone =
        if misregistered { shift_image(&bone, s, shift_dy, shift_dx) } else { bone.clone() };
    let standard: Vec<u8> = soft
        .iter()
        .zip(&composed_bone)
        .map(|(&a, &b)| (u16::from(a) + u16::from(b)).min(255) as u8)
        .collect();

    Ok(PhantomSample {
        index,
        id: format!("phantom_{index:05}"),
        standard,
        soft,
        bone,
        abnormal,
        misregistered,
        seed: sample_seed,
    })
}

/// Generates the whole population in index order.
pub fn generate(cfg: &PhantomConfig) -> Result<Vec<PhantomSample>> {
    cfg.validate()?;
    (0..cfg.count).map(|i| generate_sample(cfg, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(count: usize) -> PhantomConfig {
        PhantomConfig { count, image_size: 32, seed: 99, ..Default::default() }
    }

    #[test]
    fn samples_are_reproducible_in_isolation() {
        let cfg = small_cfg(10);
        let all = generate(&cfg).unwrap();
        let lone = generate_sample(&cfg, 7).unwrap();
        assert_eq!(all[7].standard, lone.standard);
        assert_eq!(all[7].soft, lone.soft);
        assert_eq!(all[7].bone, lone.bone);
        assert_eq!(all[7].abnormal, lone.abnormal);
        assert_eq!(all[7].misregistered, lone.misregistered);
    }

    #[test]
    fn composition_law_is_integer_exact_when_registered() {
        let cfg = PhantomConfig { misregister_rate: 0.0, ..small_cfg(6) };
        for sample in generate(&cfg).unwrap() {
            assert!(!sample.misregistered);
            for i in 0..sample.standard.len() {
                let want = (u16::from(sample.soft[i]) + u16::from(sample.bone[i])).min(255) as u8;
                assert_eq!(sample.standard[i], want, "pixel {i} of {}", sample.id);
            }
        }
    }

    #[test]
    fn misregistered_samples_break_the_inplace_composition() {
        let cfg = PhantomConfig { misregister_rate: 1.0, ..small_cfg(4) };
        for sample in generate(&cfg).unwrap() {
            assert!(sample.misregistered);
            let inplace: Vec<u8> = sample
                .soft
                .iter()
                .zip(&sample.bone)
                .map(|(&a, &b)| (u16::from(a) + u16::from(b)).min(255) as u8)
                .collect();
            assert_ne!(sample.standard, inplace, "{} composed without a shift", sample.id);
        }
    }

    #[test]
    fn bone_makes_the_standard_image_brighter_over_a_wide_area() {
        let sample = generate_sample(&small_cfg(3), 0).unwrap();
        let brighter =
            sample.standard.iter().zip(&sample.soft).filter(|(s, f)| s > f).count();
        assert!(
            brighter * 10 >= sample.standard.len(),
            "only {brighter} of {} pixels gained intensity",
            sample.standard.len()
        );
    }

    #[test]
    fn class_rates_track_configuration() {
        let cfg = PhantomConfig { count: 400, ..small_cfg(400) };
        let samples = generate(&cfg).unwrap();
        let abnormal = samples.iter().filter(|s| s.abnormal).count();
        assert!((120..=280).contains(&abnormal), "abnormal count {abnormal} of 400");
        let mis = samples.iter().filter(|s| s.misregistered).count();
        assert!((2..=60).contains(&mis), "misregistered count {mis} of 400");
    }

    #[test]
    fn abnormal_samples_differ_from_normal_in_soft_tissue() {
        // Force both cases from the same structural stream: rate 0 vs 1.
        let base = small_cfg(2);
        let normal =
            generate_sample(&PhantomConfig { abnormal_rate: 0.0, ..base }, 0).unwrap();
        let abnormal =
            generate_sample(&PhantomConfig { abnormal_rate: 1.0, ..base }, 0).unwrap();
        assert!(!normal.abnormal);
        assert!(abnormal.abnormal);
        assert_ne!(normal.soft, abnormal.soft);
    }

    #[test]
    fn subtract_bone_saturates_at_zero() {
        let out = subtract_bone(&[10, 200, 0], &[20, 50, 5]);
        assert_eq!(out, vec![0, 150, 0]);
    }

    #[test]
    fn easy_nodules_add_more_intensity_than_defaults() {
        let base = PhantomConfig { abnormal_rate: 1.0, ..small_cfg(2) };
        let plain = generate_sample(&base, 0).unwrap();
        let easy = generate_sample(&base.with_easy_nodules(), 0).unwrap();
        let total = |img: &[u8]| img.iter().map(|&v| u64::from(v)).sum::<u64>();
        assert!(
            total(&easy.soft) > total(&plain.soft),
            "easy nodule did not brighten the soft image ({} vs {})",
            total(&easy.soft),
            total(&plain.soft)
        );
    }

    #[test]
    fn suppression_baseline_stays_below_point_ninety_five() {
        // The translation task must be non-trivial: copying the input
        // through unchanged has to leave clear headroom.
        let cfg = PhantomConfig { count: 10, seed: 31, ..Default::default() };
        let mut total = 0.0;
        for sample in generate(&cfg).unwrap() {
            let unit = |img: &[u8]| -> Vec<f32> {
                img.iter().map(|&v| f32::from(v) / 255.0).collect()
            };
            total += crate::metrics::ssim(
                &unit(&sample.standard),
                &unit(&sample.soft),
                cfg.image_size,
                cfg.image_size,
            )
            .unwrap();
        }
        let mean = total / cfg.count as f64;
        assert!(mean < 0.95, "input-copy baseline SSIM {mean} leaves no headroom");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(PhantomConfig { count: 0, ..Default::default() }.validate().is_err());
        assert!(PhantomConfig { image_size: 10, ..Default::default() }.validate().is_err());
        assert!(PhantomConfig { abnormal_rate: 1.5, ..Default::default() }.validate().is_err());
        assert!(PhantomConfig { nodule_amp: (0.3, 0.2), ..Default::default() }.validate().is_err());
        assert!(PhantomConfig { nodule_radius: (0.0, 0.1), ..Default::default() }
            .validate()
            .is_err());
        assert!(PhantomConfig { noise_amp: 0.5, ..Default::default() }.validate().is_err());
        let cfg = small_cfg(3);
        assert!(generate_sample(&cfg, 3).is_err());
    }
}
