//! Seed derivation. Every random subsystem draws from one master seed;
//! subsystem seeds are derived from it with a fixed textual label so that
//! adding a consumer never perturbs the streams of existing ones.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a subsystem seed from a master seed and a fixed label.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    // FNV-1a over the label folded into the master seed, finished with a
    // splitmix64 avalanche so nearby seeds map to unrelated streams.
    let mut h = master ^ 0xCBF2_9CE4_8422_2325;
    for &b in label.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(h)
}

/// The crate-wide RNG. ChaCha has a stable, versioned stream, which keeps
/// checkpoints byte-reproducible across builds.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_deterministic_and_label_sensitive() {
        assert_eq!(derive_seed(7, "split"), derive_seed(7, "split"));
        assert_ne!(derive_seed(7, "split"), derive_seed(7, "shuffle"));
        assert_ne!(derive_seed(7, "split"), derive_seed(8, "split"));
    }

    #[test]
    fn streams_differ_for_different_labels() {
        use rand::Rng;
        let mut a = rng_from_seed(derive_seed(1, "a"));
        let mut b = rng_from_seed(derive_seed(1, "b"));
        let xs: Vec<u32> = (0..4).map(|_| a.gen()).collect();
        let ys: Vec<u32> = (0..4).map(|_| b.gen()).collect();
        assert_ne!(xs, ys);
    }
}
