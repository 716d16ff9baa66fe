//! Seeding and counter-based randomness.
//!
//! Environment draws are keyed by `(seed, stream, site, counter)` so the value
//! at a site never depends on which other sites were sampled, or in which order.
//! Walk replicas use one ChaCha stream each, derived from `(master seed, index)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn absorb(h: u64, word: u64) -> u64 {
    splitmix64(h ^ word.wrapping_mul(GOLDEN).rotate_left(17))
}

/// Hash of `(seed, stream, site, counter)`.
#[inline]
pub fn site_key(seed: u64, stream: u64, site: &[i64], counter: u64) -> u64 {
    let mut h = absorb(splitmix64(seed), stream);
    h = absorb(h, site.len() as u64);
    for &c in site {
        h = absorb(h, c as u64);
    }
    absorb(h, counter)
}

/// Uniform in `[0, 1)` with 53 random bits.
#[inline]
pub fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
pub fn site_uniform(seed: u64, stream: u64, site: &[i64], counter: u64) -> f64 {
    unit_f64(site_key(seed, stream, site, counter))
}

/// Seed for child stream `index` of `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    absorb(absorb(splitmix64(master), 0x5EED), index)
}

/// Independent generator for replica `index` of a run seeded with `master`.
pub fn replica_rng(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, index))
}
