//! Keyed deterministic draws.
//!
//! Everything random in this crate is a pure function of a seed and a key
//! (position, step, salt), with no RNG state. Identical inputs give identical
//! draws on every platform, which is what makes runs reproducible byte for
//! byte and lets paired runs share their noise.

/// Salt for the oracle's confidence jitter.
pub const SALT_JITTER: u64 = 0x4a49_5454;
/// Salt for the oracle's token-error draw.
pub const SALT_TOKEN_ERR: u64 = 0x544f_4b45;
/// Salt for the oracle's wrong-token choice.
pub const SALT_WRONG_TOKEN: u64 = 0x5752_4f4e;
/// Salt for the random-remasking keep/unmask draw.
pub const SALT_RANDOM_STRATEGY: u64 = 0x524e_4453;
/// Salt for ground-truth generation from a run seed.
pub const SALT_GROUND_TRUTH: u64 = 0x4752_5554;
/// Salt separating the oracle seed from the run seed.
pub const SALT_ORACLE_SEED: u64 = 0x4f52_434c;
/// Salt separating the strategy seed from the run seed.
pub const SALT_STRATEGY_SEED: u64 = 0x5354_5247;

/// splitmix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a (seed, position, step, salt) key into a u64.
#[inline]
pub fn keyed_hash(seed: u64, position: u64, step: u64, salt: u64) -> u64 {
    mix64(mix64(mix64(mix64(seed) ^ position) ^ step) ^ salt)
}

/// Uniform draw in [0, 1) from a keyed hash.
#[inline]
pub fn unit_draw(seed: u64, position: u64, step: u64, salt: u64) -> f64 {
    // 53 high-quality bits into the f64 mantissa range.
    (keyed_hash(seed, position, step, salt) >> 11) as f64 / (1u64 << 53) as f64
}

/// Uniform draw in 0..n from a keyed hash. `n` must be non-zero.
#[inline]
pub fn index_draw(seed: u64, position: u64, step: u64, salt: u64, n: u64) -> u64 {
    debug_assert!(n > 0);
    keyed_hash(seed, position, step, salt) % n
}
