//! Reproducible random streams.
//!
//! Every replicate draws from its own ChaCha8 stream. The key comes from the
//! master seed mixed with a purpose tag and the stream id is the replicate
//! index, so replicate streams never collide and never depend on scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Purpose tags keep streams for different experiment roles apart.
pub mod purpose {
    pub const TREE: u64 = 1;
    pub const CHAIN: u64 = 2;
    pub const MIN_UNIFORM: u64 = 3;
    pub const LPE: u64 = 4;
    pub const SAMPLING: u64 = 5;
    pub const REDRAW: u64 = 6;
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// Stream `index` of the family keyed by `(master, purpose)`.
pub fn derive_stream(master: u64, purpose: u64, index: u64) -> Stream {
    let key = master ^ purpose.wrapping_mul(GOLDEN).rotate_left(17);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// Map 64 random bits to the open interval (0, 1) on the grid `(k + 1/2) 2^-52`,
/// every point of which is exactly representable.
#[inline]
pub fn unit_open(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// One uniform draw from (0, 1).
#[inline]
pub fn uniform<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    unit_open(rng.next_u64())
}

/// Exponential draw with the given rate.
#[inline]
pub fn exponential<R: RngCore + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    -uniform(rng).ln() / rate
}
