//! Random streams.
//!
//! Every stream in the toolkit is a xoshiro256++ generator seeded through
//! SplitMix64 (`rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64`). The
//! algorithm is fixed so sample streams are reproducible across platforms.

use rand::{RngCore, SeedableRng};
pub use rand_xoshiro::Xoshiro256PlusPlus as StreamRng;

use crate::special::probit;

/// Named sub-streams derived from one user seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Train = 3,
    Eval = 4,
    Search = 5,
    Holdout = 6,
}

/// Mixes a seed with a stream tag and an index into a fresh 64-bit seed.
pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    let mut z = seed
        ^ (stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, stream: Stream, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, stream, index))
}

/// Uniform draw on the open interval (0, 1), 53-bit resolution.
pub fn open01<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw by inverse-CDF transform.
pub fn standard_normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    probit(open01(rng))
}
