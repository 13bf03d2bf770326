//! Seeded random streams.
//!
//! Every parallel unit of work (a particle block, an experiment cell) gets its
//! own ChaCha stream derived from a master seed and a stream id.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type LabRng = ChaCha8Rng;

/// Particles per RNG block in samplers. Fixed so that outputs are invariant
/// to the worker count.
pub const BLOCK: usize = 256;

pub fn seeded(seed: u64) -> LabRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn stream(seed: u64, stream: u64) -> LabRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer; used to derive child seeds from (master, index).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn normal(rng: &mut LabRng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn fill_normal(rng: &mut LabRng, out: &mut [f64]) {
    for v in out {
        *v = StandardNormal.sample(rng);
    }
}
