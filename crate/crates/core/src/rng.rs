//! Seeded random streams.
//!
//! Every random draw in the crate flows from one root seed through a named
//! sub-stream (`"demo-gen"`, `"init"`, `"batch"`, `"z0"`, `"eval"`, ...), so any
//! component can be re-run in isolation and still see the same numbers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::Scalar;

pub type StreamRng = ChaCha8Rng;

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// RNG for the named sub-stream of `root`.
pub fn stream(root: u64, name: &str) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(fnv1a(name));
    rng
}

/// RNG for the `index`-th member of a named family (episode `i`, decision `k`, ...).
pub fn indexed_stream(root: u64, name: &str, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(root ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(fnv1a(name));
    rng
}

pub fn normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    let z: f64 = rng.sample(StandardNormal);
    T::lit(z)
}

pub fn normal_vec<T: Scalar, R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<T> {
    (0..n).map(|_| normal(rng)).collect()
}
