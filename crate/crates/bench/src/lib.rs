//! Shared fixtures for the criterion benchmarks.

use hymba_core::{DenseTensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Uniform `[-1, 1]` constant of the given shape, fixed by `seed`.
pub fn random_var(shape: &[usize], seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Var::constant(DenseTensor::uniform(shape, -1.0, 1.0, &mut rng).expect("valid shape"))
}

/// Uniform constant in `[lo, hi]`.
pub fn random_var_in(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Var::constant(DenseTensor::uniform(shape, lo, hi, &mut rng).expect("valid shape"))
}

/// Token counts swept by the sequence-length benchmarks.
pub const LENGTHS: [usize; 4] = [256, 512, 1024, 2048];
