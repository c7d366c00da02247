//! Fixtures shared by the benches in `benches/`.

use eamamba_core::params::uniform;
use eamamba_core::{Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Uniform `[-0.5, 0.5)` tensor from a fixed seed.
pub fn random_tensor(shape: &[usize], seed: u64) -> Result<Tensor<f32>> {
    uniform(shape, 0.5, &mut ChaCha8Rng::seed_from_u64(seed))
}
