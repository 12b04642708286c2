//! Dense math, parameter storage, the optimizer and gradient verification
//! shared by the learning modules. Everything is `f64`.

mod activation;
mod adam;
mod gradcheck;
mod matrix;
mod params;

pub use activation::{sigmoid, tanh_act};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, relative_error, GradCheckOptions, GradCheckReport};
pub use matrix::{dot, RealMatrix};
pub use params::{Gradients, ParamId, ParamStore};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Deterministic generator for one named random stream under a master seed.
///
/// Distinct `stream` values give independent sequences for the same seed.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed; used to give every parameter and epoch its own seed.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    // splitmix64 finalizer over the combined input
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Glorot/Xavier uniform initialization in `±sqrt(6 / (rows + cols))`.
pub fn glorot_init(rows: usize, cols: usize, seed: u64) -> Result<RealMatrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::Shape(format!(
            "cannot initialize a {rows}x{cols} matrix"
        )));
    }
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    let mut rng = rng_for(seed, 0);
    let data = (0..rows * cols).map(|_| dist.sample(&mut rng)).collect();
    RealMatrix::from_vec(rows, cols, data)
}
