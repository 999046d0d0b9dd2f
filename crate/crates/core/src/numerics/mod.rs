//! Small deterministic neural-network machinery.
//!
//! Everything trainable in the crate is a [`Network`]: a fixed stack of dense
//! and gated-linear layers over a flat `f64` parameter vector, with a
//! hand-written backward pass and an [`Adam`] optimiser. Randomness always
//! flows through an explicitly passed [`Rng`].

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod network;
mod normalizer;

pub use adam::Adam;
pub use network::{Activation, ForwardCache, Gradients, LayerSpec, Network};
pub use normalizer::{RunningNorm, VecNorm};

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;

/// The crate-wide pseudo random generator (ChaCha with 8 rounds).
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate generator from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Derives an independent child seed, e.g. one per parallel environment.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finaliser over the pair
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `log(1 + exp(u))` without overflow.
pub fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Concatenates row-aligned blocks column-wise.
pub fn hstack(blocks: &[ArrayView2<'_, f64>]) -> Array2<f64> {
    ndarray::concatenate(Axis(1), blocks).expect("row counts must agree")
}

/// Gathers rows by index into a new matrix.
pub fn take_rows(m: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    m.select(Axis(0), idx)
}
