use ndarray::Array2;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mi::{CmiBatch, NegativeSampler};
use crate::numerics::{derive_seed, rng_from_seed, Rng};

/// Per component: `z ~ N(0, sigma_z^2)`, `x = z + e` with `e ~ N(0, 1)`,
/// and `y = z + x z + f` when `z > 0`, otherwise `y = f`, with
/// `f ~ N(0, noise^2)`. Components are independent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dim: usize,
    pub sigma_z: f64,
    /// Standard deviation `n` of the observation noise `f`.
    pub noise: f64,
    pub train_size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            sigma_z: 1.0,
            noise: 0.5,
            train_size: 20_000,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("synthetic dim must be positive".into()));
        }
        if !(self.sigma_z > 0.0) || !(self.noise > 0.0) {
            return Err(Error::Config("sigma_z and noise must be positive".into()));
        }
        Ok(())
    }
}

fn respond(z: f64, x: f64, f: f64) -> f64 {
    if z > 0.0 {
        z + x * z + f
    } else {
        f
    }
}

/// Draws `(x, y)` for each given context row of `z`.
pub fn sample_given_z(cfg: &SynthConfig, z: Array2<f64>, rng: &mut Rng) -> CmiBatch {
    let mut x = Array2::zeros(z.raw_dim());
    let mut y = Array2::zeros(z.raw_dim());
    for ((zi, xi), yi) in z.iter().zip(x.iter_mut()).zip(y.iter_mut()) {
        let e: f64 = StandardNormal.sample(rng);
        let f: f64 = StandardNormal.sample(rng);
        *xi = zi + e;
        *yi = respond(*zi, *xi, cfg.noise * f);
    }
    CmiBatch { x, y, z }
}

pub fn sample_synth(cfg: &SynthConfig, count: usize, rng: &mut Rng) -> CmiBatch {
    let normal = Normal::new(0.0, cfg.sigma_z).expect("sigma_z validated");
    let z = Array2::from_shape_simple_fn((count, cfg.dim), || normal.sample(rng));
    sample_given_z(cfg, z, rng)
}

/// `I(X; Y | Z = z)` per component: `0.5 ln(1 + z^2 / n^2)` for `z > 0`,
/// zero otherwise (there `y` is pure noise).
pub fn theoretical_cmi(z: f64, noise: f64) -> f64 {
    if z > 0.0 {
        0.5 * (z * z / (noise * noise)).ln_1p()
    } else {
        0.0
    }
}

/// Truth for a whole context vector: components add.
pub fn theoretical_cmi_vec(z: &[f64], noise: f64) -> f64 {
    z.iter().map(|&zi| theoretical_cmi(zi, noise)).sum()
}

const AVERAGE_MI_DRAWS: usize = 4_000_000;

/// Monte-Carlo `E_z[I(X; Y | Z = z)]`, times `dim`.
pub fn average_theoretical_mi(cfg: &SynthConfig) -> f64 {
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 0xA7E2));
    let normal = Normal::new(0.0, cfg.sigma_z).expect("sigma_z validated");
    let total: f64 = (0..AVERAGE_MI_DRAWS)
        .map(|_| theoretical_cmi(normal.sample(&mut rng), cfg.noise))
        .sum();
    cfg.dim as f64 * total / AVERAGE_MI_DRAWS as f64
}

/// Negatives `x~ = z + e` with fresh noise, i.e. exact draws from `p(x|z)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SynthNegatives;

impl NegativeSampler for SynthNegatives {
    fn negatives(&self, batch: &CmiBatch, rng: &mut Rng) -> Array2<f64> {
        batch.z.mapv(|z| {
            let e: f64 = StandardNormal.sample(rng);
            z + e
        })
    }
}
