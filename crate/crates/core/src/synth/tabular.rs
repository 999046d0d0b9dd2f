use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{weighted::WeightedIndex, Distribution};

use crate::error::{Error, Result};
use crate::mi::{CmiBatch, NegativeSampler};
use crate::numerics::Rng;

/// A finite joint `p(x, y, z)` over scalar support points.
///
/// Probabilities are stored flat with index `(ix * ny + iy) * nz + iz`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularJoint {
    pub x_support: Vec<f64>,
    pub y_support: Vec<f64>,
    pub z_support: Vec<f64>,
    p: Vec<f64>,
}

impl TabularJoint {
    pub fn new(x_support: Vec<f64>, y_support: Vec<f64>, z_support: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        let n = x_support.len() * y_support.len() * z_support.len();
        if n == 0 || p.len() != n {
            return Err(Error::Config(format!("probability table has {} entries, expected {n}", p.len())));
        }
        if p.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Config("probabilities must be non-negative".into()));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self {
            x_support,
            y_support,
            z_support,
            p,
        })
    }

    /// Builds the table from a function of support indices, normalising it.
    pub fn from_fn(nx: usize, ny: usize, nz: usize, f: impl Fn(usize, usize, usize) -> f64) -> Result<Self> {
        let mut p = Vec::with_capacity(nx * ny * nz);
        for ix in 0..nx {
            for iy in 0..ny {
                for iz in 0..nz {
                    p.push(f(ix, iy, iz));
                }
            }
        }
        let total: f64 = p.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Config("table has no mass".into()));
        }
        p.iter_mut().for_each(|v| *v /= total);
        let support = |n: usize| (0..n).map(|i| i as f64).collect::<Vec<_>>();
        Self::new(support(nx), support(ny), support(nz), p)
    }

    /// `x`, `y`, `z` independent and uniform: zero conditional MI.
    pub fn independent(k: usize, nz: usize) -> Result<Self> {
        Self::from_fn(k, k, nz, |_, _, _| 1.0)
    }

    /// `x` uniform over `k` values and `y = (x + z) mod k`: MI is `ln k`.
    pub fn bijection(k: usize, nz: usize) -> Result<Self> {
        Self::from_fn(k, k, nz, |ix, iy, iz| f64::from(u8::from(iy == (ix + iz) % k)))
    }

    /// The bijection channel mixed with a uniformly random `y`.
    pub fn noisy_bijection(k: usize, nz: usize, keep: f64) -> Result<Self> {
        Self::from_fn(k, k, nz, |ix, iy, iz| {
            keep * f64::from(u8::from(iy == (ix + iz) % k)) + (1.0 - keep) / k as f64
        })
    }

    /// `y = floor(x / 2)` for `x` uniform over `2m` values: MI is `ln m`.
    pub fn coarse(m: usize, nz: usize) -> Result<Self> {
        Self::from_fn(2 * m, m, nz, |ix, iy, _| f64::from(u8::from(iy == ix / 2)))
    }

    /// Dependence switched on by context: independent at `z = 0`, bijective
    /// at `z = 1`. MI is `0.5 ln k`.
    pub fn gated(k: usize) -> Result<Self> {
        Self::from_fn(k, k, 2, |ix, iy, iz| if iz == 0 { 1.0 / k as f64 } else { f64::from(u8::from(ix == iy)) })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.x_support.len(), self.y_support.len(), self.z_support.len())
    }

    pub fn prob(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        let (_, ny, nz) = self.shape();
        self.p[(ix * ny + iy) * nz + iz]
    }

    /// Relabels support points and permutes the z slices.
    pub fn permuted(&self, px: &[usize], py: &[usize], pz: &[usize]) -> Self {
        let (nx, ny, nz) = self.shape();
        let mut p = vec![0.0; self.p.len()];
        for ix in 0..nx {
            for iy in 0..ny {
                for iz in 0..nz {
                    p[(px[ix] * ny + py[iy]) * nz + pz[iz]] = self.prob(ix, iy, iz);
                }
            }
        }
        Self {
            p,
            ..self.clone()
        }
    }

    /// Draws `count` triples. `jitter > 0` adds `U(-jitter/2, jitter/2)` to
    /// `x` (dequantisation), which leaves the conditional MI unchanged as
    /// long as the jittered cells do not overlap.
    pub fn sample(&self, count: usize, jitter: f64, rng: &mut Rng) -> CmiBatch {
        let (_, ny, nz) = self.shape();
        let cells = WeightedIndex::new(&self.p).expect("validated table");
        let mut x = Array2::zeros((count, 1));
        let mut y = Array2::zeros((count, 1));
        let mut z = Array2::zeros((count, 1));
        for i in 0..count {
            let c = cells.sample(rng);
            let (ix, iy, iz) = (c / (ny * nz), (c / nz) % ny, c % nz);
            x[[i, 0]] = self.x_support[ix] + jitter_draw(jitter, rng);
            y[[i, 0]] = self.y_support[iy];
            z[[i, 0]] = self.z_support[iz];
        }
        CmiBatch { x, y, z }
    }

    fn z_index(&self, z: f64) -> usize {
        self.z_support
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - z).abs().total_cmp(&(b.1 - z).abs()))
            .map(|(i, _)| i)
            .expect("non-empty support")
    }

    /// `p(x | z)` as weights over the x support.
    fn x_given_z(&self, iz: usize) -> Vec<f64> {
        let (nx, ny, _) = self.shape();
        (0..nx).map(|ix| (0..ny).map(|iy| self.prob(ix, iy, iz)).sum()).collect()
    }
}

fn jitter_draw(jitter: f64, rng: &mut Rng) -> f64 {
    if jitter > 0.0 {
        rng.random_range(-0.5 * jitter..0.5 * jitter)
    } else {
        0.0
    }
}

/// Exact `I(X; Y | Z)` in nats, with `0 log 0 = 0`.
pub fn tabular_cmi(joint: &TabularJoint) -> f64 {
    let (nx, ny, nz) = joint.shape();
    let mut total = 0.0;
    for iz in 0..nz {
        let pz: f64 = (0..nx).flat_map(|ix| (0..ny).map(move |iy| (ix, iy))).map(|(ix, iy)| joint.prob(ix, iy, iz)).sum();
        if pz == 0.0 {
            continue;
        }
        let px: Vec<f64> = (0..nx).map(|ix| (0..ny).map(|iy| joint.prob(ix, iy, iz)).sum()).collect();
        let py: Vec<f64> = (0..ny).map(|iy| (0..nx).map(|ix| joint.prob(ix, iy, iz)).sum()).collect();
        for ix in 0..nx {
            for iy in 0..ny {
                let pxyz = joint.prob(ix, iy, iz);
                if pxyz > 0.0 {
                    total += pxyz * (pxyz * pz / (px[ix] * py[iy])).ln();
                }
            }
        }
    }
    total
}

/// Negatives drawn exactly from `p(x | z)` of a table, with the same jitter
/// as the joint samples.
#[derive(Debug, Clone)]
pub struct TabularNegatives {
    joint: TabularJoint,
    jitter: f64,
    conditionals: Vec<WeightedIndex<f64>>,
}

impl TabularNegatives {
    pub fn new(joint: &TabularJoint, jitter: f64) -> Self {
        let conditionals = (0..joint.z_support.len())
            .map(|iz| {
                let w = joint.x_given_z(iz);
                WeightedIndex::new(if w.iter().sum::<f64>() > 0.0 { w } else { vec![1.0; joint.x_support.len()] })
                    .expect("positive weights")
            })
            .collect();
        Self {
            joint: joint.clone(),
            jitter,
            conditionals,
        }
    }
}

impl NegativeSampler for TabularNegatives {
    fn negatives(&self, batch: &CmiBatch, rng: &mut Rng) -> Array2<f64> {
        let mut out = Array2::zeros((batch.len(), 1));
        for (i, z) in batch.z.column(0).iter().enumerate() {
            let ix = self.conditionals[self.joint.z_index(*z)].sample(rng);
            out[[i, 0]] = self.joint.x_support[ix] + jitter_draw(self.jitter, rng);
        }
        out
    }
}
