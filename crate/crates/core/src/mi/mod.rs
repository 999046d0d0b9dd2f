//! Neural lower bounds on conditional mutual information `I(X; Y | Z)`.
//!
//! Three bounds are supported:
//!
//! * **VLB** – `E[log q(x|y,z) - log q(x|z)]` with two diagonal-Gaussian
//!   heads, each fitted by maximum likelihood.
//! * **KLD** – `sup_T E_joint[T] - E_neg[exp(T - 1)]`.
//! * **JSD** – `sup_T E_joint[-sp(-T)] - E_neg[sp(T)] + log 4`, the
//!   Jensen-Shannon bound. Its optimal critic is the log density ratio
//!   `log p(x,y|z) / (p(x|z) p(y|z))`.
//!
//! "Negative" triples `(x~, y, z)` carry an `x~` drawn from `p(x|z)`
//! independently of `y`; they come from a [`NegativeSampler`].

mod estimator;
pub mod losses;

pub use estimator::{train_estimator, EstimatorConfig, EstimatorHandle, Evaluation, TrainReport};
pub use losses::{jsd_loss, kld_loss, vlb_loss, CriticLoss, VlbLoss};

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Vlb,
    Kld,
    Jsd,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [EstimatorKind::Vlb, EstimatorKind::Kld, EstimatorKind::Jsd];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Vlb => "vlb",
            EstimatorKind::Kld => "kld",
            EstimatorKind::Jsd => "jsd",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vlb" => Ok(EstimatorKind::Vlb),
            "kld" => Ok(EstimatorKind::Kld),
            "jsd" => Ok(EstimatorKind::Jsd),
            other => Err(Error::Config(format!("unknown estimator kind `{other}`"))),
        }
    }
}

/// Dimensions of the `x`, `y` and `z` blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CmiDims {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl CmiDims {
    pub fn new(x: usize, y: usize, z: usize) -> Self {
        Self { x, y, z }
    }

    pub fn total(&self) -> usize {
        self.x + self.y + self.z
    }
}

/// A single `(x, y, z)` triple.
#[derive(Debug, Clone, PartialEq)]
pub struct CmiSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

/// Row-aligned batch of triples.
#[derive(Debug, Clone, PartialEq)]
pub struct CmiBatch {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub z: Array2<f64>,
}

impl CmiBatch {
    pub fn new(x: Array2<f64>, y: Array2<f64>, z: Array2<f64>) -> Result<Self> {
        check_dim("batch rows (y)", x.nrows(), y.nrows())?;
        check_dim("batch rows (z)", x.nrows(), z.nrows())?;
        Ok(Self { x, y, z })
    }

    pub fn from_samples(samples: &[CmiSample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Config("empty sample list".into()))?;
        let dims = CmiDims::new(first.x.len(), first.y.len(), first.z.len());
        let mut x = Array2::zeros((samples.len(), dims.x));
        let mut y = Array2::zeros((samples.len(), dims.y));
        let mut z = Array2::zeros((samples.len(), dims.z));
        for (i, s) in samples.iter().enumerate() {
            check_dim("sample x", dims.x, s.x.len())?;
            check_dim("sample y", dims.y, s.y.len())?;
            check_dim("sample z", dims.z, s.z.len())?;
            x.row_mut(i).assign(&ArrayView2::from_shape((1, dims.x), &s.x).unwrap().row(0));
            y.row_mut(i).assign(&ArrayView2::from_shape((1, dims.y), &s.y).unwrap().row(0));
            z.row_mut(i).assign(&ArrayView2::from_shape((1, dims.z), &s.z).unwrap().row(0));
        }
        Ok(Self { x, y, z })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> CmiDims {
        CmiDims::new(self.x.ncols(), self.y.ncols(), self.z.ncols())
    }

    pub fn sample(&self, i: usize) -> CmiSample {
        CmiSample {
            x: self.x.row(i).to_vec(),
            y: self.y.row(i).to_vec(),
            z: self.z.row(i).to_vec(),
        }
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), idx),
            y: self.y.select(Axis(0), idx),
            z: self.z.select(Axis(0), idx),
        }
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            x: self.x.slice(s![start..end, ..]).to_owned(),
            y: self.y.slice(s![start..end, ..]).to_owned(),
            z: self.z.slice(s![start..end, ..]).to_owned(),
        }
    }

    /// Same triples with `x` replaced, e.g. by negatives.
    pub fn with_x(&self, x: Array2<f64>) -> Result<Self> {
        Self::new(x, self.y.clone(), self.z.clone())
    }
}

/// Produces `x~ ~ p(x | z)` independent of `y` for every row of a batch.
pub trait NegativeSampler {
    fn negatives(&self, batch: &CmiBatch, rng: &mut Rng) -> Array2<f64>;
}

impl<F> NegativeSampler for F
where
    F: Fn(&CmiBatch, &mut Rng) -> Array2<f64>,
{
    fn negatives(&self, batch: &CmiBatch, rng: &mut Rng) -> Array2<f64> {
        self(batch, rng)
    }
}

/// Negatives by permuting `x` among rows that share the same `z` row.
///
/// Only valid when `z` takes few distinct values (tabular data); each
/// group is permuted independently.
#[derive(Debug, Clone, Copy, Default)]
pub struct WithinContextShuffle;

impl NegativeSampler for WithinContextShuffle {
    fn negatives(&self, batch: &CmiBatch, rng: &mut Rng) -> Array2<f64> {
        use rand::seq::SliceRandom;
        use std::collections::BTreeMap;
        let mut groups: BTreeMap<Vec<u64>, Vec<usize>> = BTreeMap::new();
        for (i, row) in batch.z.rows().into_iter().enumerate() {
            groups.entry(row.iter().map(|v| v.to_bits()).collect()).or_default().push(i);
        }
        let mut out = batch.x.clone();
        for rows in groups.values() {
            let mut perm = rows.clone();
            perm.shuffle(rng);
            for (&dst, &src) in rows.iter().zip(&perm) {
                out.row_mut(dst).assign(&batch.x.row(src));
            }
        }
        out
    }
}
