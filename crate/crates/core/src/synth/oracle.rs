use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tabular::{tabular_cmi, TabularJoint, TabularNegatives};
use crate::error::{Error, Result};
use crate::mi::{train_estimator, CmiDims, EstimatorConfig, EstimatorHandle, EstimatorKind};
use crate::numerics::{derive_seed, rng_from_seed};

/// Named discrete joints with exact conditional MI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleJoint {
    /// `x` independent of `y` given `z`; exact value 0.
    Independent,
    /// `y = (x + z) mod 4` for uniform `x`; exact value `ln 4`.
    Bijection,
    /// Copy channel open in one of two contexts; `0.5 ln 4`.
    Gated,
    /// `y = floor(x / 2)` over four values of `x`; `ln 2`.
    Coarse,
    /// Bijection mixed half-and-half with uniform `y`.
    NoisyBijection,
}

impl OracleJoint {
    pub const ALL: [OracleJoint; 5] = [
        OracleJoint::Independent,
        OracleJoint::Bijection,
        OracleJoint::Gated,
        OracleJoint::Coarse,
        OracleJoint::NoisyBijection,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OracleJoint::Independent => "independent",
            OracleJoint::Bijection => "bijection",
            OracleJoint::Gated => "gated",
            OracleJoint::Coarse => "coarse",
            OracleJoint::NoisyBijection => "noisy_bijection",
        }
    }

    pub fn build(self) -> Result<TabularJoint> {
        match self {
            OracleJoint::Independent => TabularJoint::independent(4, 2),
            OracleJoint::Bijection => TabularJoint::bijection(4, 2),
            OracleJoint::Gated => TabularJoint::gated(4),
            OracleJoint::Coarse => TabularJoint::coarse(2, 2),
            OracleJoint::NoisyBijection => TabularJoint::noisy_bijection(4, 2, 0.5),
        }
    }
}

impl fmt::Display for OracleJoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OracleJoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OracleJoint::ALL
            .into_iter()
            .find(|j| j.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown joint '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub kinds: Vec<EstimatorKind>,
    pub joints: Vec<OracleJoint>,
    pub samples: usize,
    /// Uniform jitter width added to the discrete values.
    pub jitter: f64,
    pub epochs: usize,
    /// Estimates are averaged over these seeds.
    pub seeds: Vec<u64>,
    pub estimator: EstimatorConfig,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            kinds: EstimatorKind::ALL.to_vec(),
            joints: OracleJoint::ALL.to_vec(),
            samples: 20_000,
            jitter: 1.0,
            epochs: 30,
            seeds: vec![0, 1, 2],
            estimator: EstimatorConfig {
                lr: 3e-3,
                batch_size: 64,
                final_lr_fraction: 0.1,
                holdout_fraction: 0.2,
                ..EstimatorConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub joint: OracleJoint,
    pub kind: EstimatorKind,
    pub exact: f64,
    /// Mean held-out estimate over seeds.
    pub estimate: f64,
}

impl OracleRow {
    pub fn abs_error(&self) -> f64 {
        (self.estimate - self.exact).abs()
    }
}

pub const ORACLE_HEADER: &str = "joint,kind,exact,estimate,abs_error";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OracleReport {
    pub rows: Vec<OracleRow>,
}

impl OracleReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(ORACLE_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{},{},{:.6},{:.6},{:.6}\n", r.joint, r.kind, r.exact, r.estimate, r.abs_error()));
        }
        out
    }

    pub fn get(&self, joint: OracleJoint, kind: EstimatorKind) -> Option<&OracleRow> {
        self.rows.iter().find(|r| r.joint == joint && r.kind == kind)
    }
}

/// Held-out estimate of one estimator on one joint and seed.
pub fn oracle_estimate(cfg: &OracleConfig, joint: OracleJoint, kind: EstimatorKind, seed: u64) -> Result<f64> {
    let table = joint.build()?;
    let mut rng = rng_from_seed(derive_seed(seed, joint as u64));
    let data = table.sample(cfg.samples, cfg.jitter, &mut rng);
    let mut handle = EstimatorHandle::new(kind, CmiDims::new(1, 1, 1), cfg.estimator.clone(), &mut rng)?;
    let report = train_estimator(&mut handle, &data, &TabularNegatives::new(&table, cfg.jitter), cfg.epochs, &mut rng)?;
    report
        .final_heldout()
        .map(|e| e.estimate)
        .ok_or_else(|| Error::Config("oracle needs a positive holdout_fraction".into()))
}

/// Every `(joint, kind)` pair, joints outermost.
pub fn run_oracle(cfg: &OracleConfig) -> Result<OracleReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("oracle needs at least one seed".into()));
    }
    let mut report = OracleReport::default();
    for &joint in &cfg.joints {
        let exact = tabular_cmi(&joint.build()?);
        for &kind in &cfg.kinds {
            let mut total = 0.0;
            for &seed in &cfg.seeds {
                total += oracle_estimate(cfg, joint, kind, seed)?;
            }
            report.rows.push(OracleRow {
                joint,
                kind,
                exact,
                estimate: total / cfg.seeds.len() as f64,
            });
        }
    }
    Ok(report)
}
