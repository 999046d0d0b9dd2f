use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{s, Array2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::gaussian::{average_theoretical_mi, sample_given_z, sample_synth, theoretical_cmi_vec, SynthConfig, SynthNegatives};
use crate::error::{Error, Result};
use crate::mi::{train_estimator, EstimatorConfig, EstimatorHandle, EstimatorKind, NegativeSampler};
use crate::numerics::{derive_seed, rng_from_seed, Rng};

/// Grid of `(kind, dim, train_size)` cells, each trained once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub kinds: Vec<EstimatorKind>,
    pub dims: Vec<usize>,
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub sigma_z: f64,
    pub noise: f64,
    pub epochs: usize,
    pub estimator: EstimatorConfig,
    /// Fresh context draws the RMSE is computed over.
    pub grid_size: usize,
    /// Joint samples per context used to form each per-context estimate.
    pub samples_per_z: usize,
    /// Fill `wall_seconds`; off by default so reports are byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            kinds: EstimatorKind::ALL.to_vec(),
            dims: vec![1, 2, 3, 4],
            sizes: vec![20_000, 40_000, 60_000],
            seeds: (0..5).collect(),
            sigma_z: 1.0,
            noise: 0.5,
            epochs: 20,
            estimator: EstimatorConfig {
                lr: 3e-3,
                batch_size: 64,
                final_lr_fraction: 0.1,
                ..EstimatorConfig::default()
            },
            grid_size: 2000,
            samples_per_z: 256,
            record_wall_time: false,
        }
    }
}

/// One CSV row. `seed == None` marks the across-seed aggregate row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub kind: EstimatorKind,
    pub dim: usize,
    pub train_size: usize,
    pub seed: Option<u64>,
    /// `NaN` when the cell failed.
    pub rmse: f64,
    pub theoretical_avg_mi: f64,
    pub wall_seconds: f64,
}

impl BenchRow {
    pub fn failed(&self) -> bool {
        !self.rmse.is_finite()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

pub const CSV_HEADER: &str = "kind,dim,train_size,seed,rmse,theoretical_avg_mi,wall_seconds";

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let seed = r.seed.map_or_else(|| "mean".to_string(), |s| s.to_string());
            let rmse = if r.failed() { "failed".to_string() } else { format!("{:.6}", r.rmse) };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.3}",
                r.kind, r.dim, r.train_size, seed, rmse, r.theoretical_avg_mi, r.wall_seconds
            );
        }
        out
    }

    pub fn seed_rows(&self) -> impl Iterator<Item = &BenchRow> {
        self.rows.iter().filter(|r| r.seed.is_some())
    }

    /// Mean RMSE over seeds for a cell (`None` if absent or failed).
    pub fn mean_rmse(&self, kind: EstimatorKind, dim: usize, train_size: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.seed.is_none() && r.kind == kind && r.dim == dim && r.train_size == train_size)
            .map(|r| r.rmse)
            .filter(|v| v.is_finite())
    }

    pub fn any_failed(&self) -> bool {
        self.seed_rows().any(BenchRow::failed)
    }

    /// Human-readable table marking the lowest mean RMSE per `(dim, size)`.
    pub fn summary(&self, kinds: &[EstimatorKind]) -> String {
        let mut cells: Vec<(usize, usize)> = self.rows.iter().filter(|r| r.seed.is_none()).map(|r| (r.dim, r.train_size)).collect();
        cells.sort_unstable();
        cells.dedup();
        let mut out = format!("{:>4} {:>10} {:>8}", "dim", "size", "avg_mi");
        for k in kinds {
            let _ = write!(out, " {:>10}", k.as_str().to_uppercase());
        }
        out.push('\n');
        for (dim, size) in cells {
            let means: Vec<Option<f64>> = kinds.iter().map(|&k| self.mean_rmse(k, dim, size)).collect();
            let best = means
                .iter()
                .enumerate()
                .filter_map(|(i, m)| m.map(|v| (i, v)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i);
            let avg = self
                .rows
                .iter()
                .find(|r| r.dim == dim && r.train_size == size)
                .map_or(f64::NAN, |r| r.theoretical_avg_mi);
            let _ = write!(out, "{dim:>4} {size:>10} {avg:>8.4}");
            for (i, m) in means.iter().enumerate() {
                let cell = match m {
                    Some(v) if Some(i) == best => format!("{v:.4}*"),
                    Some(v) => format!("{v:.4}"),
                    None => "failed".into(),
                };
                let _ = write!(out, " {cell:>10}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn rmse(estimates: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(estimates.len(), truth.len());
    let n = estimates.len().max(1) as f64;
    (estimates.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).sum::<f64>() / n).sqrt()
}

/// Per-context estimates: for each row of `grid`, draw `samples_per_z`
/// joint samples (and negatives) at that context and evaluate the handle.
pub fn estimate_on_grid(
    handle: &EstimatorHandle,
    synth: &SynthConfig,
    grid: &Array2<f64>,
    samples_per_z: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    const CONTEXTS_PER_CHUNK: usize = 64;
    let mut estimates = Vec::with_capacity(grid.nrows());
    let mut start = 0;
    while start < grid.nrows() {
        let end = (start + CONTEXTS_PER_CHUNK).min(grid.nrows());
        let contexts = grid.slice(s![start..end, ..]);
        let z = contexts.to_owned().into_shape_with_order((end - start, 1, grid.ncols())).expect("reshape");
        let z = z
            .broadcast((end - start, samples_per_z, grid.ncols()))
            .expect("broadcast")
            .to_owned()
            .into_shape_with_order(((end - start) * samples_per_z, grid.ncols()))
            .expect("flatten");
        let batch = sample_given_z(synth, z, rng);
        let negatives = (handle.kind != EstimatorKind::Vlb).then(|| SynthNegatives.negatives(&batch, rng));
        for g in 0..end - start {
            let (a, b) = (g * samples_per_z, (g + 1) * samples_per_z);
            let part = batch.slice(a, b);
            let neg = negatives.as_ref().map(|n| n.slice(s![a..b, ..]));
            estimates.push(handle.evaluate(&part, neg)?.estimate);
        }
        start = end;
    }
    Ok(estimates)
}

fn cell_seed(seed: u64, dim: usize, size: usize) -> u64 {
    derive_seed(seed, (dim as u64) << 32 | size as u64)
}

/// Trains one estimator on one cell and returns its RMSE against the
/// closed-form per-context truth.
pub fn run_cell(cfg: &BenchConfig, kind: EstimatorKind, dim: usize, size: usize, seed: u64) -> Result<f64> {
    let synth = SynthConfig {
        dim,
        sigma_z: cfg.sigma_z,
        noise: cfg.noise,
        train_size: size,
        seed,
    };
    synth.validate()?;
    // Data and evaluation grid are shared by all kinds within a cell.
    let mut data_rng = rng_from_seed(cell_seed(seed, dim, size));
    let data = sample_synth(&synth, size, &mut data_rng);
    let normal = Normal::new(0.0, cfg.sigma_z).map_err(|e| Error::Config(e.to_string()))?;
    let grid = Array2::from_shape_simple_fn((cfg.grid_size, dim), || normal.sample(&mut data_rng));
    let truth: Vec<f64> = grid.axis_iter(Axis(0)).map(|z| theoretical_cmi_vec(z.as_slice().unwrap(), cfg.noise)).collect();

    let mut rng = rng_from_seed(derive_seed(cell_seed(seed, dim, size), kind as u64 + 1));
    let dims = crate::mi::CmiDims::new(dim, dim, dim);
    let mut handle = EstimatorHandle::new(kind, dims, cfg.estimator.clone(), &mut rng)?;
    train_estimator(&mut handle, &data, &SynthNegatives, cfg.epochs, &mut rng)?;
    let estimates = estimate_on_grid(&handle, &synth, &grid, cfg.samples_per_z, &mut rng)?;
    if estimates.iter().any(|e| !e.is_finite()) {
        return Err(Error::Diverged {
            epoch: cfg.epochs,
            detail: "non-finite grid estimate".into(),
        });
    }
    Ok(rmse(&estimates, &truth))
}

/// Runs every `(kind, dim, size, seed)` cell. Failures mark the row and
/// the run continues.
pub fn rmse_benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("benchmark needs at least one seed".into()));
    }
    let mut report = BenchReport::default();
    for &dim in &cfg.dims {
        let avg = average_theoretical_mi(&SynthConfig {
            dim,
            sigma_z: cfg.sigma_z,
            noise: cfg.noise,
            ..Default::default()
        });
        for &size in &cfg.sizes {
            for &kind in &cfg.kinds {
                let mut per_seed = Vec::with_capacity(cfg.seeds.len());
                let mut total_wall = 0.0;
                for &seed in &cfg.seeds {
                    let start = Instant::now();
                    let rmse = match run_cell(cfg, kind, dim, size, seed) {
                        Ok(v) => v,
                        Err(e @ (Error::Diverged { .. } | Error::NonFinite { .. })) => {
                            log::warn!("{kind} dim {dim} size {size} seed {seed} failed: {e}");
                            f64::NAN
                        }
                        Err(e) => return Err(e),
                    };
                    let wall = if cfg.record_wall_time { start.elapsed().as_secs_f64() } else { 0.0 };
                    total_wall += wall;
                    log::info!("{kind} dim {dim} size {size} seed {seed}: rmse {rmse:.4}");
                    per_seed.push(rmse);
                    report.rows.push(BenchRow {
                        kind,
                        dim,
                        train_size: size,
                        seed: Some(seed),
                        rmse,
                        theoretical_avg_mi: avg,
                        wall_seconds: wall,
                    });
                }
                report.rows.push(BenchRow {
                    kind,
                    dim,
                    train_size: size,
                    seed: None,
                    rmse: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
                    theoretical_avg_mi: avg,
                    wall_seconds: total_wall,
                });
            }
        }
    }
    Ok(report)
}
