use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

const STD_FLOOR: f64 = 1e-8;
const CLIP: f64 = 5.0;

/// Running mean / variance (Welford) used to standardise reward streams.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningNorm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Population variance; zero before the first sample.
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0)
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Standardises against the current statistics, clipped to [-5, 5].
    pub fn normalize(&self, x: f64) -> f64 {
        ((x - self.mean) / self.std().max(STD_FLOOR)).clamp(-CLIP, CLIP)
    }

    /// Update with `x`, then normalise it.
    pub fn observe(&mut self, x: f64) -> f64 {
        self.update(x);
        self.normalize(x)
    }
}

/// Independent [`RunningNorm`] per column, for observation vectors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VecNorm {
    pub dims: Vec<RunningNorm>,
}

impl VecNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            dims: vec![RunningNorm::new(); dim],
        }
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn update_rows(&mut self, rows: ArrayView2<'_, f64>) {
        assert_eq!(rows.ncols(), self.dims.len(), "normaliser width");
        for row in rows.rows() {
            for (n, &v) in self.dims.iter_mut().zip(row) {
                n.update(v);
            }
        }
    }

    pub fn normalize_rows(&self, rows: ArrayView2<'_, f64>) -> Array2<f64> {
        assert_eq!(rows.ncols(), self.dims.len(), "normaliser width");
        let mut out = rows.to_owned();
        for mut row in out.rows_mut() {
            for (v, n) in row.iter_mut().zip(&self.dims) {
                *v = n.normalize(*v);
            }
        }
        out
    }

    pub fn normalize_slice(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().zip(&self.dims).map(|(&v, n)| n.normalize(v)).collect()
    }

    /// Sub-normaliser over a contiguous column range.
    pub fn columns(&self, range: std::ops::Range<usize>) -> VecNorm {
        VecNorm {
            dims: self.dims[range].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_stream_normalises_to_zero() {
        let mut n = RunningNorm::new();
        for _ in 0..3 {
            assert_eq!(n.observe(7.0), 0.0);
        }
    }

    #[test]
    fn two_point_stream() {
        let mut n = RunningNorm::new();
        assert_eq!(n.observe(0.0), 0.0);
        assert!((n.observe(2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_sample_hits_floor() {
        let mut n = RunningNorm::new();
        assert_eq!(n.observe(-3.5), 0.0);
    }

    #[test]
    fn output_is_clamped() {
        let mut n = RunningNorm::new();
        for _ in 0..100 {
            n.update(0.0);
        }
        n.update(1.0);
        assert_eq!(n.normalize(1e6), 5.0);
        assert_eq!(n.normalize(-1e6), -5.0);
    }

    proptest! {
        #[test]
        fn matches_two_pass_variance(xs in prop::collection::vec(-1e3f64..1e3, 2..200)) {
            let mut n = RunningNorm::new();
            for &x in &xs { n.update(x); }
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
            prop_assert!((n.mean - mean).abs() < 1e-9);
            prop_assert!((n.variance() - var).abs() < 1e-10 * var.max(1.0));
        }
    }

    #[test]
    fn vector_norm_is_per_column() {
        let mut n = VecNorm::new(2);
        n.update_rows(ndarray::array![[0.0, 10.0], [2.0, 10.0]].view());
        let out = n.normalize_rows(ndarray::array![[2.0, 10.0]].view());
        assert!((out[[0, 0]] - 1.0).abs() < 1e-15);
        assert_eq!(out[[0, 1]], 0.0);
        assert_eq!(n.columns(1..2).normalize_slice(&[10.0]), vec![0.0]);
    }
}
