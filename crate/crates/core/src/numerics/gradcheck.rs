//! Central finite differences for verifying hand-written gradients.

/// Central-difference gradient of `f` at `point`.
pub fn central_difference<F>(mut f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = point.to_vec();
    (0..point.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `||a - b|| / max(||a|| + ||b||, 1e-12)` over whole vectors.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm_a: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_b: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (norm_a + norm_b).max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let g = central_difference(|p| p[0] * p[0] + 3.0 * p[1], &[2.0, -1.0], 1e-5);
        assert!(relative_error(&g, &[4.0, 3.0]) < 1e-9);
    }
}
