use rayon::prelude::*;

use crate::error::{Error, Result};

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `exp(-gamma * |a - b|^2)`.
pub fn rbf_kernel(a: &[f64], b: &[f64], gamma: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} features", a.len()),
            actual: format!("{} features", b.len()),
        });
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("kernel gamma must be > 0, got {gamma}")));
    }
    Ok((-gamma * sq_dist(a, b)).exp())
}

/// Largest training set for which the full Gram matrix is materialized
/// (8 * 4096^2 bytes = 128 MiB). Beyond it rows are computed on demand.
const DENSE_LIMIT: usize = 4096;

/// Kernel rows over the training points.
pub(crate) enum Gram<'a> {
    Dense { n: usize, data: Vec<f64> },
    OnDemand { points: &'a [Vec<f64>], gamma: f64 },
}

impl<'a> Gram<'a> {
    pub(crate) fn new(points: &'a [Vec<f64>], gamma: f64) -> Self {
        let n = points.len();
        if n > DENSE_LIMIT {
            return Gram::OnDemand { points, gamma };
        }
        let data: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                points
                    .iter()
                    .map(move |pj| (-gamma * sq_dist(&points[i], pj)).exp())
            })
            .collect();
        Gram::Dense { n, data }
    }

    pub(crate) fn len(&self) -> usize {
        match self {
            Gram::Dense { n, .. } => *n,
            Gram::OnDemand { points, .. } => points.len(),
        }
    }

    /// Writes row `i` into `out` (or borrows it, for the dense case).
    pub(crate) fn row<'b>(&'b self, i: usize, out: &'b mut Vec<f64>) -> &'b [f64] {
        match self {
            Gram::Dense { n, data } => &data[i * n..(i + 1) * n],
            Gram::OnDemand { points, gamma } => {
                out.clear();
                out.extend(points.iter().map(|p| (-gamma * sq_dist(&points[i], p)).exp()));
                out
            }
        }
    }

    pub(crate) fn diag(&self, _i: usize) -> f64 {
        // exp(0)
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rbf_values() {
        let x = [0.3, -1.2, 4.0];
        assert_eq!(rbf_kernel(&x, &x, 0.7).unwrap(), 1.0);
        // |a - b|^2 = 2, gamma = 0.5 -> e^-1
        let k = rbf_kernel(&[1.0, 0.0], &[0.0, 1.0], 0.5).unwrap();
        assert!((k - (-1.0f64).exp()).abs() < 1e-15);
        assert!((k - 0.367879).abs() < 1e-6);
        assert!(rbf_kernel(&[1.0], &[1.0, 2.0], 1.0).is_err());
        assert!(rbf_kernel(&[1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn rbf_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let a: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
            let g = rng.random_range(0.01..2.0);
            let (ab, ba) = (rbf_kernel(&a, &b, g).unwrap(), rbf_kernel(&b, &a, g).unwrap());
            assert!((ab - ba).abs() <= 1e-15);
            assert!(ab > 0.0 && ab <= 1.0);
        }
    }

    #[test]
    fn dense_and_on_demand_rows_agree() {
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 0.3, 1.0 - i as f64]).collect();
        let dense = Gram::new(&pts, 0.4);
        let lazy = Gram::OnDemand { points: &pts, gamma: 0.4 };
        let (mut a, mut b) = (vec![], vec![]);
        for i in 0..5 {
            assert_eq!(dense.row(i, &mut a), lazy.row(i, &mut b));
        }
    }
}
