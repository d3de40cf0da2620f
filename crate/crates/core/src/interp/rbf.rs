use alloc::format;
use alloc::vec::Vec;

use libm::{exp, log, sqrt};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{Cell, Grid, SparseSamples};

use super::cell_distance;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbfKernel {
    /// `exp(-(eps r)^2)`
    Gaussian,
    /// `sqrt(1 + (eps r)^2)`
    Multiquadric,
    /// `r^2 ln r`
    ThinPlate,
}

impl RbfKernel {
    #[inline]
    pub fn eval(self, r: f64, eps: f64) -> f64 {
        match self {
            RbfKernel::Gaussian => exp(-(eps * r) * (eps * r)),
            RbfKernel::Multiquadric => sqrt(1.0 + (eps * r) * (eps * r)),
            RbfKernel::ThinPlate => {
                if r == 0.0 {
                    0.0
                } else {
                    r * r * log(r)
                }
            }
        }
    }
}

/// Fitted RBF expansion `sum_i w_i phi(||x - c_i||)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfModel {
    kernel: RbfKernel,
    eps: f64,
    centers: Vec<Cell>,
    weights: Vec<f64>,
}

impl RbfModel {
    /// Solves `(Phi + ridge I) w = x` by LU with partial pivoting.
    pub fn fit(samples: &SparseSamples, kernel: RbfKernel, eps: f64, ridge: f64) -> Result<Self> {
        let k = samples.len();
        if k == 0 {
            return Err(Error::Estimator("RBF needs at least one observation".into()));
        }
        let c = samples.coords();
        let phi = DMatrix::from_fn(k, k, |i, j| {
            kernel.eval(cell_distance(c[i], c[j]), eps) + if i == j { ridge } else { 0.0 }
        });
        let rhs = DVector::from_column_slice(samples.psd());
        let solved = phi.clone().lu().solve(&rhs);
        match solved {
            Some(w) if w.iter().all(|v| v.is_finite()) => Ok(Self {
                kernel,
                eps,
                centers: c.to_vec(),
                weights: w.iter().copied().collect(),
            }),
            _ => {
                let sv = phi.svd(false, false).singular_values;
                let max = sv.iter().copied().fold(0.0, f64::max);
                let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
                Err(Error::Numerical(format!(
                    "RBF system is singular (condition estimate {:.3e})",
                    max / min
                )))
            }
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn predict(&self, cell: Cell) -> f64 {
        self.centers
            .iter()
            .zip(&self.weights)
            .map(|(&c, &w)| w * self.kernel.eval(cell_distance(c, cell), self.eps))
            .sum()
    }
}

/// Shape parameter from the mean spacing of the observations: the inverse of
/// `sqrt(bounding-box area / K)`, with each box side at least one cell.
pub fn default_shape_eps(samples: &SparseSamples) -> f64 {
    let coords = samples.coords();
    if coords.is_empty() {
        return 1.0;
    }
    let side = |f: fn(&Cell) -> usize| {
        let lo = coords.iter().map(f).min().unwrap_or(0);
        let hi = coords.iter().map(f).max().unwrap_or(0);
        ((hi - lo) as f64).max(1.0)
    };
    let area = side(|c| c.0) * side(|c| c.1);
    1.0 / sqrt(area / coords.len() as f64)
}

pub fn rbf_interpolate(
    samples: &SparseSamples,
    kernel: RbfKernel,
    eps: f64,
    ridge: f64,
    dims: (usize, usize),
) -> Result<Grid> {
    samples.validate_bounds(dims.0, dims.1)?;
    let model = RbfModel::fit(samples, kernel, eps, ridge)?;
    Ok(Grid::from_fn(dims.0, dims.1, |r, c| model.predict((r, c))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_eps_from_spacing() {
        let s = SparseSamples::new(alloc::vec![(0, 0), (0, 10), (10, 0), (10, 10)], alloc::vec![0.0; 4]).unwrap();
        assert!((default_shape_eps(&s) - 0.2).abs() < 1e-15);
        let line = SparseSamples::new(alloc::vec![(3, 0), (3, 8)], alloc::vec![0.0; 2]).unwrap();
        assert!((default_shape_eps(&line) - 0.5).abs() < 1e-15);
    }
    use crate::sampling::sample_uniform;
    use crate::testutil::random_grid;
    use alloc::vec;

    #[test]
    fn single_center_closed_form() {
        let s = SparseSamples::new(vec![(2, 3)], vec![0.6]).unwrap();
        let g = rbf_interpolate(&s, RbfKernel::Gaussian, 0.3, 0.0, (6, 6)).unwrap();
        for r in 0..6 {
            for c in 0..6 {
                let d2 = ((r as f64 - 2.0).powi(2) + (c as f64 - 3.0).powi(2)) * 0.09;
                assert!((g[(r, c)] - 0.6 * (-d2).exp()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn reproduces_observations_without_ridge() {
        let gt = random_grid(16, 16, 2);
        let s = sample_uniform(&gt, 0.08, 1).unwrap();
        for kernel in [RbfKernel::Gaussian, RbfKernel::Multiquadric, RbfKernel::ThinPlate] {
            let m = RbfModel::fit(&s, kernel, 0.5, 0.0).unwrap();
            for (c, x) in s.iter() {
                assert!((m.predict(c) - x).abs() < 1e-8, "{kernel:?}");
            }
        }
    }

    #[test]
    fn empty_is_an_error() {
        assert!(rbf_interpolate(&SparseSamples::empty(), RbfKernel::Gaussian, 1.0, 0.0, (2, 2)).is_err());
    }

    #[test]
    fn singular_system_reports_condition() {
        // thin-plate with two points at distance 1: phi(1) = 0 and phi(0) = 0
        let s = SparseSamples::new(vec![(0, 0), (0, 1)], vec![0.1, 0.2]).unwrap();
        let err = RbfModel::fit(&s, RbfKernel::ThinPlate, 1.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::Numerical(ref m) if m.contains("condition")));
    }
}
