use alloc::format;
use alloc::vec::Vec;

use libm::{exp, log};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{Cell, Grid, SparseSamples};

use super::cell_distance;

/// Exponential semivariogram `nugget + sill (1 - exp(-d / range))` for
/// `d > 0`, with `gamma(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariogramModel {
    pub nugget: f64,
    pub sill: f64,
    pub range_param: f64,
}

impl VariogramModel {
    #[inline]
    pub fn gamma(&self, d: f64) -> f64 {
        if d == 0.0 {
            0.0
        } else {
            self.nugget + self.sill * (1.0 - exp(-d / self.range_param))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagBin {
    pub mean_distance: f64,
    pub mean_gamma: f64,
    pub pairs: usize,
}

/// Neighbourhood used when solving the kriging system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Neighborhood {
    Global,
    Nearest(usize),
    /// Global up to 512 samples, otherwise the 64 nearest.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrigingConfig {
    pub n_lag_bins: usize,
    pub neighborhood: Neighborhood,
}

impl Default for KrigingConfig {
    fn default() -> Self {
        Self {
            n_lag_bins: 12,
            neighborhood: Neighborhood::Auto,
        }
    }
}

/// Non-empty lag bins over `(0, max_dist / 2]`.
pub fn empirical_semivariogram(samples: &SparseSamples, n_lag_bins: usize) -> Result<Vec<LagBin>> {
    if n_lag_bins == 0 {
        return Err(Error::Parameter("n_lag_bins must be positive".into()));
    }
    let c = samples.coords();
    let x = samples.psd();
    let mut max_d: f64 = 0.0;
    for i in 0..c.len() {
        for j in i + 1..c.len() {
            max_d = max_d.max(cell_distance(c[i], c[j]));
        }
    }
    let max_lag = max_d / 2.0;
    if max_lag <= 0.0 {
        return Ok(Vec::new());
    }
    let width = max_lag / n_lag_bins as f64;
    let mut acc = alloc::vec![(0.0, 0.0, 0usize); n_lag_bins];
    for i in 0..c.len() {
        for j in i + 1..c.len() {
            let d = cell_distance(c[i], c[j]);
            if d > max_lag {
                continue;
            }
            let b = ((d / width) as usize).min(n_lag_bins - 1);
            let diff = x[i] - x[j];
            acc[b].0 += d;
            acc[b].1 += 0.5 * diff * diff;
            acc[b].2 += 1;
        }
    }
    Ok(acc
        .into_iter()
        .filter(|a| a.2 > 0)
        .map(|(d, g, n)| LagBin {
            mean_distance: d / n as f64,
            mean_gamma: g / n as f64,
            pairs: n,
        })
        .collect())
}

/// Least-squares nugget and sill for a fixed range, both clamped at zero.
fn fit_linear(bins: &[LagBin], range: f64) -> (f64, f64, f64) {
    let n = bins.len() as f64;
    let f: Vec<f64> = bins.iter().map(|b| 1.0 - exp(-b.mean_distance / range)).collect();
    let g: Vec<f64> = bins.iter().map(|b| b.mean_gamma).collect();
    let (sf, sg) = (f.iter().sum::<f64>(), g.iter().sum::<f64>());
    let sff: f64 = f.iter().map(|v| v * v).sum();
    let sfg: f64 = f.iter().zip(&g).map(|(a, b)| a * b).sum();
    let det = n * sff - sf * sf;
    let (mut nugget, mut sill) = if det.abs() > 1e-14 {
        ((sff * sg - sf * sfg) / det, (n * sfg - sf * sg) / det)
    } else {
        (0.0, if sff > 0.0 { sfg / sff } else { 0.0 })
    };
    if nugget < 0.0 {
        nugget = 0.0;
        sill = if sff > 0.0 { sfg / sff } else { 0.0 };
    }
    if sill < 0.0 {
        sill = 0.0;
        nugget = (sg / n).max(0.0);
    }
    let sse = f
        .iter()
        .zip(&g)
        .map(|(fi, gi)| { let e = nugget + sill * fi - gi; e * e })
        .sum();
    (nugget, sill, sse)
}

/// Fits the exponential model by a log-spaced range search followed by
/// golden-section refinement; nugget and sill are solved linearly per range.
pub fn fit_exponential(bins: &[LagBin]) -> Option<VariogramModel> {
    if bins.is_empty() {
        return None;
    }
    let max_d = bins.iter().map(|b| b.mean_distance).fold(0.0, f64::max);
    if max_d <= 0.0 {
        return None;
    }
    const STEPS: usize = 200;
    let (lo, hi) = (log(max_d / 100.0), log(max_d * 10.0));
    let at = |i: usize| lo + (hi - lo) * i as f64 / (STEPS - 1) as f64;
    let sse = |t: f64| fit_linear(bins, exp(t)).2;
    let mut best = 0;
    let mut best_sse = f64::INFINITY;
    for i in 0..STEPS {
        let s = sse(at(i));
        if s < best_sse {
            best_sse = s;
            best = i;
        }
    }
    let (mut a, mut b) = (at(best.saturating_sub(1)), at((best + 1).min(STEPS - 1)));
    let phi = 0.5 * (libm::sqrt(5.0) - 1.0);
    for _ in 0..60 {
        let m1 = b - phi * (b - a);
        let m2 = a + phi * (b - a);
        if sse(m1) <= sse(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    let mut t = 0.5 * (a + b);
    if sse(t) > best_sse {
        t = at(best);
    }
    let range = exp(t);
    let (nugget, sill, _) = fit_linear(bins, range);
    Some(VariogramModel {
        nugget,
        sill,
        range_param: range,
    })
}

#[derive(Debug, Clone)]
enum Solver {
    Constant(f64),
    Global(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
    Nearest(usize),
}

/// Ordinary kriging with a fitted exponential variogram.
#[derive(Debug, Clone)]
pub struct OrdinaryKriging {
    samples: SparseSamples,
    model: Option<VariogramModel>,
    solver: Solver,
}

const CONSTANT_EPS: f64 = 1e-12;

fn system_matrix(coords: &[Cell], model: &VariogramModel) -> DMatrix<f64> {
    let k = coords.len();
    DMatrix::from_fn(k + 1, k + 1, |i, j| match (i < k, j < k) {
        (true, true) => model.gamma(cell_distance(coords[i], coords[j])),
        (false, false) => 0.0,
        _ => 1.0,
    })
}

fn rhs(coords: &[Cell], model: &VariogramModel, cell: Cell) -> DVector<f64> {
    let k = coords.len();
    DVector::from_fn(k + 1, |i, _| {
        if i < k {
            model.gamma(cell_distance(coords[i], cell))
        } else {
            1.0
        }
    })
}

impl OrdinaryKriging {
    pub fn fit(samples: &SparseSamples, config: KrigingConfig) -> Result<Self> {
        let k = samples.len();
        if k < 3 {
            return Err(Error::Estimator(format!("kriging needs at least 3 observations, got {k}")));
        }
        let x = samples.psd();
        let mean = x.iter().sum::<f64>() / k as f64;
        let spread = x.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        let model = if spread <= CONSTANT_EPS {
            None
        } else {
            fit_exponential(&empirical_semivariogram(samples, config.n_lag_bins)?)
                .filter(|m| m.sill + m.nugget > CONSTANT_EPS)
        };
        let Some(m) = model else {
            return Ok(Self {
                samples: samples.clone(),
                model: None,
                solver: Solver::Constant(mean),
            });
        };
        let solver = match config.neighborhood {
            Neighborhood::Global => Solver::Global(system_matrix(samples.coords(), &m).lu()),
            Neighborhood::Auto if k <= 512 => Solver::Global(system_matrix(samples.coords(), &m).lu()),
            Neighborhood::Auto => Solver::Nearest(64),
            Neighborhood::Nearest(n) => {
                if n < 3 {
                    return Err(Error::Parameter(format!("kriging neighbourhood {n} < 3")));
                }
                Solver::Nearest(n.min(k))
            }
        };
        if let Solver::Global(lu) = &solver {
            if !lu.is_invertible() {
                return Err(Error::Numerical("kriging system is singular".into()));
            }
        }
        Ok(Self {
            samples: samples.clone(),
            model: Some(m),
            solver,
        })
    }

    pub fn model(&self) -> Option<&VariogramModel> {
        self.model.as_ref()
    }

    /// Sample indices, weights and Lagrange multiplier at `cell`.
    pub fn weights(&self, cell: Cell) -> Result<(Vec<usize>, Vec<f64>, f64)> {
        let coords = self.samples.coords();
        match (&self.solver, &self.model) {
            (Solver::Constant(_), _) | (_, None) => {
                let k = coords.len();
                Ok(((0..k).collect(), alloc::vec![1.0 / k as f64; k], 0.0))
            }
            (Solver::Global(lu), Some(m)) => {
                let sol = lu
                    .solve(&rhs(coords, m, cell))
                    .ok_or_else(|| Error::Numerical("kriging solve failed".into()))?;
                let k = coords.len();
                Ok(((0..k).collect(), sol.rows(0, k).iter().copied().collect(), sol[k]))
            }
            (Solver::Nearest(n), Some(m)) => {
                let mut idx: Vec<usize> = (0..coords.len()).collect();
                idx.sort_by(|&a, &b| {
                    cell_distance(coords[a], cell)
                        .total_cmp(&cell_distance(coords[b], cell))
                        .then(a.cmp(&b))
                });
                idx.truncate(*n);
                idx.sort_unstable();
                let local: Vec<Cell> = idx.iter().map(|&i| coords[i]).collect();
                let sol = system_matrix(&local, m)
                    .lu()
                    .solve(&rhs(&local, m, cell))
                    .ok_or_else(|| Error::Numerical("local kriging system is singular".into()))?;
                let k = local.len();
                Ok((idx, sol.rows(0, k).iter().copied().collect(), sol[k]))
            }
        }
    }

    pub fn predict(&self, cell: Cell) -> Result<f64> {
        if let Solver::Constant(c) = self.solver {
            return Ok(c);
        }
        let (idx, w, _) = self.weights(cell)?;
        let x = self.samples.psd();
        Ok(idx.iter().zip(&w).map(|(&i, &wi)| wi * x[i]).sum())
    }
}

pub fn kriging_interpolate(samples: &SparseSamples, n_lag_bins: usize, dims: (usize, usize)) -> Result<Grid> {
    kriging_interpolate_with(
        samples,
        KrigingConfig {
            n_lag_bins,
            ..KrigingConfig::default()
        },
        dims,
    )
}

pub fn kriging_interpolate_with(
    samples: &SparseSamples,
    config: KrigingConfig,
    dims: (usize, usize),
) -> Result<Grid> {
    samples.validate_bounds(dims.0, dims.1)?;
    let model = OrdinaryKriging::fit(samples, config)?;
    let mut out = Grid::zeros(dims.0, dims.1);
    for r in 0..dims.0 {
        for c in 0..dims.1 {
            out[(r, c)] = model.predict((r, c))?;
        }
    }
    Ok(out)
}
