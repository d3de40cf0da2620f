//! Model-based interpolation: least-squares log-distance pathloss fit and
//! full-grid template upsampling.

use alloc::format;
use alloc::vec::Vec;

use libm::{log10, pow};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{Cell, Grid, SparseSamples, TransmitterSet};
use crate::scene::{distance, TxParams, MIN_DISTANCE};

/// Ridge strength used when the design matrix is rank deficient.
pub const RIDGE_LAMBDA: f64 = 1e-8;

/// Per-transmitter intercept and exponent, in the units of the observations.
#[derive(Debug, Clone, PartialEq)]
pub struct LdplParams {
    pub alpha: Vec<f64>,
    pub theta: Vec<f64>,
}

impl LdplParams {
    pub fn new(alpha: Vec<f64>, theta: Vec<f64>) -> Result<Self> {
        if alpha.len() != theta.len() || alpha.is_empty() {
            return Err(Error::InvalidInput(format!(
                "{} intercepts and {} exponents",
                alpha.len(),
                theta.len()
            )));
        }
        if alpha.iter().chain(&theta).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("pathloss parameters must be finite".into()));
        }
        Ok(Self { alpha, theta })
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Expresses dB-domain generating parameters in `[0, 1]` units for the
    /// `(dmin, dmax)` normalization. The `dmin` offset is split evenly across
    /// transmitters so the dB-sum model maps exactly.
    pub fn from_db(params: &[TxParams], dmin: f64, dmax: f64) -> Self {
        let span = dmax - dmin;
        let n = params.len() as f64;
        Self {
            alpha: params.iter().map(|p| (p.alpha_db - dmin / n) / span).collect(),
            theta: params.iter().map(|p| p.theta / span).collect(),
        }
    }
}

/// How per-transmitter terms are combined.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Aggregation {
    /// Literal sum of per-transmitter terms.
    #[default]
    DbSum,
    /// Each term read as a normalized level under `(dmin, dmax)`, summed as
    /// linear power, and renormalized.
    LinearPower { dmin: f64, dmax: f64 },
}

#[inline]
fn log_distance(tx: Cell, cell: Cell) -> f64 {
    log10(distance(tx, cell).max(MIN_DISTANCE))
}

/// `sum_k (alpha_k - 10 theta_k log10(max(d_k, 0.5)))`.
pub fn ldpl_predict(params: &LdplParams, tx: &TransmitterSet, cell: Cell) -> f64 {
    ldpl_predict_with(params, tx, cell, Aggregation::DbSum)
}

pub fn ldpl_predict_with(
    params: &LdplParams,
    tx: &TransmitterSet,
    cell: Cell,
    mode: Aggregation,
) -> f64 {
    let terms = tx
        .positions()
        .iter()
        .zip(params.alpha.iter().zip(&params.theta))
        .map(|(&t, (&a, &th))| a - 10.0 * th * log_distance(t, cell));
    match mode {
        Aggregation::DbSum => terms.sum(),
        Aggregation::LinearPower { dmin, dmax } => {
            let span = dmax - dmin;
            let linear: f64 = terms.map(|t| pow(10.0, (dmin + t * span) / 10.0)).sum();
            (10.0 * log10(linear) - dmin) / span
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdplFit {
    pub params: LdplParams,
    /// `||x - P(c)||_2` over the observations.
    pub residual_norm: f64,
    /// True when the ridge fallback was needed.
    pub ridge: bool,
    /// True when any fitted exponent is negative.
    pub negative_theta: bool,
}

fn design(samples: &SparseSamples, tx: &TransmitterSet) -> (DMatrix<f64>, DVector<f64>) {
    let nt = tx.len();
    let k = samples.len();
    let mut a = DMatrix::<f64>::zeros(k, 2 * nt);
    for (j, &cell) in samples.coords().iter().enumerate() {
        for (t, &pos) in tx.positions().iter().enumerate() {
            a[(j, t)] = 1.0;
            a[(j, nt + t)] = -10.0 * log_distance(pos, cell);
        }
    }
    (a, DVector::from_column_slice(samples.psd()))
}

fn qr_least_squares(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let n = a.ncols();
    let qr = a.qr();
    let qtb = qr.q().transpose() * b;
    let rhs = qtb.rows(0, n).into_owned();
    qr.r().solve_upper_triangular(&rhs)
}

/// Least-squares fit of the dB-sum pathloss model to the observations.
///
/// Solved by QR. `N_t >= 2` always duplicates the intercept columns, so only
/// their sum is identified; that case (and any other deficiency that leaves
/// `N_t + 1` independent directions) uses a ridge of [`RIDGE_LAMBDA`]. Fewer
/// independent directions than that is reported as underdetermined.
pub fn fit_ldpl(samples: &SparseSamples, tx: &TransmitterSet) -> Result<LdplFit> {
    let nt = tx.len();
    let k = samples.len();
    if k < 2 * nt {
        return Err(Error::Underdetermined(format!(
            "{k} observations cannot fit {} parameters",
            2 * nt
        )));
    }
    let (a, b) = design(samples, tx);
    let n = a.ncols();
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let tol = smax * 1e-10;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    if rank < nt + 1 {
        return Err(Error::Underdetermined(format!(
            "design matrix has rank {rank}; intercept and exponent are not separable"
        )));
    }
    let ridge = rank < n;
    let beta = if ridge {
        let mut aug = DMatrix::<f64>::zeros(k + n, n);
        aug.view_mut((0, 0), (k, n)).copy_from(&a);
        let s = libm::sqrt(RIDGE_LAMBDA);
        for i in 0..n {
            aug[(k + i, i)] = s;
        }
        let mut baug = DVector::<f64>::zeros(k + n);
        baug.rows_mut(0, k).copy_from(&b);
        qr_least_squares(aug, &baug)
    } else {
        qr_least_squares(a.clone(), &b)
    };
    let beta = match beta {
        Some(v) if v.iter().all(|x| x.is_finite()) => v,
        _ => {
            return Err(Error::Numerical(
                "pathloss system is singular even after ridge regularization".into(),
            ))
        }
    };
    let residual_norm = (&a * &beta - &b).norm();
    let params = LdplParams {
        alpha: beta.rows(0, nt).iter().copied().collect(),
        theta: beta.rows(nt, nt).iter().copied().collect(),
    };
    let negative_theta = params.theta.iter().any(|&t| t < 0.0);
    if negative_theta {
        log::warn!("fitted pathloss exponent is negative: {:?}", params.theta);
    }
    Ok(LdplFit {
        params,
        residual_norm,
        ridge,
        negative_theta,
    })
}

/// Sum of squared residuals of `params` on the observations.
pub fn residual_sum_squares(params: &LdplParams, samples: &SparseSamples, tx: &TransmitterSet) -> f64 {
    samples
        .iter()
        .map(|(c, x)| {
            let e = x - ldpl_predict(params, tx, c);
            e * e
        })
        .sum()
}

/// Evaluates the model on every cell and clamps to `[0, 1]`.
pub fn upsample_template(params: &LdplParams, tx: &TransmitterSet, height: usize, width: usize) -> Grid {
    upsample_template_with(params, tx, height, width, Aggregation::DbSum)
}

pub fn upsample_template_with(
    params: &LdplParams,
    tx: &TransmitterSet,
    height: usize,
    width: usize,
    mode: Aggregation,
) -> Grid {
    Grid::from_fn(height, width, |r, c| {
        ldpl_predict_with(params, tx, (r, c), mode).clamp(0.0, 1.0)
    })
}

/// Fit plus upsample in one call.
pub fn mbi_estimate(samples: &SparseSamples, tx: &TransmitterSet, height: usize, width: usize) -> Result<Grid> {
    samples.validate_bounds(height, width)?;
    tx.validate_bounds(height, width)?;
    let fit = fit_ldpl(samples, tx)?;
    Ok(upsample_template(&fit.params, tx, height, width))
}
