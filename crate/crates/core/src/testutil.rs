use alloc::vec::Vec;
use rand::Rng as _;

use crate::grid::Grid;
use crate::rng::rng;

pub fn random_grid(h: usize, w: usize, seed: u64) -> Grid {
    let mut r = rng(seed ^ 0x5eed);
    Grid::from_fn(h, w, |_, _| r.random_range(0.0..1.0))
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Norm-wise relative error between an analytic and a numeric gradient.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>();
    let na: f64 = analytic.iter().map(|a| a * a).sum();
    let nb: f64 = numeric.iter().map(|a| a * a).sum();
    libm::sqrt(diff) / libm::sqrt(na).max(libm::sqrt(nb)).max(1e-12)
}
