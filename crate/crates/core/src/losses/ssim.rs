use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, pow};

use crate::error::{Error, Result};
use crate::grid::Grid;

use super::LossTerm;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
const FLOOR: f64 = 1e-6;

/// MS-SSIM settings. Exponents are per level, finest first; the luminance
/// exponent applies at the coarsest level.
#[derive(Debug, Clone, PartialEq)]
pub struct SsimConfig {
    pub levels: usize,
    pub cs_exponents: Vec<f64>,
    pub luminance_exponent: f64,
}

impl SsimConfig {
    pub fn uniform(levels: usize) -> Self {
        Self {
            levels,
            cs_exponents: vec![1.0 / levels as f64; levels],
            luminance_exponent: 1.0 / levels as f64,
        }
    }

    pub fn min_size(&self) -> usize {
        (1 << (self.levels.saturating_sub(1))) * 8
    }

    fn validate(&self, h: usize, w: usize) -> Result<()> {
        if self.levels == 0 || self.cs_exponents.len() != self.levels {
            return Err(Error::Parameter(format!(
                "MS-SSIM needs one exponent per level, got {} for {} levels",
                self.cs_exponents.len(),
                self.levels
            )));
        }
        if h.min(w) < self.min_size() {
            return Err(Error::Parameter(format!(
                "{h}x{w} map is too small for {} MS-SSIM levels (need {})",
                self.levels,
                self.min_size()
            )));
        }
        Ok(())
    }
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self::uniform(3)
    }
}

/// Truncated Gaussian window renormalised at the borders, one row per output
/// position: `(first input index, weights)`.
struct Window {
    rows: Vec<(usize, Vec<f64>)>,
}

impl Window {
    fn new(n: usize) -> Self {
        let half = (WINDOW / 2) as isize;
        let g: Vec<f64> = (-half..=half)
            .map(|k| exp(-((k * k) as f64) / (2.0 * SIGMA * SIGMA)))
            .collect();
        let rows = (0..n as isize)
            .map(|i| {
                let lo = (i - half).max(0);
                let hi = (i + half).min(n as isize - 1);
                let w: Vec<f64> = (lo..=hi).map(|j| g[(j - i + half) as usize]).collect();
                let s: f64 = w.iter().sum();
                (lo as usize, w.into_iter().map(|v| v / s).collect())
            })
            .collect();
        Self { rows }
    }
}

struct Filter {
    h: usize,
    w: usize,
    rows: Window,
    cols: Window,
}

impl Filter {
    fn new(h: usize, w: usize) -> Self {
        Self { h, w, rows: Window::new(h), cols: Window::new(w) }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let mut tmp = vec![0.0; h * w];
        for r in 0..h {
            for (c, (lo, wt)) in self.cols.rows.iter().enumerate() {
                tmp[r * w + c] = wt.iter().enumerate().map(|(k, a)| a * x[r * w + lo + k]).sum();
            }
        }
        let mut out = vec![0.0; h * w];
        for (r, (lo, wt)) in self.rows.rows.iter().enumerate() {
            for c in 0..w {
                out[r * w + c] = wt.iter().enumerate().map(|(k, a)| a * tmp[(lo + k) * w + c]).sum();
            }
        }
        out
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let mut tmp = vec![0.0; h * w];
        for (r, (lo, wt)) in self.rows.rows.iter().enumerate() {
            for c in 0..w {
                for (k, a) in wt.iter().enumerate() {
                    tmp[(lo + k) * w + c] += a * y[r * w + c];
                }
            }
        }
        let mut out = vec![0.0; h * w];
        for r in 0..h {
            for (c, (lo, wt)) in self.cols.rows.iter().enumerate() {
                for (k, a) in wt.iter().enumerate() {
                    out[r * w + lo + k] += a * tmp[r * w + c];
                }
            }
        }
        out
    }
}

fn downsample(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (h / 2, w / 2);
    let mut out = vec![0.0; h2 * w2];
    for r in 0..h2 {
        for c in 0..w2 {
            out[r * w2 + c] = 0.25
                * (x[2 * r * w + 2 * c]
                    + x[2 * r * w + 2 * c + 1]
                    + x[(2 * r + 1) * w + 2 * c]
                    + x[(2 * r + 1) * w + 2 * c + 1]);
        }
    }
    out
}

fn downsample_adjoint(g: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (h / 2, w / 2);
    let mut out = vec![0.0; h * w];
    for r in 0..h2 {
        for c in 0..w2 {
            let q = 0.25 * g[r * w2 + c];
            out[2 * r * w + 2 * c] += q;
            out[2 * r * w + 2 * c + 1] += q;
            out[(2 * r + 1) * w + 2 * c] += q;
            out[(2 * r + 1) * w + 2 * c + 1] += q;
        }
    }
    out
}

struct Term {
    mean: f64,
    grad: Option<Vec<f64>>,
}

/// Means of the contrast-structure map and, if requested, the luminance map
/// at one scale, with gradients with respect to `v`.
fn level(u: &[f64], v: &[f64], h: usize, w: usize, luminance: bool, want_grad: bool) -> (Term, Option<Term>) {
    let f = Filter::new(h, w);
    let n = h * w;
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<f64>>();
    let mu = f.apply(u);
    let mv = f.apply(v);
    let euu = f.apply(&prod(u, u));
    let evv = f.apply(&prod(v, v));
    let euv = f.apply(&prod(u, v));
    let (mut cs_total, mut l_total) = (0.0, 0.0);
    let (mut g_mv, mut g_evv, mut g_euv) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut gl_mv = vec![0.0; n];
    for i in 0..n {
        let su = euu[i] - mu[i] * mu[i];
        let sv = evv[i] - mv[i] * mv[i];
        let suv = euv[i] - mu[i] * mv[i];
        let a = 2.0 * suv + C2;
        let b = su + sv + C2;
        cs_total += a / b;
        g_euv[i] = 2.0 / b;
        g_evv[i] = -a / (b * b);
        g_mv[i] = -2.0 * mu[i] / b + 2.0 * mv[i] * a / (b * b);
        if luminance {
            let la = 2.0 * mu[i] * mv[i] + C1;
            let lb = mu[i] * mu[i] + mv[i] * mv[i] + C1;
            l_total += la / lb;
            gl_mv[i] = 2.0 * mu[i] / lb - la * 2.0 * mv[i] / (lb * lb);
        }
    }
    let scale = 1.0 / n as f64;
    let cs_grad = want_grad.then(|| {
        let a = f.adjoint(&g_mv);
        let b = f.adjoint(&g_evv);
        let c = f.adjoint(&g_euv);
        (0..n)
            .map(|i| scale * (a[i] + 2.0 * v[i] * b[i] + u[i] * c[i]))
            .collect()
    });
    let cs = Term { mean: cs_total * scale, grad: cs_grad };
    let l = luminance.then(|| Term {
        mean: l_total * scale,
        grad: want_grad.then(|| f.adjoint(&gl_mv).into_iter().map(|g| g * scale).collect()),
    });
    (cs, l)
}

fn ms_ssim_impl(u: &Grid, v: &Grid, cfg: &SsimConfig, want_grad: bool) -> Result<(f64, Option<Grid>)> {
    u.ensure_same_dims(v)?;
    let (h0, w0) = u.dims();
    cfg.validate(h0, w0)?;
    let mut levels: Vec<(usize, usize, Vec<f64>, Vec<f64>)> = Vec::with_capacity(cfg.levels);
    levels.push((h0, w0, u.values().to_vec(), v.values().to_vec()));
    for _ in 1..cfg.levels {
        let (h, w, a, b) = levels.last().unwrap();
        let (h, w) = (*h, *w);
        let next = (h / 2, w / 2, downsample(a, h, w), downsample(b, h, w));
        levels.push(next);
    }
    // (level, exponent, term)
    let mut factors: Vec<(usize, f64, Term)> = Vec::with_capacity(cfg.levels + 1);
    for (j, (h, w, a, b)) in levels.iter().enumerate() {
        let (cs, l) = level(a, b, *h, *w, j + 1 == cfg.levels, want_grad);
        factors.push((j, cfg.cs_exponents[j], cs));
        if let Some(l) = l {
            factors.push((j, cfg.luminance_exponent, l));
        }
    }
    let value: f64 = factors.iter().map(|(_, e, t)| pow(t.mean.max(FLOOR), *e)).product();
    if !want_grad {
        return Ok((value, None));
    }
    let mut acc: Option<Vec<f64>> = None;
    for j in (0..cfg.levels).rev() {
        let (h, w, _, _) = &levels[j];
        let mut here = vec![0.0; h * w];
        for (_, e, t) in factors.iter().filter(|f| f.0 == j) {
            if t.mean > FLOOR {
                let k = value * e / t.mean;
                here.iter_mut().zip(t.grad.as_ref().unwrap()).for_each(|(a, g)| *a += k * g);
            }
        }
        if let Some(coarse) = acc.take() {
            let up = downsample_adjoint(&coarse, *h, *w);
            here.iter_mut().zip(up).for_each(|(a, b)| *a += b);
        }
        acc = Some(here);
    }
    Ok((value, Some(Grid::new(h0, w0, acc.unwrap())?)))
}

/// Multi-scale structural similarity of two maps on `[0, 1]`.
pub fn ms_ssim(u: &Grid, v: &Grid, cfg: &SsimConfig) -> Result<f64> {
    Ok(ms_ssim_impl(u, v, cfg, false)?.0)
}

/// `1 - ms_ssim(target, est)` with its gradient in `est`.
pub fn l_ssim(est: &Grid, target: &Grid, cfg: &SsimConfig) -> Result<LossTerm> {
    let (value, grad) = ms_ssim_impl(target, est, cfg, true)?;
    Ok(LossTerm {
        value: 1.0 - value,
        grad: grad.unwrap().map(|g| -g),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{fd_gradient, random_grid, rel_err};

    #[test]
    fn filter_adjoint_identity() {
        let f = Filter::new(13, 9);
        let x = random_grid(13, 9, 1);
        let y = random_grid(13, 9, 2);
        let lhs: f64 = f.apply(x.values()).iter().zip(y.values()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.values().iter().zip(f.adjoint(y.values())).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let ones = f.apply(&[1.0; 13 * 9]);
        assert!(ones.iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn identity_symmetry_bound() {
        let cfg = SsimConfig::default();
        for seed in 0..20 {
            let u = random_grid(32, 32, seed);
            let v = random_grid(32, 32, seed + 1000);
            assert_eq!(ms_ssim(&u, &u, &cfg).unwrap(), 1.0);
            let a = ms_ssim(&u, &v, &cfg).unwrap();
            let b = ms_ssim(&v, &u, &cfg).unwrap();
            assert!((a - b).abs() < 1e-12);
            assert!(a <= 1.0);
        }
    }

    #[test]
    fn too_small() {
        let g = Grid::zeros(16, 40);
        assert!(matches!(ms_ssim(&g, &g, &SsimConfig::default()), Err(Error::Parameter(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = SsimConfig::default();
        for seed in 0..3 {
            let y = random_grid(32, 32, seed);
            let est = Grid::from_fn(32, 32, |r, c| (0.7 * y[(r, c)] + 0.3 * ((r + c) % 5) as f64 / 5.0).min(1.0));
            let analytic = l_ssim(&est, &y, &cfg).unwrap().grad;
            let numeric = fd_gradient(est.values(), 1e-5, |x| {
                l_ssim(&Grid::new(32, 32, x.to_vec()).unwrap(), &y, &cfg).unwrap().value
            });
            assert!(rel_err(analytic.values(), &numeric) < 1e-3);
        }
    }
}
