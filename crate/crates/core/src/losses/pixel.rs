use alloc::format;
use alloc::vec::Vec;

use libm::sqrt;

use crate::error::{Error, Result};
use crate::grid::{Cell, Grid, SparseSamples};
use crate::sampling::{dft2, idft2, Complex, FreqSelection};

use super::LossTerm;

pub fn l_mse(est: &Grid, target: &Grid) -> Result<LossTerm> {
    est.ensure_same_dims(target)?;
    let n = est.len() as f64;
    let mut value = 0.0;
    let grad = est
        .values()
        .iter()
        .zip(target.values())
        .map(|(a, b)| {
            value += (a - b) * (a - b);
            2.0 * (a - b) / n
        })
        .collect();
    Ok(LossTerm {
        value: value / n,
        grad: Grid::new(est.height(), est.width(), grad)?,
    })
}

/// Sum of squared differences over right and down neighbour pairs.
pub fn l_tv(est: &Grid) -> LossTerm {
    let (h, w) = est.dims();
    let mut grad = Grid::zeros(h, w);
    let mut value = 0.0;
    for r in 0..h {
        for c in 0..w {
            for (nr, nc) in [(r, c + 1), (r + 1, c)] {
                if nr < h && nc < w {
                    let d = est[(r, c)] - est[(nr, nc)];
                    value += d * d;
                    grad[(r, c)] += 2.0 * d;
                    grad[(nr, nc)] -= 2.0 * d;
                }
            }
        }
    }
    LossTerm { value, grad }
}

#[inline]
fn neighbours(cell: Cell, h: usize, w: usize) -> [Option<Cell>; 4] {
    let (r, c) = cell;
    [
        r.checked_sub(1).map(|r| (r, c)),
        (r + 1 < h).then_some((r + 1, c)),
        (c + 1 < w).then_some((r, c + 1)),
        c.checked_sub(1).map(|c| (r, c)),
    ]
}

/// `[up, down, right, left]` differences `map(neighbour) - map(cell)`, zero
/// where the neighbour falls outside the grid.
pub fn grad4(map: &Grid, cell: Cell) -> [f64; 4] {
    let here = map[cell];
    neighbours(cell, map.height(), map.width()).map(|n| n.map_or(0.0, |n| map[n] - here))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientForm {
    /// Mean of `1 - CS` per cell.
    #[default]
    Dissimilarity,
    /// Plain sum of cosine similarities.
    Literal,
}

const CS_EPS: f64 = 1e-8;

fn norm4(v: &[f64; 4]) -> f64 {
    sqrt(v.iter().map(|x| x * x).sum())
}

/// Cosine similarity of two gradient vectors and its derivative with respect
/// to the first.
pub(crate) fn cosine(a: &[f64; 4], b: &[f64; 4]) -> (f64, [f64; 4]) {
    let (na, nb) = (norm4(a), norm4(b));
    if na == 0.0 && nb == 0.0 {
        return (1.0, *b);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let den = na * nb + CS_EPS;
    let cs = dot / den;
    let mut d = [0.0; 4];
    for k in 0..4 {
        d[k] = b[k] / den;
        if na > 0.0 {
            d[k] -= dot * nb * a[k] / (na * den * den);
        }
    }
    (cs, d)
}

pub fn l_gradient(est: &Grid, template: &Grid, form: GradientForm) -> Result<LossTerm> {
    est.ensure_same_dims(template)?;
    let (h, w) = est.dims();
    let scale = match form {
        GradientForm::Dissimilarity => -1.0 / (h * w) as f64,
        GradientForm::Literal => 1.0,
    };
    let mut grad = Grid::zeros(h, w);
    let mut total = 0.0;
    for r in 0..h {
        for c in 0..w {
            let a = grad4(est, (r, c));
            let b = grad4(template, (r, c));
            let (cs, d) = cosine(&a, &b);
            total += cs;
            for (k, n) in neighbours((r, c), h, w).into_iter().enumerate() {
                if let Some(n) = n {
                    grad[n] += scale * d[k];
                    grad[(r, c)] -= scale * d[k];
                }
            }
        }
    }
    let value = match form {
        GradientForm::Dissimilarity => 1.0 - total / (h * w) as f64,
        GradientForm::Literal => total,
    };
    Ok(LossTerm { value, grad })
}

/// MSE restricted to the downsampled observation cells.
pub fn l_geo(est: &Grid, samples_down: &SparseSamples) -> Result<LossTerm> {
    if samples_down.is_empty() {
        return Err(Error::InvalidInput("geometric loss needs at least one observation".into()));
    }
    samples_down.validate_bounds(est.height(), est.width())?;
    let n = samples_down.len() as f64;
    let mut grad = Grid::zeros(est.height(), est.width());
    let mut value = 0.0;
    for (cell, x) in samples_down.iter() {
        let d = est[cell] - x;
        value += d * d;
        grad[cell] = 2.0 * d / n;
    }
    Ok(LossTerm { value: value / n, grad })
}

/// Frequency loss against precomputed target coefficients.
pub fn l_hpf_selected(est: &Grid, target: &FreqSelection) -> Result<LossTerm> {
    let (h, w) = est.dims();
    if target.indices.iter().any(|&(u, v)| u >= h || v >= w) {
        return Err(Error::InvalidInput(format!(
            "frequency selection does not fit a {h}x{w} map"
        )));
    }
    let spectrum = dft2(est);
    let mut masked = alloc::vec![Complex::new(0.0, 0.0); h * w];
    let mut value = 0.0;
    for (&(u, v), &t) in target.indices.iter().zip(&target.coeffs) {
        let d = spectrum[u * w + v] - t;
        value += d.norm_sqr();
        masked[u * w + v] = d;
    }
    let nf = target.n_f as f64;
    let scale = (h * w) as f64 / nf;
    let grad: Vec<f64> = idft2(&masked, h, w).iter().map(|z| z.re * scale).collect();
    Ok(LossTerm {
        value: value / (2.0 * nf),
        grad: Grid::new(h, w, grad)?,
    })
}

pub fn l_hpf(est: &Grid, target: &Grid, n_f: usize) -> Result<LossTerm> {
    est.ensure_same_dims(target)?;
    l_hpf_selected(est, &crate::sampling::high_freq_select(target, n_f)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{fd_gradient, random_grid, rel_err};
    use alloc::vec;

    fn check_fd(est: &Grid, tol: f64, f: impl Fn(&Grid) -> LossTerm) {
        let analytic = f(est).grad;
        let (h, w) = est.dims();
        let numeric = fd_gradient(est.values(), 1e-4, |x| f(&Grid::new(h, w, x.to_vec()).unwrap()).value);
        let e = rel_err(analytic.values(), &numeric);
        assert!(e < tol, "rel err {e}");
    }

    #[test]
    fn mse_values() {
        let y = Grid::zeros(1, 2);
        let t = l_mse(&Grid::filled(1, 2, 1.0), &y).unwrap();
        assert_eq!(t.value, 1.0);
        let z = l_mse(&y, &y).unwrap();
        assert_eq!(z.value, 0.0);
        assert!(z.grad.values().iter().all(|&g| g == 0.0));
        assert!(l_mse(&y, &Grid::zeros(2, 1)).is_err());
    }

    #[test]
    fn tv_values() {
        assert_eq!(l_tv(&Grid::filled(5, 4, 0.3)).value, 0.0);
        assert_eq!(l_tv(&Grid::new(1, 2, vec![0.0, 1.0]).unwrap()).value, 1.0);
    }

    #[test]
    fn grad4_conventions() {
        let ramp = Grid::from_fn(3, 3, |r, _| r as f64);
        assert_eq!(grad4(&ramp, (1, 1)), [-1.0, 1.0, 0.0, 0.0]);
        let g = random_grid(3, 3, 1);
        let corner = grad4(&g, (0, 0));
        assert_eq!(corner[0], 0.0);
        assert_eq!(corner[3], 0.0);
        assert_eq!(grad4(&Grid::filled(3, 3, 0.5), (1, 1)), [0.0; 4]);
    }

    #[test]
    fn gradient_loss_alignment() {
        let z = random_grid(8, 8, 3);
        assert!(l_gradient(&z, &z, GradientForm::Dissimilarity).unwrap().value.abs() < 1e-7);
        let flipped = z.map(|v| 1.0 - v);
        let v = l_gradient(&flipped, &z, GradientForm::Dissimilarity).unwrap().value;
        assert!((v - 2.0).abs() < 1e-6);
        let lit = l_gradient(&z, &z, GradientForm::Literal).unwrap().value;
        assert!((lit - 64.0).abs() < 1e-5);
    }

    #[test]
    fn geo_values_and_support() {
        let s = SparseSamples::new(vec![(1, 2)], vec![0.5]).unwrap();
        let mut est = Grid::zeros(4, 4);
        est[(1, 2)] = 0.7;
        let t = l_geo(&est, &s).unwrap();
        assert!((t.value - 0.04).abs() < 1e-15);
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(t.grad[(r, c)] != 0.0, (r, c) == (1, 2));
            }
        }
        est[(1, 2)] = 0.5;
        assert_eq!(l_geo(&est, &s).unwrap().value, 0.0);
    }

    #[test]
    fn hpf_ignores_constant_offsets() {
        let y = random_grid(8, 8, 5);
        assert!(l_hpf(&y, &y, 16).unwrap().value < 1e-24);
        let shifted = y.map(|v| v + 0.25);
        assert!(l_hpf(&shifted, &y, 63).unwrap().value < 1e-20);
    }

    #[test]
    fn finite_difference_gradients() {
        for seed in 0..20 {
            let a = random_grid(8, 8, seed);
            let b = random_grid(8, 8, seed + 100);
            check_fd(&a, 1e-5, |x| l_mse(x, &b).unwrap());
            check_fd(&a, 1e-5, l_tv);
            check_fd(&a, 1e-4, |x| l_gradient(x, &b, GradientForm::Dissimilarity).unwrap());
            check_fd(&a, 1e-4, |x| l_gradient(x, &b, GradientForm::Literal).unwrap());
            check_fd(&a, 1e-4, |x| l_hpf(x, &b, 16).unwrap());
            let s = crate::sampling::sample_uniform(&b, 0.2, seed).unwrap();
            check_fd(&a, 1e-5, |x| l_geo(x, &s).unwrap());
        }
    }
}
