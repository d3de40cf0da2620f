//! Separable 2-D DFT and high-frequency coefficient selection.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::{cos, sin};
pub use num_complex::Complex64 as Complex;

use crate::error::{Error, Result};
use crate::grid::{Cell, Grid};

fn twiddles(n: usize, sign: f64) -> Vec<Complex> {
    (0..n)
        .map(|k| {
            let a = sign * 2.0 * core::f64::consts::PI * k as f64 / n as f64;
            Complex::new(cos(a), sin(a))
        })
        .collect()
}

/// In-place length-`n` DFT of `n` strided values.
fn dft_lines(data: &mut [Complex], n: usize, count: usize, stride: usize, step: usize, tw: &[Complex]) {
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for line in 0..count {
        let base = line * step;
        for (k, out) in buf.iter_mut().enumerate() {
            let mut acc = Complex::new(0.0, 0.0);
            for j in 0..n {
                acc += data[base + j * stride] * tw[(k * j) % n];
            }
            *out = acc;
        }
        for (j, v) in buf.iter().enumerate() {
            data[base + j * stride] = *v;
        }
    }
}

fn transform(mut data: Vec<Complex>, h: usize, w: usize, sign: f64) -> Vec<Complex> {
    dft_lines(&mut data, w, h, 1, w, &twiddles(w, sign));
    dft_lines(&mut data, h, w, w, 1, &twiddles(h, sign));
    data
}

/// Unnormalized forward DFT, `Y[u,v] = sum y[r,c] exp(-2 pi i (u r / H + v c / W))`.
pub fn dft2(grid: &Grid) -> Vec<Complex> {
    let data = grid.values().iter().map(|&v| Complex::new(v, 0.0)).collect();
    transform(data, grid.height(), grid.width(), -1.0)
}

/// Inverse of [`dft2`] including the `1 / (H W)` factor.
pub fn idft2(coeffs: &[Complex], height: usize, width: usize) -> Vec<Complex> {
    let scale = 1.0 / (height * width) as f64;
    let mut out = transform(coeffs.to_vec(), height, width, 1.0);
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

#[inline]
fn centered(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Squared radial frequency of `(u, v)` on centered indices.
#[inline]
pub fn radial_sq(u: usize, v: usize, height: usize, width: usize) -> i64 {
    let a = centered(u, height);
    let b = centered(v, width);
    a * a + b * b
}

/// All frequency indices ordered by decreasing radial frequency, ties broken
/// by ascending `(u, v)`.
pub fn radial_order(height: usize, width: usize) -> Vec<Cell> {
    let mut idx: Vec<Cell> = (0..height)
        .flat_map(|u| (0..width).map(move |v| (u, v)))
        .collect();
    idx.sort_by(|&a, &b| {
        radial_sq(b.0, b.1, height, width)
            .cmp(&radial_sq(a.0, a.1, height, width))
            .then(a.cmp(&b))
    });
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreqSelection {
    pub n_f: usize,
    pub indices: Vec<Cell>,
    pub coeffs: Vec<Complex>,
}

/// The `n_f` highest-frequency DFT coefficients of `map`.
pub fn high_freq_select(map: &Grid, n_f: usize) -> Result<FreqSelection> {
    let (h, w) = map.dims();
    if n_f < 1 || n_f > h * w {
        return Err(Error::Parameter(format!(
            "n_f = {n_f} must be in [1, {}]",
            h * w
        )));
    }
    let spectrum = dft2(map);
    let indices: Vec<Cell> = radial_order(h, w).into_iter().take(n_f).collect();
    let coeffs = indices.iter().map(|&(u, v)| spectrum[u * w + v]).collect();
    Ok(FreqSelection { n_f, indices, coeffs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_grid;

    /// Direct O(N^2) double sum.
    fn naive_dft(g: &Grid) -> Vec<Complex> {
        let (h, w) = g.dims();
        let mut out = Vec::with_capacity(h * w);
        for u in 0..h {
            for v in 0..w {
                let mut acc = Complex::new(0.0, 0.0);
                for r in 0..h {
                    for c in 0..w {
                        let ph = -2.0
                            * core::f64::consts::PI
                            * ((u * r) as f64 / h as f64 + (v * c) as f64 / w as f64);
                        acc += Complex::new(cos(ph), sin(ph)) * g[(r, c)];
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    #[test]
    fn matches_naive_dft_and_inverts() {
        for (h, w) in [(8, 8), (5, 7), (6, 4)] {
            let g = random_grid(h, w, (h * w) as u64);
            let fast = dft2(&g);
            for (a, b) in fast.iter().zip(naive_dft(&g)) {
                assert!((a - b).norm() < 1e-10);
            }
            let back = idft2(&fast, h, w);
            for (a, b) in back.iter().zip(g.values()) {
                assert!((a.re - b).abs() < 1e-12 && a.im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_map_has_no_high_frequency_energy() {
        let g = Grid::filled(8, 8, 0.3);
        let sel = high_freq_select(&g, 63).unwrap();
        assert!(sel.coeffs.iter().all(|c| c.norm() < 1e-12));
        assert!(!sel.indices.contains(&(0, 0)));
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut g = Grid::zeros(8, 8);
        g[(3, 5)] = 1.0;
        let sel = high_freq_select(&g, 20).unwrap();
        for c in sel.coeffs {
            assert!((c.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn selection_matches_full_sort() {
        for seed in 0..10 {
            let g = random_grid(8, 8, seed);
            let spec = naive_dft(&g);
            let mut all: Vec<(f64, Cell, Complex)> = Vec::new();
            for u in 0..8 {
                for v in 0..8 {
                    let fu = if u <= 4 { u as f64 } else { u as f64 - 8.0 };
                    let fv = if v <= 4 { v as f64 } else { v as f64 - 8.0 };
                    all.push(((fu * fu + fv * fv).sqrt(), (u, v), spec[u * 8 + v]));
                }
            }
            all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let sel = high_freq_select(&g, 17).unwrap();
            for (i, (_, idx, c)) in all.iter().take(17).enumerate() {
                assert_eq!(sel.indices[i], *idx);
                assert!((sel.coeffs[i] - c).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn selection_is_linear() {
        let a = random_grid(8, 6, 1);
        let b = random_grid(8, 6, 2);
        let sum = Grid::new(8, 6, a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect()).unwrap();
        let (sa, sb, ss) = (
            high_freq_select(&a, 12).unwrap(),
            high_freq_select(&b, 12).unwrap(),
            high_freq_select(&sum, 12).unwrap(),
        );
        assert_eq!(sa.indices, ss.indices);
        for i in 0..12 {
            assert!((sa.coeffs[i] + sb.coeffs[i] - ss.coeffs[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn bad_counts() {
        let g = Grid::zeros(4, 4);
        assert!(high_freq_select(&g, 0).is_err());
        assert!(high_freq_select(&g, 17).is_err());
    }
}
