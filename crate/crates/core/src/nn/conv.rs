use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

use super::tensor::Tensor4;

/// `C = alpha A B + beta C` for row-major `m x k` and `k x n` operands given
/// by explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(c.len() >= m * n);
    // SAFETY: the assertions above keep every strided access in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output size and leading padding for "same" padding: `out = ceil(in / s)`,
/// with any odd padding placed at the end.
pub fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    (out, total / 2)
}

/// Shape of a 2-D convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel
    }

    fn col_rows(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }
}

/// Inputs saved by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    shape: ConvShape,
    n: usize,
    in_hw: (usize, usize),
    out_hw: (usize, usize),
    pad: (usize, usize),
    cols: Vec<f64>,
}

fn im2col(x: &[f64], s: &ConvShape, in_hw: (usize, usize), out_hw: (usize, usize), pad: (usize, usize), cols: &mut [f64]) {
    let (h, w) = in_hw;
    let (ho, wo) = out_hw;
    let k = s.kernel;
    let p = ho * wo;
    for ic in 0..s.in_ch {
        let plane = &x[ic * h * w..(ic + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ic * k + ky) * k + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * s.stride + ky) as isize - pad.0 as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s.stride + kx) as isize - pad.1 as isize;
                        *d = if ix >= 0 && ix < w as isize { src[ix as usize] } else { 0.0 };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], s: &ConvShape, in_hw: (usize, usize), out_hw: (usize, usize), pad: (usize, usize), gx: &mut [f64]) {
    let (h, w) = in_hw;
    let (ho, wo) = out_hw;
    let k = s.kernel;
    let p = ho * wo;
    for ic in 0..s.in_ch {
        let plane = &mut gx[ic * h * w..(ic + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ic * k + ky) * k + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * s.stride + ky) as isize - pad.0 as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * s.stride + kx) as isize - pad.1 as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Zero-padded ("same") cross-correlation. `weight` is `[out][in][ky][kx]`.
pub fn conv2d_forward(x: &Tensor4, shape: ConvShape, weight: &[f64], bias: &[f64]) -> Result<(Tensor4, ConvCache)> {
    if x.c != shape.in_ch || weight.len() != shape.weight_len() || bias.len() != shape.out_ch {
        return Err(Error::InvalidInput(format!(
            "conv {shape:?} got input {:?}, {} weights, {} biases",
            x.shape(),
            weight.len(),
            bias.len()
        )));
    }
    if shape.kernel == 0 || shape.stride == 0 {
        return Err(Error::Parameter(format!("conv kernel and stride must be positive: {shape:?}")));
    }
    let (ho, pt) = same_padding(x.h, shape.kernel, shape.stride);
    let (wo, pl) = same_padding(x.w, shape.kernel, shape.stride);
    let p = ho * wo;
    let rows = shape.col_rows();
    let mut cols = vec![0.0; x.n * rows * p];
    let mut y = Tensor4::zeros(x.n, shape.out_ch, ho, wo);
    for i in 0..x.n {
        let col = &mut cols[i * rows * p..(i + 1) * rows * p];
        im2col(x.item(i), &shape, (x.h, x.w), (ho, wo), (pt, pl), col);
        let out = y.item_mut(i);
        for (oc, chunk) in out.chunks_mut(p).enumerate() {
            chunk.fill(bias[oc]);
        }
        gemm(shape.out_ch, rows, p, weight, (rows, 1), col, (p, 1), 1.0, out);
    }
    let cache = ConvCache { shape, n: x.n, in_hw: (x.h, x.w), out_hw: (ho, wo), pad: (pt, pl), cols };
    Ok((y, cache))
}

/// Returns the input gradient and accumulates weight and bias gradients.
pub fn conv2d_backward(cache: &ConvCache, weight: &[f64], gy: &Tensor4, gw: &mut [f64], gb: &mut [f64]) -> Tensor4 {
    let s = cache.shape;
    let (ho, wo) = cache.out_hw;
    let p = ho * wo;
    let rows = s.col_rows();
    assert_eq!(gy.shape(), (cache.n, s.out_ch, ho, wo));
    let mut gx = Tensor4::zeros(cache.n, s.in_ch, cache.in_hw.0, cache.in_hw.1);
    let mut gcols = vec![0.0; rows * p];
    for i in 0..cache.n {
        let g = gy.item(i);
        for (oc, chunk) in g.chunks(p).enumerate() {
            gb[oc] += chunk.iter().sum::<f64>();
        }
        let col = &cache.cols[i * rows * p..(i + 1) * rows * p];
        gemm(s.out_ch, p, rows, g, (p, 1), col, (1, p), 1.0, gw);
        gemm(rows, s.out_ch, p, weight, (1, rows), g, (p, 1), 0.0, &mut gcols);
        col2im(&gcols, &s, cache.in_hw, cache.out_hw, cache.pad, gx.item_mut(i));
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{fd_gradient, rel_err};
    use rand::Rng as _;

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut r = crate::rng::rng(seed);
        (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    /// Direct quadruple loop.
    fn naive(x: &Tensor4, s: ConvShape, w: &[f64], b: &[f64]) -> Tensor4 {
        let (ho, pt) = same_padding(x.h, s.kernel, s.stride);
        let (wo, pl) = same_padding(x.w, s.kernel, s.stride);
        let mut y = Tensor4::zeros(x.n, s.out_ch, ho, wo);
        for n in 0..x.n {
            for oc in 0..s.out_ch {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b[oc];
                        for ic in 0..s.in_ch {
                            for ky in 0..s.kernel {
                                for kx in 0..s.kernel {
                                    let iy = (oy * s.stride + ky) as isize - pt as isize;
                                    let ix = (ox * s.stride + kx) as isize - pl as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                        acc += w[((oc * s.in_ch + ic) * s.kernel + ky) * s.kernel + kx]
                                            * x.data[((n * x.c + ic) * x.h + iy as usize) * x.w + ix as usize];
                                    }
                                }
                            }
                        }
                        y.data[((n * s.out_ch + oc) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn padding_rule() {
        assert_eq!(same_padding(32, 3, 1), (32, 1));
        assert_eq!(same_padding(32, 3, 2), (16, 0));
        assert_eq!(same_padding(8, 4, 2), (4, 1));
        assert_eq!(same_padding(5, 6, 1), (5, 2));
    }

    #[test]
    fn identity_kernel_and_zero_input() {
        let s = ConvShape { in_ch: 2, out_ch: 2, kernel: 1, stride: 1 };
        let x = Tensor4::from_vec(1, 2, 3, 3, rand_vec(18, 1)).unwrap();
        let (y, cache) = conv2d_forward(&x, s, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(y, x);
        let z = Tensor4::zeros(1, 2, 3, 3);
        let (y, cache0) = conv2d_forward(&z, s, &[0.3, 0.1, -0.2, 0.5], &[0.0, 0.0]).unwrap();
        assert!(y.data.iter().all(|&v| v == 0.0));
        let mut gw = [0.0; 4];
        let mut gb = [0.0; 2];
        conv2d_backward(&cache0, &[0.3, 0.1, -0.2, 0.5], &Tensor4::from_vec(1, 2, 3, 3, rand_vec(18, 2)).unwrap(), &mut gw, &mut gb);
        assert_eq!(gw, [0.0; 4]);
        drop(cache);
    }

    #[test]
    fn matches_naive_loops() {
        for (k, stride, h, w) in [(3, 1, 5, 5), (3, 2, 6, 7), (4, 2, 8, 8), (5, 1, 4, 6), (6, 1, 5, 5)] {
            let s = ConvShape { in_ch: 2, out_ch: 3, kernel: k, stride };
            let x = Tensor4::from_vec(2, 2, h, w, rand_vec(4 * h * w, 3)).unwrap();
            let wt = rand_vec(s.weight_len(), 4);
            let b = rand_vec(3, 5);
            let (y, _) = conv2d_forward(&x, s, &wt, &b).unwrap();
            let yn = naive(&x, s, &wt, &b);
            assert_eq!(y.shape(), yn.shape());
            for (a, b) in y.data.iter().zip(&yn.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (k, stride) in [(3, 1), (3, 2), (4, 2)] {
            let s = ConvShape { in_ch: 2, out_ch: 3, kernel: k, stride };
            let x = Tensor4::from_vec(1, 2, 5, 5, rand_vec(50, 6)).unwrap();
            let wt = rand_vec(s.weight_len(), 7);
            let b = rand_vec(3, 8);
            let (y, cache) = conv2d_forward(&x, s, &wt, &b).unwrap();
            let r = rand_vec(y.data.len(), 9);
            let loss = |x: &Tensor4, wt: &[f64], b: &[f64]| -> f64 {
                let (y, _) = conv2d_forward(x, s, wt, b).unwrap();
                y.data.iter().zip(&r).map(|(a, b)| a * b).sum()
            };
            let gy = Tensor4::from_vec(y.n, y.c, y.h, y.w, r.clone()).unwrap();
            let mut gw = vec![0.0; wt.len()];
            let mut gb = vec![0.0; 3];
            let gx = conv2d_backward(&cache, &wt, &gy, &mut gw, &mut gb);
            let nx = fd_gradient(&x.data, 1e-3, |v| loss(&Tensor4::from_vec(1, 2, 5, 5, v.to_vec()).unwrap(), &wt, &b));
            let nw = fd_gradient(&wt, 1e-3, |v| loss(&x, v, &b));
            let nb = fd_gradient(&b, 1e-3, |v| loss(&x, &wt, v));
            assert!(rel_err(&gx.data, &nx) < 1e-4);
            assert!(rel_err(&gw, &nw) < 1e-4);
            assert!(rel_err(&gb, &nb) < 1e-4);
        }
    }
}
