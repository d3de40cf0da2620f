use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log1p};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Dense `(n, c, h, w)` tensor in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w, data: vec![0.0; n * c * h * w] }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::InvalidInput(format!(
                "tensor data has {} values, shape ({n}, {c}, {h}, {w}) needs {}",
                data.len(),
                n * c * h * w
            )));
        }
        Ok(Self { n, c, h, w, data })
    }

    /// Stacks single-channel grids into an `(n, 1, h, w)` tensor.
    pub fn from_grids(grids: &[&Grid]) -> Result<Self> {
        let first = grids
            .first()
            .ok_or_else(|| Error::InvalidInput("cannot stack zero grids".into()))?;
        let (h, w) = first.dims();
        let mut data = Vec::with_capacity(grids.len() * h * w);
        for g in grids {
            first.ensure_same_dims(g)?;
            data.extend_from_slice(g.values());
        }
        Self::from_vec(grids.len(), 1, h, w, data)
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// All channels of item `i`.
    pub fn item(&self, i: usize) -> &[f64] {
        let s = self.c * self.plane();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [f64] {
        let s = self.c * self.plane();
        &mut self.data[i * s..(i + 1) * s]
    }

    pub fn channel(&self, i: usize, c: usize) -> &[f64] {
        let p = self.plane();
        let start = (i * self.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn channel_grid(&self, i: usize, c: usize) -> Grid {
        Grid::new(self.h, self.w, self.channel(i, c).to_vec()).expect("plane has h * w values")
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Items `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.c * self.plane());
        for &i in idx {
            data.extend_from_slice(self.item(i));
        }
        Self { n: idx.len(), c: self.c, h: self.h, w: self.w, data }
    }
}

/// Channel-wise concatenation of tensors with matching `n`, `h`, `w`.
pub fn concat_channels(parts: &[&Tensor4]) -> Result<Tensor4> {
    let first = parts[0];
    let c: usize = parts.iter().map(|t| t.c).sum();
    for t in parts {
        if (t.n, t.h, t.w) != (first.n, first.h, first.w) {
            return Err(Error::InvalidInput(format!(
                "cannot concatenate {:?} with {:?}",
                t.shape(),
                first.shape()
            )));
        }
    }
    let mut out = Tensor4::zeros(first.n, c, first.h, first.w);
    for i in 0..first.n {
        let mut off = 0;
        let dst = out.item_mut(i);
        for t in parts {
            let src = t.item(i);
            dst[off..off + src.len()].copy_from_slice(src);
            off += src.len();
        }
    }
    Ok(out)
}

/// Inverse of [`concat_channels`] for gradients.
pub fn split_channels(t: &Tensor4, sizes: &[usize]) -> Vec<Tensor4> {
    let p = t.plane();
    let mut out: Vec<Tensor4> = sizes.iter().map(|&c| Tensor4::zeros(t.n, c, t.h, t.w)).collect();
    for i in 0..t.n {
        let src = t.item(i);
        let mut off = 0;
        for (part, &c) in out.iter_mut().zip(sizes) {
            part.item_mut(i).copy_from_slice(&src[off..off + c * p]);
            off += c * p;
        }
    }
    out
}

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu(x: &Tensor4) -> Tensor4 {
    let mut y = x.clone();
    y.data.iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v *= LEAKY_SLOPE
        }
    });
    y
}

/// Gradient through [`leaky_relu`] given the pre-activation `x`.
pub fn leaky_relu_backward(x: &Tensor4, gy: &Tensor4) -> Tensor4 {
    let mut g = gy.clone();
    g.data
        .iter_mut()
        .zip(&x.data)
        .for_each(|(g, &x)| if x < 0.0 { *g *= LEAKY_SLOPE });
    g
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + exp(-z))
    } else {
        let e = exp(z);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + log1p(exp(-z))
    } else {
        log1p(exp(z))
    }
}

pub fn upsample_nearest2(x: &Tensor4) -> Tensor4 {
    let (h2, w2) = (2 * x.h, 2 * x.w);
    let mut y = Tensor4::zeros(x.n, x.c, h2, w2);
    for nc in 0..x.n * x.c {
        let src = &x.data[nc * x.plane()..(nc + 1) * x.plane()];
        let dst = &mut y.data[nc * h2 * w2..(nc + 1) * h2 * w2];
        for r in 0..h2 {
            for c in 0..w2 {
                dst[r * w2 + c] = src[(r / 2) * x.w + c / 2];
            }
        }
    }
    y
}

pub fn upsample_nearest2_backward(gy: &Tensor4) -> Tensor4 {
    let (h, w) = (gy.h / 2, gy.w / 2);
    let mut g = Tensor4::zeros(gy.n, gy.c, h, w);
    for nc in 0..gy.n * gy.c {
        let src = &gy.data[nc * gy.plane()..(nc + 1) * gy.plane()];
        let dst = &mut g.data[nc * h * w..(nc + 1) * h * w];
        for r in 0..gy.h {
            for c in 0..gy.w {
                dst[(r / 2) * w + c / 2] += src[r * gy.w + c];
            }
        }
    }
    g
}

/// Mean over each channel plane, shape `(n, c)`.
pub fn global_avg_pool(x: &Tensor4) -> Vec<f64> {
    let p = x.plane() as f64;
    x.data
        .chunks(x.plane())
        .map(|ch| ch.iter().sum::<f64>() / p)
        .collect()
}

pub fn global_avg_pool_backward(g: &[f64], n: usize, c: usize, h: usize, w: usize) -> Tensor4 {
    let p = (h * w) as f64;
    let mut out = Tensor4::zeros(n, c, h, w);
    for (chunk, &gv) in out.data.chunks_mut(h * w).zip(g) {
        chunk.iter_mut().for_each(|v| *v = gv / p);
    }
    out
}

/// Concatenation along the batch axis.
pub fn concat_batch(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    if (a.c, a.h, a.w) != (b.c, b.h, b.w) {
        return Err(Error::InvalidInput(format!("cannot stack {:?} with {:?}", a.shape(), b.shape())));
    }
    let mut data = a.data.clone();
    data.extend_from_slice(&b.data);
    Tensor4::from_vec(a.n + b.n, a.c, a.h, a.w, data)
}
