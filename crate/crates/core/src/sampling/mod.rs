//! Observation regimes and the geometric/frequency downsamplers.

mod fourier;
mod superpixel;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use libm::{cos, round, sin};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::grid::{Cell, Grid, RegionFeatures, SparseSamples};
use crate::rng::{rng, stream_seed, Rng};

pub use fourier::{dft2, high_freq_select, idft2, radial_order, Complex, FreqSelection};
pub use superpixel::{superpixels, voronoi_seed_labels, SuperpixelLabels};

/// The three observation regimes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplingSetup {
    /// Uniform sampling at a fixed ratio.
    Uniform { ratio: f64 },
    /// Per-region ratio drawn uniformly from `[lo, hi]`.
    Unbalanced { lo: f64, hi: f64 },
    /// Random line through the center; one side at `ratio_a`, the other at `ratio_b`.
    Split { ratio_a: f64, ratio_b: f64 },
}

impl SamplingSetup {
    pub const SETUP1: Self = SamplingSetup::Uniform { ratio: 0.01 };
    pub const SETUP2: Self = SamplingSetup::Unbalanced { lo: 0.01, hi: 0.10 };
    pub const SETUP3: Self = SamplingSetup::Split {
        ratio_a: 0.01,
        ratio_b: 0.10,
    };

    pub fn sample(&self, gt: &Grid, seed: u64) -> Result<SparseSamples> {
        match *self {
            SamplingSetup::Uniform { ratio } => sample_uniform(gt, ratio, seed),
            SamplingSetup::Unbalanced { lo, hi } => sample_unbalanced(gt, lo, hi, seed),
            SamplingSetup::Split { ratio_a, ratio_b } => sample_split(gt, ratio_a, ratio_b, seed),
        }
    }

    /// Copy of `region` observed under this setup; the draw depends only on
    /// `seed`, the setup kind and the region index.
    pub fn sample_region(&self, region: &RegionFeatures, seed: u64, index: usize) -> Result<RegionFeatures> {
        let gt = region.ground_truth.as_ref().ok_or_else(|| {
            Error::InvalidInput(format!("region {index} has no ground truth to sample"))
        })?;
        let s = self.sample(gt, crate::rng::child_seed(stream_seed(seed, self.name()), index as u64))?;
        region.with_samples(s)
    }

    pub fn name(&self) -> &'static str {
        match self {
            SamplingSetup::Uniform { .. } => "uniform",
            SamplingSetup::Unbalanced { .. } => "unbalanced",
            SamplingSetup::Split { .. } => "split",
        }
    }
}

#[inline]
fn count_for(ratio: f64, n: usize) -> usize {
    (round(ratio * n as f64) as usize).min(n)
}

/// Draws `k` distinct members of `pool` and returns them in row-major order.
fn draw_from(pool: &[Cell], k: usize, rng: &mut Rng) -> Vec<Cell> {
    let mut picked: Vec<Cell> = rand::seq::index::sample(rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    picked
}

fn all_cells(gt: &Grid) -> Vec<Cell> {
    (0..gt.height())
        .flat_map(|r| (0..gt.width()).map(move |c| (r, c)))
        .collect()
}

/// Setup 1: `round(ratio * H * W)` distinct cells drawn uniformly.
pub fn sample_uniform(gt: &Grid, ratio: f64, seed: u64) -> Result<SparseSamples> {
    let n = gt.len();
    if !(ratio > 0.0 && ratio <= 1.0) || ratio * (n as f64) < 1.0 {
        return Err(Error::Parameter(format!(
            "sampling ratio {ratio} must be in (0, 1] and yield at least one of {n} cells"
        )));
    }
    let mut rng = rng(stream_seed(seed, "uniform"));
    let coords = draw_from(&all_cells(gt), count_for(ratio, n), &mut rng);
    SparseSamples::from_grid(gt, coords)
}

/// Setup 2: a per-region ratio from `Uniform[lo, hi]`, then uniform sampling.
pub fn sample_unbalanced(gt: &Grid, lo: f64, hi: f64, seed: u64) -> Result<SparseSamples> {
    if !(lo <= hi) {
        return Err(Error::Parameter(format!("ratio interval [{lo}, {hi}] is not ordered")));
    }
    let ratio = if lo == hi {
        lo
    } else {
        rng(stream_seed(seed, "unbalanced-ratio")).random_range(lo..=hi)
    };
    sample_uniform(gt, ratio, seed)
}

/// Setup 3 with a random boundary angle in `[0, pi)` and a fair coin deciding
/// which half plays side A.
pub fn sample_split(gt: &Grid, ratio_a: f64, ratio_b: f64, seed: u64) -> Result<SparseSamples> {
    let mut r = rng(stream_seed(seed, "split-line"));
    let angle = r.random_range(0.0..core::f64::consts::PI);
    let flip = r.random_bool(0.5);
    sample_split_at(gt, angle, flip, ratio_a, ratio_b, seed)
}

/// Side membership for the line through the grid center at `angle`:
/// cells with `(c - cx) cos + (r - cy) sin > 0` are on the positive side.
pub fn split_sides(height: usize, width: usize, angle: f64) -> (Vec<Cell>, Vec<Cell>) {
    let cy = (height as f64 - 1.0) / 2.0;
    let cx = (width as f64 - 1.0) / 2.0;
    let (s, c) = (sin(angle), cos(angle));
    let mut neg = Vec::new();
    let mut pos = Vec::new();
    for row in 0..height {
        for col in 0..width {
            let d = (col as f64 - cx) * c + (row as f64 - cy) * s;
            if d > 1e-12 {
                pos.push((row, col));
            } else {
                neg.push((row, col));
            }
        }
    }
    (neg, pos)
}

/// Split sampling with an explicit boundary. Side A is the nonpositive side
/// unless `flip` is set.
pub fn sample_split_at(
    gt: &Grid,
    angle: f64,
    flip: bool,
    ratio_a: f64,
    ratio_b: f64,
    seed: u64,
) -> Result<SparseSamples> {
    if gt.width() < 2 {
        return Err(Error::Parameter("split sampling needs a grid at least 2 cells wide".into()));
    }
    for r in [ratio_a, ratio_b] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Parameter(format!("sampling ratio {r} outside [0, 1]")));
        }
    }
    let (neg, pos) = split_sides(gt.height(), gt.width(), angle);
    let (side_a, side_b) = if flip { (pos, neg) } else { (neg, pos) };
    let mut rng = rng(stream_seed(seed, "split-cells"));
    let mut coords = draw_from(&side_a, count_for(ratio_a, side_a.len()), &mut rng);
    coords.extend(draw_from(&side_b, count_for(ratio_b, side_b.len()), &mut rng));
    coords.sort_unstable();
    SparseSamples::from_grid(gt, coords)
}

/// Keeps the peak-PSD observation of every segment (ties: smallest row-major
/// index). Output is in row-major order.
pub fn geometric_downsample(
    samples: &SparseSamples,
    labels: &SuperpixelLabels,
) -> Result<SparseSamples> {
    samples.validate_bounds(labels.height(), labels.width())?;
    let mut best: BTreeMap<usize, (Cell, f64)> = BTreeMap::new();
    for (cell, v) in samples.iter() {
        let seg = labels.label(cell);
        match best.get(&seg) {
            Some(&(c0, v0)) if v0 > v || (v0 == v && c0 < cell) => {}
            _ => {
                best.insert(seg, (cell, v));
            }
        }
    }
    let mut kept: Vec<(Cell, f64)> = best.into_values().collect();
    kept.sort_unstable_by_key(|p| p.0);
    let (coords, psd) = kept.into_iter().unzip();
    SparseSamples::new(coords, psd)
}
