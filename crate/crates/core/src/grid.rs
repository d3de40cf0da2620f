//! Dense grids and the per-region feature bundle.
//!
//! Coordinates are `(row, col)` with the origin at the top-left cell and all
//! storage is row-major.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// `(row, col)` cell coordinate.
pub type Cell = (usize, usize);

/// Dense `height x width` scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput(format!(
                "grid dimensions must be positive, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(Error::InvalidInput(format!(
                "grid {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            values,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn contains(&self, cell: Cell) -> bool {
        cell.0 < self.height && cell.1 < self.width
    }

    #[inline]
    pub fn get(&self, cell: Cell) -> Option<f64> {
        self.contains(cell)
            .then(|| self.values[cell.0 * self.width + cell.1])
    }

    #[inline]
    pub fn flat_index(&self, cell: Cell) -> usize {
        cell.0 * self.width + cell.1
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn ensure_same_dims(&self, other: &Grid) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(())
    }

    /// True when every value is finite and inside `[0, 1]`.
    pub fn is_normalized(&self) -> bool {
        self.values
            .iter()
            .all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    /// True when every value is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn validate_normalized(&self) -> Result<()> {
        match self
            .values
            .iter()
            .position(|v| !(v.is_finite() && (0.0..=1.0).contains(v)))
        {
            None => Ok(()),
            Some(i) => Err(Error::InvalidInput(format!(
                "value {} at ({}, {}) is not a normalized PSD",
                self.values[i],
                i / self.width,
                i % self.width
            ))),
        }
    }

    pub fn validate_binary(&self) -> Result<()> {
        match self.values.iter().position(|&v| v != 0.0 && v != 1.0) {
            None => Ok(()),
            Some(i) => Err(Error::InvalidInput(format!(
                "urban grid value {} at ({}, {}) is not 0 or 1",
                self.values[i],
                i / self.width,
                i % self.width
            ))),
        }
    }
}

impl Index<Cell> for Grid {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): Cell) -> &f64 {
        debug_assert!(r < self.height && c < self.width);
        &self.values[r * self.width + c]
    }
}

impl IndexMut<Cell> for Grid {
    #[inline]
    fn index_mut(&mut self, (r, c): Cell) -> &mut f64 {
        debug_assert!(r < self.height && c < self.width);
        &mut self.values[r * self.width + c]
    }
}

fn check_bounds(what: &'static str, cells: &[Cell], height: usize, width: usize) -> Result<()> {
    for (index, &(row, col)) in cells.iter().enumerate() {
        if row >= height || col >= width {
            return Err(Error::OutOfBounds {
                what,
                index,
                row,
                col,
                height,
                width,
            });
        }
    }
    Ok(())
}

fn check_unique(what: &str, cells: &[Cell]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (i, c) in cells.iter().enumerate() {
        if !seen.insert(*c) {
            return Err(Error::InvalidInput(format!(
                "duplicate {what} #{i} at ({}, {})",
                c.0, c.1
            )));
        }
    }
    Ok(())
}

/// Known transmitter positions of one region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransmitterSet {
    positions: Vec<Cell>,
}

impl TransmitterSet {
    pub fn new(positions: Vec<Cell>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidInput("at least one transmitter is required".into()));
        }
        check_unique("transmitter", &positions)?;
        Ok(Self { positions })
    }

    pub fn positions(&self) -> &[Cell] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate_bounds(&self, height: usize, width: usize) -> Result<()> {
        check_bounds("transmitter", &self.positions, height, width)
    }
}

/// Sparse PSD observations `(x_j, c_j)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseSamples {
    coords: Vec<Cell>,
    psd: Vec<f64>,
}

impl SparseSamples {
    pub fn new(coords: Vec<Cell>, psd: Vec<f64>) -> Result<Self> {
        if coords.len() != psd.len() {
            return Err(Error::InvalidInput(format!(
                "{} sample coordinates but {} PSD values",
                coords.len(),
                psd.len()
            )));
        }
        check_unique("sample", &coords)?;
        if let Some(i) = psd.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "sample #{i} has invalid PSD {}",
                psd[i]
            )));
        }
        Ok(Self { coords, psd })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Reads the listed cells out of `grid`.
    pub fn from_grid(grid: &Grid, coords: Vec<Cell>) -> Result<Self> {
        check_bounds("sample", &coords, grid.height(), grid.width())?;
        let psd = coords.iter().map(|&c| grid[c]).collect();
        Self::new(coords, psd)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[Cell] {
        &self.coords
    }

    pub fn psd(&self) -> &[f64] {
        &self.psd
    }

    pub fn iter(&self) -> impl Iterator<Item = (Cell, f64)> + '_ {
        self.coords.iter().copied().zip(self.psd.iter().copied())
    }

    pub fn validate_bounds(&self, height: usize, width: usize) -> Result<()> {
        check_bounds("sample", &self.coords, height, width)
    }

    /// Same observations sorted by row-major index.
    pub fn sorted(&self) -> Self {
        let mut pairs: Vec<(Cell, f64)> = self.iter().collect();
        pairs.sort_by_key(|p| p.0);
        let (coords, psd) = pairs.into_iter().unzip();
        Self { coords, psd }
    }
}

/// Everything known about one region: observations, buildings, transmitters,
/// and (for training regions) the full ground-truth map.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeatures {
    pub samples: SparseSamples,
    pub urban: Grid,
    pub transmitters: TransmitterSet,
    pub ground_truth: Option<Grid>,
}

impl RegionFeatures {
    pub fn new(
        samples: SparseSamples,
        urban: Grid,
        transmitters: TransmitterSet,
        ground_truth: Option<Grid>,
    ) -> Result<Self> {
        let region = Self {
            samples,
            urban,
            transmitters,
            ground_truth,
        };
        region.validate()?;
        Ok(region)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.urban.dims()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.dims();
        self.urban.validate_binary()?;
        self.samples.validate_bounds(h, w)?;
        self.transmitters.validate_bounds(h, w)?;
        if let Some(gt) = &self.ground_truth {
            self.urban.ensure_same_dims(gt)?;
        }
        Ok(())
    }

    pub fn with_samples(&self, samples: SparseSamples) -> Result<Self> {
        samples.validate_bounds(self.urban.height(), self.urban.width())?;
        Ok(Self {
            samples,
            ..self.clone()
        })
    }
}

/// Stacked generator input planes: zero-padded observations `x'`, urban map
/// `m`, transmitter one-hot `p`, and optionally an observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedInput {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl EncodedInput {
    pub const OBSERVED: usize = 0;
    pub const URBAN: usize = 1;
    pub const TRANSMITTERS: usize = 2;
    pub const MASK: usize = 3;

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_grid(&self, c: usize) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            values: self.channel(c).to_vec(),
        }
    }
}

fn encode(region: &RegionFeatures, with_mask: bool) -> Result<EncodedInput> {
    region.validate()?;
    let (h, w) = region.dims();
    let n = h * w;
    let channels = if with_mask { 4 } else { 3 };
    let mut data = vec![0.0; channels * n];
    for ((r, c), v) in region.samples.iter() {
        data[r * w + c] = v;
        if with_mask {
            data[EncodedInput::MASK * n + r * w + c] = 1.0;
        }
    }
    data[n..2 * n].copy_from_slice(region.urban.values());
    for &(r, c) in region.transmitters.positions() {
        data[2 * n + r * w + c] = 1.0;
    }
    Ok(EncodedInput {
        height: h,
        width: w,
        channels,
        data,
    })
}

/// Encodes a region as the three generator input planes `{x', m, p}`.
pub fn encode_input(region: &RegionFeatures) -> Result<EncodedInput> {
    encode(region, false)
}

/// Like [`encode_input`] with a fourth plane marking observed cells.
pub fn encode_input_with_mask(region: &RegionFeatures) -> Result<EncodedInput> {
    encode(region, true)
}

fn check_range(dmin: f64, dmax: f64) -> Result<()> {
    if !(dmin.is_finite() && dmax.is_finite() && dmax > dmin) {
        return Err(Error::Parameter(format!(
            "normalization range requires dmax > dmin, got [{dmin}, {dmax}]"
        )));
    }
    Ok(())
}

/// Maps dB values to `[0, 1]` by `clamp((v - dmin) / (dmax - dmin), 0, 1)`.
pub fn normalize_psd(raw: &Grid, dmin: f64, dmax: f64) -> Result<Grid> {
    check_range(dmin, dmax)?;
    let span = dmax - dmin;
    Ok(raw.map(|v| ((v - dmin) / span).clamp(0.0, 1.0)))
}

pub fn denormalize_psd(norm: &Grid, dmin: f64, dmax: f64) -> Result<Grid> {
    check_range(dmin, dmax)?;
    let span = dmax - dmin;
    Ok(norm.map(|v| dmin + v * span))
}
