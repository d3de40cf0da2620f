//! Training-set augmentation: dihedral symmetries of a region and repeated
//! observation draws.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{Cell, Grid, RegionFeatures, SparseSamples, TransmitterSet};
use crate::rng::{child_seed, rng, stream_seed};
use crate::sampling::SamplingSetup;

use super::train::{prepare_region, PrepConfig, PreparedRegion};

/// One of the eight symmetries of a square, encoded in three bits:
/// bit 2 transposes, bit 0 flips rows, bit 1 flips columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dihedral(pub u8);

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral(0);

    pub fn transposes(self) -> bool {
        self.0 & 4 != 0
    }

    /// Symmetries valid for an `h x w` grid.
    pub fn all_for(height: usize, width: usize) -> Vec<Dihedral> {
        let n = if height == width { 8 } else { 4 };
        (0..n).map(Dihedral).collect()
    }

    pub fn dims(self, (h, w): (usize, usize)) -> (usize, usize) {
        if self.transposes() {
            (w, h)
        } else {
            (h, w)
        }
    }

    pub fn cell(self, (r, c): Cell, dims: (usize, usize)) -> Cell {
        let (h, w) = self.dims(dims);
        let (r, c) = if self.transposes() { (c, r) } else { (r, c) };
        let r = if self.0 & 1 != 0 { h - 1 - r } else { r };
        let c = if self.0 & 2 != 0 { w - 1 - c } else { c };
        (r, c)
    }

    pub fn grid(self, g: &Grid) -> Grid {
        let (h, w) = self.dims(g.dims());
        let mut out = Grid::zeros(h, w);
        for r in 0..g.height() {
            for c in 0..g.width() {
                out[self.cell((r, c), g.dims())] = g[(r, c)];
            }
        }
        out
    }

    pub fn region(self, region: &RegionFeatures) -> Result<RegionFeatures> {
        let dims = region.dims();
        let samples = SparseSamples::new(
            region.samples.coords().iter().map(|&c| self.cell(c, dims)).collect(),
            region.samples.psd().to_vec(),
        )?
        .sorted();
        let tx = TransmitterSet::new(
            region.transmitters.positions().iter().map(|&c| self.cell(c, dims)).collect(),
        )?;
        RegionFeatures::new(
            samples,
            self.grid(&region.urban),
            tx,
            region.ground_truth.as_ref().map(|g| self.grid(g)),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentConfig {
    /// Add every dihedral symmetry of each training region.
    pub dihedral: bool,
    /// Independent observation draws per region; the first is the
    /// regular one.
    pub draws: usize,
    /// Variants of each region visited per epoch.
    pub copies: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { dihedral: false, draws: 1, copies: 1 }
    }
}

impl AugmentConfig {
    pub fn is_identity(&self) -> bool {
        !self.dihedral && self.draws == 1 && self.copies == 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 || self.copies == 0 {
            return Err(Error::Parameter("augment draws and copies must be positive".into()));
        }
        Ok(())
    }
}

/// Prepared variants of every training region.
#[derive(Debug, Clone)]
pub struct TrainingPool {
    variants: Vec<Vec<PreparedRegion>>,
}

impl TrainingPool {
    /// One fixed variant per region.
    pub fn fixed(regions: Vec<PreparedRegion>) -> Self {
        Self { variants: regions.into_iter().map(|r| alloc::vec![r]).collect() }
    }

    /// Prepares every requested symmetry of each region as observed, plus
    /// `cfg.draws - 1` fresh observation draws under `setup`. Regions need
    /// ground truth and observations.
    pub fn build(
        regions: &[(usize, &RegionFeatures)],
        setup: &SamplingSetup,
        seed: u64,
        cfg: &AugmentConfig,
        prep: &PrepConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let extra = stream_seed(seed, "resample");
        let mut variants = Vec::with_capacity(regions.len());
        for &(index, region) in regions {
            let mut list = Vec::new();
            for draw in 0..cfg.draws {
                let sampled = if draw == 0 {
                    region.clone()
                } else {
                    setup.sample_region(region, child_seed(extra, draw as u64), index)?
                };
                let (h, w) = sampled.dims();
                let syms = if cfg.dihedral { Dihedral::all_for(h, w) } else { alloc::vec![Dihedral::IDENTITY] };
                for s in syms {
                    list.push(prepare_region(&s.region(&sampled)?, index, prep)?);
                }
            }
            variants.push(list);
        }
        Ok(Self { variants })
    }

    pub fn len(&self) -> usize {
        self.variants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variants.is_empty()
    }

    pub fn variants(&self, region: usize) -> &[PreparedRegion] {
        &self.variants[region]
    }

    /// The regions visited in `epoch`: `copies` rounds over all regions,
    /// each picking one variant at random.
    pub fn draw(&self, copies: usize, seed: u64, epoch: usize) -> Vec<PreparedRegion> {
        let mut g = rng(child_seed(stream_seed(seed, "pool"), epoch as u64));
        let mut out = Vec::with_capacity(copies * self.variants.len());
        for _ in 0..copies {
            for v in &self.variants {
                let pick = if v.len() == 1 { 0 } else { g.random_range(0..v.len()) };
                out.push(v[pick].clone());
            }
        }
        out
    }
}
