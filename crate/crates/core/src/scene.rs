//! Synthetic ground truth: random transmitters, rectangular buildings, and
//! log-distance pathloss with per-wall-cell attenuation.

use alloc::format;
use alloc::vec::Vec;

use libm::{log10, pow, sqrt};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{normalize_psd, Cell, Grid, RegionFeatures, SparseSamples, TransmitterSet};
use crate::rng::{child_seed, rng, stream_seed, Rng};

/// Distance floor (cells) used at the transmitter cell.
pub const MIN_DISTANCE: f64 = 0.5;

const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub n_tx: usize,
    /// Received power at the 1-cell reference distance, dB.
    pub alpha_range: (f64, f64),
    /// Pathloss exponent.
    pub theta_range: (f64, f64),
    pub wall_loss_db: f64,
    pub noise_sigma_db: f64,
    pub n_buildings: usize,
    /// Side length range of the rectangular buildings, cells.
    pub building_size_range: (usize, usize),
    /// dB values mapped to 0 and 1.
    pub dmin: f64,
    pub dmax: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            n_tx: 1,
            alpha_range: (-10.0, 0.0),
            theta_range: (2.0, 3.5),
            wall_loss_db: 3.0,
            noise_sigma_db: 0.5,
            n_buildings: 4,
            building_size_range: (3, 8),
            dmin: -100.0,
            dmax: 0.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Parameter(format!("scene: {msg}")));
        if self.height == 0 || self.width == 0 {
            return bad("grid dimensions must be positive");
        }
        if self.n_tx == 0 {
            return bad("n_tx must be at least 1");
        }
        if self.n_tx > self.height * self.width {
            return bad("more transmitters than cells");
        }
        if !(self.alpha_range.0 <= self.alpha_range.1) {
            return bad("alpha_range must be ordered");
        }
        if !(self.theta_range.0 <= self.theta_range.1
            && self.theta_range.0 >= 1.0
            && self.theta_range.1 <= 6.0)
        {
            return bad("theta_range must be ordered and inside [1, 6]");
        }
        if !(self.wall_loss_db >= 0.0 && self.noise_sigma_db >= 0.0) {
            return bad("wall_loss_db and noise_sigma_db must be nonnegative");
        }
        let (lo, hi) = self.building_size_range;
        if lo == 0 || lo > hi {
            return bad("building_size_range must be ordered and positive");
        }
        if self.n_buildings > 0 && (hi > self.height || hi > self.width) {
            return bad("building_size_range exceeds the grid");
        }
        if !(self.dmax > self.dmin) {
            return bad("dmax must exceed dmin");
        }
        Ok(())
    }
}

/// Pathloss parameters of one transmitter in dB units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxParams {
    pub alpha_db: f64,
    pub theta: f64,
}

/// Axis-aligned building footprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, (r, c): Cell) -> bool {
        r >= self.row && r < self.row + self.height && c >= self.col && c < self.col + self.width
    }
}

pub fn rasterize(rects: &[Rect], height: usize, width: usize) -> Grid {
    let mut g = Grid::zeros(height, width);
    for rect in rects {
        for r in rect.row..(rect.row + rect.height).min(height) {
            for c in rect.col..(rect.col + rect.width).min(width) {
                g[(r, c)] = 1.0;
            }
        }
    }
    g
}

/// Draws `n_tx` distinct transmitter cells.
pub fn generate_transmitters(cfg: &SceneConfig, region_seed: u64) -> Result<TransmitterSet> {
    cfg.validate()?;
    let mut rng = rng(stream_seed(region_seed, "transmitters"));
    let n = cfg.height * cfg.width;
    let picks = rand::seq::index::sample(&mut rng, n, cfg.n_tx);
    let mut cells: Vec<Cell> = picks
        .into_iter()
        .map(|i| (i / cfg.width, i % cfg.width))
        .collect();
    cells.sort_unstable();
    TransmitterSet::new(cells)
}

/// Rejection-samples `n_buildings` rectangles that avoid every transmitter.
pub fn generate_buildings(
    cfg: &SceneConfig,
    tx: &TransmitterSet,
    region_seed: u64,
) -> Result<Vec<Rect>> {
    cfg.validate()?;
    tx.validate_bounds(cfg.height, cfg.width)?;
    let mut rng = rng(stream_seed(region_seed, "buildings"));
    let (lo, hi) = cfg.building_size_range;
    let mut rects = Vec::with_capacity(cfg.n_buildings);
    for b in 0..cfg.n_buildings {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let height = rng.random_range(lo..=hi);
            let width = rng.random_range(lo..=hi);
            let rect = Rect {
                row: rng.random_range(0..=cfg.height - height),
                col: rng.random_range(0..=cfg.width - width),
                height,
                width,
            };
            if !tx.positions().iter().any(|&p| rect.contains(p)) {
                placed = Some(rect);
                break;
            }
        }
        match placed {
            Some(rect) => rects.push(rect),
            None => {
                return Err(Error::Generation(format!(
                    "could not place building {b} after {MAX_PLACEMENT_ATTEMPTS} attempts"
                )))
            }
        }
    }
    Ok(rects)
}

/// Binary building raster (1 = building) avoiding every transmitter cell.
pub fn generate_urban_map(cfg: &SceneConfig, tx: &TransmitterSet, region_seed: u64) -> Result<Grid> {
    let rects = generate_buildings(cfg, tx, region_seed)?;
    Ok(rasterize(&rects, cfg.height, cfg.width))
}

/// Visits the Bresenham cells from `a` to `b`, endpoints included.
fn bresenham(a: Cell, b: Cell, mut visit: impl FnMut(Cell)) {
    let (mut r, mut c) = (a.0 as i64, a.1 as i64);
    let (r1, c1) = (b.0 as i64, b.1 as i64);
    let dr = (r1 - r).abs();
    let dc = -(c1 - c).abs();
    let sr = if r < r1 { 1 } else { -1 };
    let sc = if c < c1 { 1 } else { -1 };
    let mut err = dr + dc;
    loop {
        visit((r as usize, c as usize));
        if r == r1 && c == c1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dc {
            err += dc;
            r += sr;
        }
        if e2 <= dr {
            err += dr;
            c += sc;
        }
    }
}

/// Building cells strictly between `a` and `b` on their Bresenham segment.
///
/// The segment is always traced from the smaller endpoint so the count is
/// symmetric in its arguments.
pub fn wall_count(a: Cell, b: Cell, urban: &Grid) -> Result<usize> {
    for (index, &(row, col)) in [a, b].iter().enumerate() {
        if !urban.contains((row, col)) {
            return Err(Error::OutOfBounds {
                what: "wall_count endpoint",
                index,
                row,
                col,
                height: urban.height(),
                width: urban.width(),
            });
        }
    }
    let (from, to) = if a <= b { (a, b) } else { (b, a) };
    let mut count = 0;
    bresenham(from, to, |cell| {
        if cell != from && cell != to && urban[cell] != 0.0 {
            count += 1;
        }
    });
    Ok(count)
}

#[inline]
pub fn distance(a: Cell, b: Cell) -> f64 {
    let dr = a.0 as f64 - b.0 as f64;
    let dc = a.1 as f64 - b.1 as f64;
    sqrt(dr * dr + dc * dc)
}

/// Noiseless received power in dB, aggregated across transmitters in the
/// linear power domain.
pub fn radiomap_db(
    urban: &Grid,
    tx: &TransmitterSet,
    params: &[TxParams],
    wall_loss_db: f64,
) -> Result<Grid> {
    if params.len() != tx.len() {
        return Err(Error::InvalidInput(format!(
            "{} transmitters but {} parameter sets",
            tx.len(),
            params.len()
        )));
    }
    tx.validate_bounds(urban.height(), urban.width())?;
    for (i, &p) in tx.positions().iter().enumerate() {
        if urban[p] != 0.0 {
            return Err(Error::InvalidInput(format!(
                "transmitter #{i} at ({}, {}) is inside a building",
                p.0, p.1
            )));
        }
    }
    let (h, w) = urban.dims();
    let mut out = Grid::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let mut linear = 0.0;
            for (&t, p) in tx.positions().iter().zip(params) {
                let d = distance(t, (r, c)).max(MIN_DISTANCE);
                let walls = if wall_loss_db > 0.0 {
                    wall_count(t, (r, c), urban)? as f64
                } else {
                    0.0
                };
                let db = p.alpha_db - 10.0 * p.theta * log10(d) - wall_loss_db * walls;
                linear += pow(10.0, db / 10.0);
            }
            out[(r, c)] = 10.0 * log10(linear);
        }
    }
    Ok(out)
}

pub fn draw_tx_params(cfg: &SceneConfig, region_seed: u64) -> Vec<TxParams> {
    let mut rng = rng(stream_seed(region_seed, "tx-params"));
    (0..cfg.n_tx)
        .map(|_| TxParams {
            alpha_db: uniform(&mut rng, cfg.alpha_range),
            theta: uniform(&mut rng, cfg.theta_range),
        })
        .collect()
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Normalized ground truth together with the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioMap {
    pub normalized: Grid,
    pub tx_params: Vec<TxParams>,
}

pub fn generate_radiomap(
    cfg: &SceneConfig,
    urban: &Grid,
    tx: &TransmitterSet,
    region_seed: u64,
) -> Result<RadioMap> {
    cfg.validate()?;
    let tx_params = draw_tx_params(cfg, region_seed);
    let mut db = radiomap_db(urban, tx, &tx_params, cfg.wall_loss_db)?;
    if cfg.noise_sigma_db > 0.0 {
        let mut rng = rng(stream_seed(region_seed, "noise"));
        let noise = Normal::new(0.0, cfg.noise_sigma_db)
            .map_err(|e| Error::Parameter(format!("noise distribution: {e}")))?;
        for v in db.values_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    Ok(RadioMap {
        normalized: normalize_psd(&db, cfg.dmin, cfg.dmax)?,
        tx_params,
    })
}

/// Transmitters, buildings and ground truth for region `index` under `seed`.
pub fn generate_region(cfg: &SceneConfig, seed: u64, index: usize) -> Result<RegionFeatures> {
    let region_seed = child_seed(seed, index as u64);
    let tx = generate_transmitters(cfg, region_seed)?;
    let urban = generate_urban_map(cfg, &tx, region_seed)?;
    let map = generate_radiomap(cfg, &urban, &tx, region_seed)?;
    RegionFeatures::new(SparseSamples::empty(), urban, tx, Some(map.normalized))
}

/// Disjoint train/test/validation index lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub validation: Vec<usize>,
}

impl Split {
    /// Default 5:1:1 proportions.
    pub const DEFAULT_RATIOS: (usize, usize, usize) = (5, 1, 1);

    /// Counts for `n` items under integer `ratios` (train, test, validation);
    /// validation takes the rounding remainder.
    pub fn counts(n: usize, ratios: (usize, usize, usize)) -> (usize, usize, usize) {
        let total = ratios.0 + ratios.1 + ratios.2;
        if total == 0 {
            return (n, 0, 0);
        }
        let round = |k: usize| (2 * n * k + total) / (2 * total);
        let train = round(ratios.0).min(n);
        let test = round(ratios.1).min(n - train);
        (train, test, n - train - test)
    }

    /// Deterministic shuffle of `0..n` cut into the given counts.
    pub fn with_counts(n: usize, counts: (usize, usize, usize), seed: u64) -> Result<Self> {
        if counts.0 + counts.1 + counts.2 != n {
            return Err(Error::Parameter(format!(
                "split counts {counts:?} do not add up to {n}"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = rng(stream_seed(seed, "split"));
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
        let validation = idx.split_off(counts.0 + counts.1);
        let test = idx.split_off(counts.0);
        Ok(Self {
            train: idx,
            test,
            validation,
        })
    }

    pub fn with_ratios(n: usize, ratios: (usize, usize, usize), seed: u64) -> Self {
        Self::with_counts(n, Self::counts(n, ratios), seed).expect("counts add up by construction")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub regions: Vec<RegionFeatures>,
    pub split: Split,
    pub dmin: f64,
    pub dmax: f64,
    pub seed: u64,
}

impl Dataset {
    pub fn train(&self) -> impl Iterator<Item = &RegionFeatures> {
        self.split.train.iter().map(|&i| &self.regions[i])
    }

    pub fn test(&self) -> impl Iterator<Item = &RegionFeatures> {
        self.split.test.iter().map(|&i| &self.regions[i])
    }

    pub fn validation(&self) -> impl Iterator<Item = &RegionFeatures> {
        self.split.validation.iter().map(|&i| &self.regions[i])
    }
}

/// Generates `n_regions` regions with the default 5:1:1 split.
pub fn build_dataset(cfg: &SceneConfig, n_regions: usize, seed: u64) -> Result<Dataset> {
    build_dataset_with_counts(
        cfg,
        n_regions,
        Split::counts(n_regions, Split::DEFAULT_RATIOS),
        seed,
    )
}

pub fn build_dataset_with_counts(
    cfg: &SceneConfig,
    n_regions: usize,
    counts: (usize, usize, usize),
    seed: u64,
) -> Result<Dataset> {
    cfg.validate()?;
    let regions = (0..n_regions)
        .map(|i| generate_region(cfg, seed, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        regions,
        split: Split::with_counts(n_regions, counts, seed)?,
        dmin: cfg.dmin,
        dmax: cfg.dmax,
        seed,
    })
}
