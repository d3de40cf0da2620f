//! Dataset directories: per-region PGM/RMG grids plus CSV manifests.
//!
//! ```text
//! region_<idx>_gt.pgm     8-bit ground truth
//! region_<idx>_gt.rmg     lossless ground truth (optional on load)
//! region_<idx>_urban.pgm  building raster, 0 or 255
//! manifest.csv            idx,tx_row,tx_col  (one row per transmitter)
//! meta.csv                dmin,dmax,seed
//! split.csv               idx,split          (optional on load)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rmegan_core::grid::{Grid, RegionFeatures, SparseSamples, TransmitterSet};
use rmegan_core::scene::{Dataset, Split};

use crate::error::{write_file, Error, Result};
use crate::formats::{parse_field, read_grid, read_rows, read_samples_csv, write_grid, write_samples_csv, GridFormat};

pub const MANIFEST: &str = "manifest.csv";
pub const META: &str = "meta.csv";
pub const SPLIT: &str = "split.csv";
pub const DEFAULT_DMIN: f64 = -100.0;
pub const DEFAULT_DMAX: f64 = 0.0;

pub fn gt_path(dir: &Path, idx: usize, format: GridFormat) -> PathBuf {
    dir.join(format!("region_{idx}_gt.{}", format.extension()))
}

pub fn urban_path(dir: &Path, idx: usize) -> PathBuf {
    dir.join(format!("region_{idx}_urban.pgm"))
}

pub fn samples_path(dir: &Path, idx: usize) -> PathBuf {
    dir.join(format!("region_{idx}.csv"))
}

/// Writes every region of `ds` plus the manifest, metadata and split.
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    let mut manifest = String::from("idx,tx_row,tx_col\n");
    for (idx, region) in ds.regions.iter().enumerate() {
        let gt = region
            .ground_truth
            .as_ref()
            .ok_or_else(|| rmegan_core::Error::InvalidInput(format!("region {idx} has no ground truth")))?;
        write_grid(&gt_path(dir, idx, GridFormat::Pgm), gt, GridFormat::Pgm)?;
        write_grid(&gt_path(dir, idx, GridFormat::Rmg), gt, GridFormat::Rmg)?;
        write_grid(&urban_path(dir, idx), &region.urban, GridFormat::Pgm)?;
        for (r, c) in region.transmitters.positions() {
            writeln!(manifest, "{idx},{r},{c}").expect("writing to a String");
        }
    }
    write_file(&dir.join(MANIFEST), manifest.as_bytes())?;
    let meta = format!("dmin,dmax,seed\n{},{},{}\n", ds.dmin, ds.dmax, ds.seed);
    write_file(&dir.join(META), meta.as_bytes())?;
    let mut split = String::from("idx,split\n");
    let mut names = vec![""; ds.regions.len()];
    for (list, name) in [(&ds.split.train, "train"), (&ds.split.test, "test"), (&ds.split.validation, "validation")] {
        for &i in list {
            names[i] = name;
        }
    }
    for (i, name) in names.iter().enumerate() {
        writeln!(split, "{i},{name}").expect("writing to a String");
    }
    write_file(&dir.join(SPLIT), split.as_bytes())
}

fn require(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingInput { path: path.to_path_buf(), hint: hint.into() })
    }
}

/// Loads a dataset directory written by [`save_dataset`] or assembled by
/// hand. Region indices must run from 0 without gaps. Without `split.csv` a
/// 5:1:1 split is drawn from the metadata seed.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = dir.join(MANIFEST);
    require(&manifest, "dataset directories need a transmitter manifest; run `rmegan gen` first")?;
    let mut tx: BTreeMap<usize, Vec<(u64, (usize, usize))>> = BTreeMap::new();
    for (at, row) in read_rows(&manifest, &["idx", "tx_row", "tx_col"])? {
        let idx: usize = parse_field(&manifest, at, &row, 0, "idx")?;
        let cell = (parse_field(&manifest, at, &row, 1, "tx_row")?, parse_field(&manifest, at, &row, 2, "tx_col")?);
        tx.entry(idx).or_default().push((at, cell));
    }
    if tx.is_empty() {
        return Err(Error::load(&manifest, "manifest lists no transmitters"));
    }
    if let Some((pos, idx)) = tx.keys().enumerate().find(|&(pos, &idx)| pos != idx) {
        return Err(Error::load(&manifest, format!("region indices must be 0..n without gaps; expected {pos}, found {idx}")));
    }

    let (dmin, dmax, seed) = read_meta(dir)?;
    let mut regions = Vec::with_capacity(tx.len());
    for (&idx, cells) in &tx {
        let urban_file = urban_path(dir, idx);
        let urban = read_grid(&urban_file, GridFormat::Pgm)?;
        if !urban.is_binary() {
            return Err(Error::load(&urban_file, "urban map must contain only 0 and maxval"));
        }
        let gt = read_ground_truth(dir, idx)?;
        if gt.dims() != urban.dims() {
            return Err(Error::load(
                gt_path(dir, idx, GridFormat::Pgm),
                format!(
                    "dimension mismatch: ground truth is {}x{} but the urban map is {}x{}",
                    gt.height(),
                    gt.width(),
                    urban.height(),
                    urban.width()
                ),
            ));
        }
        let (h, w) = urban.dims();
        for &(at, (r, c)) in cells {
            if r >= h || c >= w {
                return Err(Error::format(
                    &manifest,
                    at,
                    format!("transmitter ({r}, {c}) of region {idx} is outside the {h}x{w} grid"),
                ));
            }
        }
        let positions = cells.iter().map(|&(_, c)| c).collect();
        let region = RegionFeatures::new(SparseSamples::empty(), urban, TransmitterSet::new(positions)?, Some(gt))
            .map_err(|e| Error::load(&manifest, format!("region {idx}: {e}")))?;
        regions.push(region);
    }
    let split = read_split(dir, regions.len(), seed)?;
    Ok(Dataset { regions, split, dmin, dmax, seed })
}

fn read_ground_truth(dir: &Path, idx: usize) -> Result<Grid> {
    let rmg = gt_path(dir, idx, GridFormat::Rmg);
    let (path, grid) = if rmg.exists() {
        let g = read_grid(&rmg, GridFormat::Rmg)?;
        (rmg, g)
    } else {
        let pgm = gt_path(dir, idx, GridFormat::Pgm);
        let g = read_grid(&pgm, GridFormat::Pgm)?;
        (pgm, g)
    };
    grid.validate_normalized().map_err(|e| Error::load(&path, e.to_string()))?;
    Ok(grid)
}

fn read_meta(dir: &Path) -> Result<(f64, f64, u64)> {
    let path = dir.join(META);
    if !path.exists() {
        log::warn!("{} not found; assuming dmin {DEFAULT_DMIN}, dmax {DEFAULT_DMAX}, seed 0", path.display());
        return Ok((DEFAULT_DMIN, DEFAULT_DMAX, 0));
    }
    let rows = read_rows(&path, &["dmin", "dmax", "seed"])?;
    let [(at, row)] = rows.as_slice() else {
        return Err(Error::load(&path, format!("expected exactly one data row, found {}", rows.len())));
    };
    let dmin: f64 = parse_field(&path, *at, row, 0, "dmin")?;
    let dmax: f64 = parse_field(&path, *at, row, 1, "dmax")?;
    if !(dmin.is_finite() && dmax.is_finite() && dmax > dmin) {
        return Err(Error::format(&path, *at, format!("need dmax > dmin, found [{dmin}, {dmax}]")));
    }
    Ok((dmin, dmax, parse_field(&path, *at, row, 2, "seed")?))
}

fn read_split(dir: &Path, n: usize, seed: u64) -> Result<Split> {
    let path = dir.join(SPLIT);
    if !path.exists() {
        return Ok(Split::with_ratios(n, Split::DEFAULT_RATIOS, seed));
    }
    let mut split = Split { train: Vec::new(), test: Vec::new(), validation: Vec::new() };
    let mut seen = vec![false; n];
    for (at, row) in read_rows(&path, &["idx", "split"])? {
        let idx: usize = parse_field(&path, at, &row, 0, "idx")?;
        if idx >= n || seen[idx] {
            return Err(Error::format(&path, at, format!("region {idx} is unknown or listed twice")));
        }
        seen[idx] = true;
        match row[1].as_str() {
            "train" => split.train.push(idx),
            "test" => split.test.push(idx),
            "validation" => split.validation.push(idx),
            other => return Err(Error::format(&path, at, format!("unknown split {other:?}"))),
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::load(&path, format!("region {missing} is not assigned to a split")));
    }
    Ok(split)
}

/// Writes one observation file per region.
pub fn save_samples(dir: &Path, samples: &[SparseSamples]) -> Result<()> {
    for (idx, s) in samples.iter().enumerate() {
        write_samples_csv(&samples_path(dir, idx), s)?;
    }
    Ok(())
}

/// Attaches the observation files in `dir` to every region of `ds`.
pub fn attach_samples(dir: &Path, ds: &mut Dataset) -> Result<()> {
    require(dir, "no observation directory; run `rmegan sample` first")?;
    for (idx, region) in ds.regions.iter_mut().enumerate() {
        let path = samples_path(dir, idx);
        require(&path, "observation file missing; rerun `rmegan sample`")?;
        let s = read_samples_csv(&path)?;
        *region = region.with_samples(s).map_err(|e| Error::load(&path, e.to_string()))?;
    }
    Ok(())
}
