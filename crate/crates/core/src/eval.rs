//! Error metrics, outage diagnosis, histograms and evaluation reports.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use libm::sqrt;

use crate::error::{Error, Result};
use crate::grid::{Grid, RegionFeatures};
use crate::sampling::SamplingSetup;

/// Default outage thresholds: 5 and 25 on the 8-bit scale.
pub const OUTAGE_THRESHOLDS: [f64; 2] = [5.0 / 255.0, 25.0 / 255.0];

fn squared_error(y: &Grid, est: &Grid) -> Result<f64> {
    y.ensure_same_dims(est)?;
    Ok(y.values().iter().zip(est.values()).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// `||y - est||^2 / ||y||^2`.
pub fn nmse(y: &Grid, est: &Grid) -> Result<f64> {
    let err = squared_error(y, est)?;
    let energy: f64 = y.values().iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::InvalidInput("NMSE is undefined for an all-zero reference".into()));
    }
    Ok(err / energy)
}

pub fn rmse(y: &Grid, est: &Grid) -> Result<f64> {
    Ok(sqrt(squared_error(y, est)? / y.len() as f64))
}

/// NMSE and RMSE over the cells where `mask` is 1.
pub fn masked_metrics(y: &Grid, est: &Grid, mask: &Grid) -> Result<(f64, f64)> {
    y.ensure_same_dims(est)?;
    y.ensure_same_dims(mask)?;
    mask.validate_binary()?;
    let (mut err, mut energy, mut n) = (0.0, 0.0, 0usize);
    for ((a, b), m) in y.values().iter().zip(est.values()).zip(mask.values()) {
        if *m == 1.0 {
            err += (a - b) * (a - b);
            energy += a * a;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidInput("mask selects no cells".into()));
    }
    if energy == 0.0 {
        return Err(Error::InvalidInput("NMSE is undefined for an all-zero masked reference".into()));
    }
    Ok((err / energy, sqrt(err / n as f64)))
}

/// Binary map of cells whose PSD falls below `threshold`.
pub fn outage_map(map: &Grid, threshold: f64) -> Grid {
    map.map(|v| if v < threshold { 1.0 } else { 0.0 })
}

/// Fraction of cells whose outage state differs between `y` and `est`.
pub fn outage_error(y: &Grid, est: &Grid, threshold: f64) -> Result<f64> {
    y.ensure_same_dims(est)?;
    let miss = y
        .values()
        .iter()
        .zip(est.values())
        .filter(|(a, b)| (**a < threshold) != (**b < threshold))
        .count();
    Ok(miss as f64 / y.len() as f64)
}

/// Counts in `n_bins` equal-width bins on `[0, 1]`; values outside are
/// clamped into the end bins.
pub fn histogram(map: &Grid, n_bins: usize) -> Result<Vec<usize>> {
    if n_bins == 0 {
        return Err(Error::Parameter("histogram needs at least one bin".into()));
    }
    let mut counts = vec![0; n_bins];
    for &v in map.values() {
        let b = if v.is_nan() || v <= 0.0 {
            0
        } else {
            ((v * n_bins as f64) as usize).min(n_bins - 1)
        };
        counts[b] += 1;
    }
    Ok(counts)
}

/// Named rectangular or arbitrary region mask.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedMask {
    pub name: String,
    pub mask: Grid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub outage_thresholds: Vec<f64>,
    pub masks: Vec<NamedMask>,
    pub histogram_bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            outage_thresholds: OUTAGE_THRESHOLDS.to_vec(),
            masks: Vec::new(),
            histogram_bins: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMetrics {
    pub region: usize,
    pub nmse: f64,
    pub rmse: f64,
    /// One entry per configured threshold.
    pub outage_error: Vec<f64>,
    /// One `(nmse, rmse)` per configured mask.
    pub masked: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub estimator: String,
    pub config: EvalConfig,
    pub regions: Vec<RegionMetrics>,
    /// Histogram of all estimates pooled.
    pub histogram: Vec<usize>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl EvalReport {
    pub fn mean_nmse(&self) -> f64 {
        mean(self.regions.iter().map(|r| r.nmse))
    }

    pub fn mean_rmse(&self) -> f64 {
        mean(self.regions.iter().map(|r| r.rmse))
    }

    pub fn mean_outage_error(&self, threshold_index: usize) -> f64 {
        mean(self.regions.iter().map(|r| r.outage_error[threshold_index]))
    }

    /// One row per region and metric: `region,metric,value`, followed by the
    /// `mean` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("region,metric,value\n");
        let mut row = |region: &dyn core::fmt::Display, metric: &str, v: f64| {
            let _ = writeln!(out, "{region},{metric},{v:e}");
        };
        let names = self.metric_names();
        for r in &self.regions {
            for (name, v) in names.iter().zip(Self::region_values(r)) {
                row(&r.region, name, v);
            }
        }
        let means = self.means();
        for (name, v) in names.iter().zip(means) {
            row(&"mean", name, v);
        }
        out
    }

    fn metric_names(&self) -> Vec<String> {
        let mut names = vec![String::from("nmse"), String::from("rmse")];
        for t in &self.config.outage_thresholds {
            names.push(format!("outage_mismatch@{:.0}", t * 255.0));
        }
        for m in &self.config.masks {
            names.push(format!("nmse[{}]", m.name));
            names.push(format!("rmse[{}]", m.name));
        }
        names
    }

    fn region_values(r: &RegionMetrics) -> Vec<f64> {
        let mut v = vec![r.nmse, r.rmse];
        v.extend(&r.outage_error);
        for (a, b) in &r.masked {
            v.push(*a);
            v.push(*b);
        }
        v
    }

    fn means(&self) -> Vec<f64> {
        let k = self.metric_names().len();
        (0..k)
            .map(|i| mean(self.regions.iter().map(|r| Self::region_values(r)[i])))
            .collect()
    }

    /// Plain-text table of the mean metrics.
    pub fn summary(&self) -> String {
        let mut out = format!("estimator: {} ({} regions)\n", self.estimator, self.regions.len());
        for (name, v) in self.metric_names().iter().zip(self.means()) {
            let _ = writeln!(out, "  {name:<24} {v:.6}");
        }
        out
    }
}

/// Runs `estimate` on each `(index, region)` and scores it against the
/// region's ground truth.
pub fn evaluate<'a>(
    estimator: &str,
    regions: impl IntoIterator<Item = (usize, &'a RegionFeatures)>,
    config: &EvalConfig,
    mut estimate: impl FnMut(&RegionFeatures) -> Result<Grid>,
) -> Result<EvalReport> {
    let mut hist = vec![0; config.histogram_bins];
    let mut rows = Vec::new();
    for (index, region) in regions {
        let y = region.ground_truth.as_ref().ok_or_else(|| {
            Error::InvalidInput(format!("region {index} has no ground truth to evaluate against"))
        })?;
        let est = estimate(region)?;
        let outage_error = config
            .outage_thresholds
            .iter()
            .map(|&t| outage_error(y, &est, t))
            .collect::<Result<_>>()?;
        let masked = config
            .masks
            .iter()
            .map(|m| masked_metrics(y, &est, &m.mask))
            .collect::<Result<_>>()?;
        for (h, c) in hist.iter_mut().zip(histogram(&est, config.histogram_bins)?) {
            *h += c;
        }
        rows.push(RegionMetrics {
            region: index,
            nmse: nmse(y, &est)?,
            rmse: rmse(y, &est)?,
            outage_error,
            masked,
        });
    }
    Ok(EvalReport {
        estimator: estimator.into(),
        config: config.clone(),
        regions: rows,
        histogram: hist,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotRow {
    pub setup: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotReport {
    pub reports: Vec<(String, EvalReport)>,
    pub rows: Vec<ZeroShotRow>,
}

impl ZeroShotReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("setup,metric,value\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{:e}", r.setup, r.metric, r.value);
        }
        out
    }
}

/// Evaluates a fixed estimator on the same regions re-observed under each
/// setup. Labels are `setup1`, `setup2`, ... in the order given.
pub fn zero_shot_eval(
    estimator: &str,
    regions: &[(usize, &RegionFeatures)],
    setups: &[SamplingSetup],
    config: &EvalConfig,
    seed: u64,
    mut estimate: impl FnMut(&RegionFeatures) -> Result<Grid>,
) -> Result<ZeroShotReport> {
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for (k, setup) in setups.iter().enumerate() {
        let observed = regions
            .iter()
            .map(|&(i, r)| Ok((i, setup.sample_region(r, seed, i)?)))
            .collect::<Result<Vec<_>>>()?;
        let report = evaluate(estimator, observed.iter().map(|(i, r)| (*i, r)), config, &mut estimate)?;
        let label = format!("setup{}", k + 1);
        for (metric, value) in report.metric_names().into_iter().zip(report.means()) {
            rows.push(ZeroShotRow { setup: label.clone(), metric, value });
        }
        reports.push((label, report));
    }
    Ok(ZeroShotReport { reports, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_grid;

    #[test]
    fn basic_metrics() {
        let y = random_grid(6, 5, 1);
        assert_eq!(nmse(&y, &y).unwrap(), 0.0);
        assert_eq!(rmse(&y, &y).unwrap(), 0.0);
        assert!((nmse(&y, &Grid::zeros(6, 5)).unwrap() - 1.0).abs() < 1e-15);
        assert!(nmse(&Grid::zeros(2, 2), &y).is_err());
    }

    #[test]
    fn rmse_nmse_consistency_and_scale() {
        for seed in 0..10 {
            let y = random_grid(7, 9, seed);
            let e = random_grid(7, 9, seed + 50);
            let mean_sq = y.values().iter().map(|v| v * v).sum::<f64>() / 63.0;
            let (n, r) = (nmse(&y, &e).unwrap(), rmse(&y, &e).unwrap());
            assert!((r * r / n - mean_sq).abs() < 1e-12);
            let n2 = nmse(&y.map(|v| -3.0 * v), &e.map(|v| -3.0 * v)).unwrap();
            assert!((n - n2).abs() < 1e-12);
        }
    }

    #[test]
    fn masks() {
        let y = random_grid(6, 6, 2);
        let e = random_grid(6, 6, 3);
        let full = Grid::filled(6, 6, 1.0);
        let (n, r) = masked_metrics(&y, &e, &full).unwrap();
        assert!((n - nmse(&y, &e).unwrap()).abs() < 1e-15);
        assert!((r - rmse(&y, &e).unwrap()).abs() < 1e-15);
        assert!(masked_metrics(&y, &e, &Grid::zeros(6, 6)).is_err());
        let left = Grid::from_fn(6, 6, |_, c| if c < 2 { 1.0 } else { 0.0 });
        let right = left.map(|v| 1.0 - v);
        let (_, r1) = masked_metrics(&y, &e, &left).unwrap();
        let (_, r2) = masked_metrics(&y, &e, &right).unwrap();
        let total = r1 * r1 * 12.0 + r2 * r2 * 24.0;
        assert!((total - squared_error(&y, &e).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn outage() {
        let y = random_grid(8, 8, 4);
        let e = random_grid(8, 8, 5);
        assert_eq!(outage_error(&y, &y, 0.1).unwrap(), 0.0);
        assert_eq!(outage_error(&y, &e, 0.0).unwrap(), 0.0);
        let (a, b) = (outage_map(&y, 0.3), outage_map(&e, 0.3));
        let xor = a.values().iter().zip(b.values()).filter(|(p, q)| p != q).count();
        assert_eq!(outage_error(&y, &e, 0.3).unwrap(), xor as f64 / 64.0);
    }

    #[test]
    fn histograms() {
        let g = random_grid(10, 10, 6);
        let h = histogram(&g, 50).unwrap();
        assert_eq!(h.iter().sum::<usize>(), 100);
        let mut naive = [0usize; 50];
        for &v in g.values() {
            let mut b = 0;
            while b < 49 && v >= (b + 1) as f64 / 50.0 {
                b += 1;
            }
            naive[b] += 1;
        }
        assert_eq!(h, naive);
        let c = histogram(&Grid::filled(4, 4, 0.37), 50).unwrap();
        assert_eq!(c.iter().filter(|&&n| n > 0).count(), 1);
        assert_eq!(histogram(&Grid::filled(2, 2, 1.0), 50).unwrap()[49], 4);
    }
}
