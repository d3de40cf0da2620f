use libm::pow;

use crate::error::{Error, Result};
use crate::grid::{Grid, SparseSamples};

use super::cell_distance;

/// Inverse distance weighting with weights `d^-p`; observed cells copy their
/// observation.
pub fn idw_interpolate(samples: &SparseSamples, power: f64, dims: (usize, usize)) -> Result<Grid> {
    if samples.is_empty() {
        return Err(Error::Estimator("IDW needs at least one observation".into()));
    }
    let (h, w) = dims;
    samples.validate_bounds(h, w)?;
    let mut out = Grid::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let mut num = 0.0;
            let mut den = 0.0;
            let mut hit = None;
            for (cell, x) in samples.iter() {
                let d = cell_distance(cell, (r, c));
                if d == 0.0 {
                    hit = Some(x);
                    break;
                }
                let wgt = pow(d, -power);
                num += wgt * x;
                den += wgt;
            }
            out[(r, c)] = hit.unwrap_or(num / den);
        }
    }
    Ok(out)
}
