//! Model-free interpolation baselines: inverse distance weighting, radial
//! basis functions and ordinary kriging.

mod idw;
mod kriging;
mod rbf;

pub use idw::idw_interpolate;
pub use kriging::{
    empirical_semivariogram, fit_exponential, kriging_interpolate, kriging_interpolate_with,
    KrigingConfig, LagBin, Neighborhood, OrdinaryKriging, VariogramModel,
};
pub use rbf::{default_shape_eps, rbf_interpolate, RbfKernel, RbfModel};

use crate::grid::Cell;

#[inline]
pub(crate) fn cell_distance(a: Cell, b: Cell) -> f64 {
    crate::scene::distance(a, b)
}
