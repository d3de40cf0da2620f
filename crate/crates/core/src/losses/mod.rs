//! Estimator losses with analytic gradients, the two-phase combiner and the
//! phase controller.

mod phase;
mod pixel;
mod ssim;

pub use phase::{phase_step, Phase, PhaseConfig, PhaseState};
pub use pixel::{grad4, l_geo, l_gradient, l_hpf, l_hpf_selected, l_mse, l_tv, GradientForm};
pub use ssim::{l_ssim, ms_ssim, SsimConfig};

use alloc::format;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// A loss value and its gradient with respect to the estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub value: f64,
    pub grad: Grid,
}

/// Weights `lambda1..lambda7` for the adversarial, MSE, TV, gradient, SSIM,
/// geometric and frequency terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub adversarial: f64,
    pub mse: f64,
    pub tv: f64,
    pub gradient: f64,
    pub ssim: f64,
    pub geo: f64,
    pub hpf: f64,
}

impl LossWeights {
    pub const ZERO: Self = Self {
        adversarial: 0.0,
        mse: 0.0,
        tv: 0.0,
        gradient: 0.0,
        ssim: 0.0,
        geo: 0.0,
        hpf: 0.0,
    };

    pub fn phase1_default() -> Self {
        Self {
            adversarial: 1.0,
            mse: 10.0,
            tv: 0.01,
            gradient: 1.0,
            ..Self::ZERO
        }
    }

    pub fn phase2_default() -> Self {
        Self {
            adversarial: 10.0,
            mse: 1.0,
            tv: 0.001,
            ssim: 1e-4,
            geo: 1e-4,
            hpf: 1e-4,
            ..Self::ZERO
        }
    }

    pub fn as_array(&self) -> [f64; 7] {
        [self.adversarial, self.mse, self.tv, self.gradient, self.ssim, self.geo, self.hpf]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::Parameter(format!("loss weights must be finite and nonnegative: {self:?}")))
        }
    }

    /// Terms the combiner reads in `phase`, as `(weight, name)`.
    fn active(&self, phase: Phase) -> [(f64, usize); 6] {
        let w = self.as_array();
        match phase {
            Phase::One => [(w[0], 0), (w[1], 1), (w[2], 2), (w[3], 3), (0.0, 4), (0.0, 5)],
            Phase::Two => [(w[0], 0), (w[1], 1), (w[2], 2), (w[4], 4), (w[5], 5), (w[6], 6)],
        }
    }
}

/// Individual loss terms; only those with nonzero weight in the active phase
/// need to be present.
#[derive(Debug, Clone, Default)]
pub struct LossComponents {
    pub adversarial: Option<LossTerm>,
    pub mse: Option<LossTerm>,
    pub tv: Option<LossTerm>,
    pub gradient: Option<LossTerm>,
    pub ssim: Option<LossTerm>,
    pub geo: Option<LossTerm>,
    pub hpf: Option<LossTerm>,
}

const NAMES: [&str; 7] = ["adversarial", "mse", "tv", "gradient", "ssim", "geo", "hpf"];

impl LossComponents {
    fn get(&self, i: usize) -> Option<&LossTerm> {
        [&self.adversarial, &self.mse, &self.tv, &self.gradient, &self.ssim, &self.geo, &self.hpf][i].as_ref()
    }
}

/// Weighted sum of the phase's loss terms and of their gradients.
pub fn combine_loss(
    phase: Phase,
    weights: &LossWeights,
    components: &LossComponents,
    dims: (usize, usize),
) -> Result<LossTerm> {
    weights.validate()?;
    let mut value = 0.0;
    let mut grad = Grid::zeros(dims.0, dims.1);
    for (w, i) in weights.active(phase) {
        if w == 0.0 {
            continue;
        }
        let term = components.get(i).ok_or_else(|| {
            Error::InvalidInput(format!("loss term `{}` has weight {w} but was not computed", NAMES[i]))
        })?;
        if term.grad.dims() != dims {
            return Err(Error::dims(dims, term.grad.dims()));
        }
        value += w * term.value;
        grad.values_mut()
            .iter_mut()
            .zip(term.grad.values())
            .for_each(|(g, t)| *g += w * t);
    }
    Ok(LossTerm { value, grad })
}
