use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    One,
    Two,
}

impl Phase {
    pub fn number(self) -> u8 {
        match self {
            Phase::One => 1,
            Phase::Two => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseConfig {
    /// Relative improvement threshold.
    pub tau: f64,
    /// Number of validation checks in the improvement window.
    pub patience: usize,
    /// Epoch at which phase 2 starts regardless of progress.
    pub max_phase1_epochs: usize,
}

impl PhaseConfig {
    /// Defaults with the fallback at half of `epochs`.
    pub fn for_budget(epochs: usize) -> Self {
        Self {
            tau: 0.01,
            patience: 5,
            max_phase1_epochs: (epochs / 2).max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau >= 0.0) || self.patience < 2 || self.max_phase1_epochs == 0 {
            return Err(Error::Parameter(format!(
                "phase config needs tau >= 0, patience >= 2 and max_phase1_epochs >= 1: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub phase: Phase,
    /// Completed epochs.
    pub epoch: usize,
    pub validation_history: Vec<f64>,
    pub config: PhaseConfig,
    /// First epoch (0-based) trained in phase 2.
    pub onset: Option<usize>,
}

impl PhaseState {
    pub fn new(config: PhaseConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            phase: Phase::One,
            epoch: 0,
            validation_history: Vec::new(),
            config,
            onset: None,
        })
    }

    /// Relative improvement of the running best over the last `patience`
    /// checks, once enough history exists.
    pub fn improvement_ratio(&self) -> Option<f64> {
        let h = &self.validation_history;
        let p = self.config.patience;
        if h.len() < p {
            return None;
        }
        let best = |end: usize| h[..=end].iter().copied().fold(f64::INFINITY, f64::min);
        let reference = best(h.len() - p);
        let current = best(h.len() - 1);
        Some(if reference > 0.0 {
            (reference - current) / reference
        } else {
            0.0
        })
    }
}

/// Records a validation NMSE and moves to phase 2 when progress stalls or the
/// phase-1 budget is spent. Phase 2 is never left.
pub fn phase_step(mut state: PhaseState, new_val_nmse: f64) -> PhaseState {
    state.validation_history.push(new_val_nmse);
    state.epoch = state.validation_history.len();
    if state.phase == Phase::One {
        let stalled = state.improvement_ratio().is_some_and(|r| r < state.config.tau);
        if stalled || state.epoch >= state.config.max_phase1_epochs {
            state.phase = Phase::Two;
            state.onset = Some(state.epoch);
        }
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(max: usize) -> PhaseConfig {
        PhaseConfig { tau: 0.01, patience: 5, max_phase1_epochs: max }
    }

    fn run(history: &[f64], max: usize) -> PhaseState {
        history
            .iter()
            .fold(PhaseState::new(cfg(max)).unwrap(), |s, &v| phase_step(s, v))
    }

    #[test]
    fn improving_history_waits_for_fallback() {
        let h: std::vec::Vec<f64> = (0..30).map(|i| 0.5f64 * 0.9f64.powi(i)).collect();
        let s = run(&h[..19], 20);
        assert_eq!(s.phase, Phase::One);
        let s = phase_step(s, h[19]);
        assert_eq!((s.phase, s.onset), (Phase::Two, Some(20)));
    }

    #[test]
    fn flat_history_switches_at_patience() {
        let s = run(&[0.2; 4], 100);
        assert_eq!(s.phase, Phase::One);
        let s = phase_step(s, 0.2);
        assert_eq!((s.phase, s.onset), (Phase::Two, Some(5)));
    }

    #[test]
    fn matches_scripted_recomputation() {
        let h = [0.10, 0.099, 0.0989, 0.0988, 0.09, 0.085, 0.0849, 0.0848, 0.0847, 0.0846, 0.0845];
        let mut expected = None;
        for n in 5..=h.len() {
            let best_ref = h[..=n - 5].iter().cloned().fold(f64::MAX, f64::min);
            let best_now = h[..n].iter().cloned().fold(f64::MAX, f64::min);
            if (best_ref - best_now) / best_ref < 0.01 {
                expected = Some(n);
                break;
            }
        }
        let s = run(&h, 100);
        assert_eq!(s.onset, expected);
        assert!(expected.is_some());
    }

    #[test]
    fn never_returns_to_phase_one() {
        let mut s = run(&[0.3; 5], 100);
        for v in [0.01, 0.001, 0.0001] {
            s = phase_step(s, v);
            assert_eq!(s.phase, Phase::Two);
        }
        assert_eq!(s.onset, Some(5));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(PhaseState::new(PhaseConfig { tau: -1.0, ..cfg(3) }).is_err());
        assert!(PhaseState::new(PhaseConfig { patience: 1, ..cfg(3) }).is_err());
    }
}
