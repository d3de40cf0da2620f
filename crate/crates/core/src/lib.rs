//! Radio map estimation core.
//!
//! Everything in this crate is pure computation over in-memory grids and runs
//! under `no_std` with an allocator: synthetic scene generation, the three
//! observation regimes, log-distance pathloss fitting, classical interpolation
//! baselines, the two-phase loss suite with analytic gradients, a small
//! convolutional generator/discriminator pair with its trainer, and the
//! evaluation metrics. File formats, configuration and the command line live
//! in the `rmegan` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod eval;
pub mod grid;
pub mod interp;
pub mod losses;
pub mod mbi;
pub mod nn;
pub mod rng;
pub mod sampling;
pub mod scene;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use grid::{
    denormalize_psd, encode_input, encode_input_with_mask, normalize_psd, Cell, EncodedInput,
    Grid, RegionFeatures, SparseSamples, TransmitterSet,
};
