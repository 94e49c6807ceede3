//! Simulation of spatially correlated twin-beam CCD frames and the analysis
//! chain used for sub-shot-noise quantum imaging.
//!
//! The crate is organised bottom-up:
//!
//! * [`sim`] generates frames with multi-thermal pair statistics, efficiency
//!   maps, an absorbing object and detector background, keeping ground truth.
//! * [`estimators`] bins frames, computes spatial moments, the noise reduction
//!   factor, Fano factors, flat-field and background corrections, and the
//!   closed-form predictions they are checked against.
//! * [`alignment`] locates the center of symmetry by scanning the idler region.
//! * [`imaging`] forms quantum, differential-classical and direct absorption
//!   images and compares them through correlation coefficients and SNR ratios.
//! * [`io`] reads and writes frame bundles, CSV tables and PGM previews.

pub mod alignment;
pub mod config;
pub mod error;
pub mod estimators;
pub mod frame;
pub mod imaging;
pub mod io;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
pub use frame::Frame;
