//! Monte Carlo simulation of optical-trap loading by laser-induced acoustic
//! desorption (LIAD): nanoparticles launched from a substrate fly through
//! residual gas into a dual-beam standing-wave trap.
//!
//! Modules, bottom-up:
//! - [`physics`]: closed-form particle, gas and trap quantities.
//! - [`dynamics`]: single-trajectory propagation and capture detection.
//! - [`montecarlo`]: launch sampling, seeded event ensembles, sweeps.
//! - [`analysis`]: spectra, Lorentzian fits, histograms, intervals.

pub mod analysis;
pub mod constants;
pub mod dynamics;
pub mod error;
pub mod montecarlo;
pub mod physics;

pub use error::{Error, Result};
