//! Spectral-Galerkin simulation of stochastic tidal dynamics on a rectangular
//! basin, driven by Q-Wiener and compensated Poisson noise, together with
//! numerical checks of the energy estimates and a sample-average control solver.

pub mod control;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod io;
pub mod noise;
pub mod operators;
pub mod timestepper;

pub use error::{Error, Result, Violation};
