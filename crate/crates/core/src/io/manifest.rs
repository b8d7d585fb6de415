//! Reproducibility metadata written next to every set of outputs.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{BdgConstants, EnergyConstants};
use crate::io::config::{RunConfig, Setup};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    /// min h
    pub eps: f64,
    /// max h
    pub mu: f64,
    /// max |∇h|
    pub grad_bound: f64,
    pub poincare: f64,
    /// noise growth constant
    pub k: f64,
    /// noise Lipschitz constant
    pub l: f64,
    pub c: f64,
    pub c_prime: f64,
}

impl DerivedConstants {
    pub fn from_setup(s: &Setup) -> Self {
        let k = s.params.constants();
        let e = EnergyConstants::assemble(&s.params, &s.noise, BdgConstants::default());
        Self {
            eps: k.eps,
            mu: k.mu,
            grad_bound: k.grad_bound,
            poincare: k.poincare,
            k: e.k,
            l: s.noise.lipschitz_constant(),
            c: e.c,
            c_prime: e.c_prime,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    /// Full configuration with every default filled in.
    pub config: RunConfig,
    pub master_seed: u64,
    pub path_seeds: Vec<u64>,
    pub derived: DerivedConstants,
    /// Files written by the run, relative to the output directory.
    pub artifacts: Vec<String>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn new(command: Vec<String>, config: &RunConfig, setup: &Setup, path_seeds: Vec<u64>) -> Self {
        Self {
            tool: "tidal".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            config: config.clone(),
            master_seed: setup.sim.seed,
            path_seeds,
            derived: DerivedConstants::from_setup(setup),
            artifacts: Vec::new(),
            wall_clock_seconds: 0.0,
        }
    }
}
