//! JSON run configuration. Every field has a default, so `{}` is a valid
//! file; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::{ControlProblem, CostSpec, Method, OptimizeOptions, TrackingTarget};
use crate::error::{Error, Result, Violation};
use crate::grid::{Basis, Component, DomainSpec, ModeIndex, NodalField, VectorModal};
use crate::noise::{JumpSpec, MarkDistribution, NoiseSpec, WienerSpec};
use crate::operators::{Modulated, ModelParams};
use crate::timestepper::SimConfig;

/// One term `amplitude · φ_jk e_component` of a modal field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeTerm {
    pub j: usize,
    pub k: usize,
    pub component: Component,
    pub amplitude: f64,
}

impl ModeTerm {
    pub fn new(j: usize, k: usize, component: Component, amplitude: f64) -> Self {
        Self {
            j,
            k,
            component,
            amplitude,
        }
    }
}

fn modal_from_terms(d: &DomainSpec, terms: &[ModeTerm], key: &str, v: &mut Vec<Violation>) -> VectorModal {
    let mut out = VectorModal::zeros_for(d);
    for (i, t) in terms.iter().enumerate() {
        let m = ModeIndex::vector(t.j, t.k, t.component);
        let cur = out.get(m);
        match cur {
            Ok(c) if t.amplitude.is_finite() => {
                out.set(m, c + t.amplitude).expect("index checked by get");
            }
            Ok(_) => v.push(Violation::new(format!("{key}[{i}].amplitude"), "must be finite")),
            Err(e) => v.push(Violation::new(format!("{key}[{i}]"), e.to_string())),
        }
    }
    out
}

fn grid_values(d: &DomainSpec, values: &[f64], key: &str, v: &mut Vec<Violation>) -> Option<Vec<f64>> {
    if values.len() != d.nodes() {
        v.push(Violation::new(
            key,
            format!("expected {} grid values (grid_x1·grid_x2), got {}", d.nodes(), values.len()),
        ));
        None
    } else {
        Some(values.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DepthSpec {
    Constant { value: f64 },
    /// h = h0 + slope_x1·x₁ + slope_x2·x₂
    Linear { h0: f64, slope_x1: f64, slope_x2: f64 },
    /// Row-major node values, index i·grid_x2 + l.
    Grid { values: Vec<f64> },
}

impl Default for DepthSpec {
    fn default() -> Self {
        Self::Linear {
            h0: 1.0,
            slope_x1: 0.25,
            slope_x2: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FlowSpec {
    Zero,
    Uniform { w1: f64, w2: f64, frequency: f64 },
    Grid { w1: Vec<f64>, w2: Vec<f64>, frequency: f64 },
}

impl Default for FlowSpec {
    fn default() -> Self {
        Self::Uniform {
            w1: 0.1,
            w2: 0.0,
            frequency: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcingSpec {
    #[default]
    Zero,
    Modes { terms: Vec<ModeTerm>, frequency: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub alpha: f64,
    pub beta: f64,
    pub g: f64,
    pub r: f64,
    pub depth: DepthSpec,
    pub background_flow: FlowSpec,
    pub forcing: ForcingSpec,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.5,
            g: 1.0,
            r: 0.5,
            depth: DepthSpec::default(),
            background_flow: FlowSpec::default(),
            forcing: ForcingSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ElevationSpec {
    #[default]
    Zero,
    Gaussian { amplitude: f64, center_x1: f64, center_x2: f64, width: f64 },
    Grid { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSection {
    pub velocity: Vec<ModeTerm>,
    pub elevation: ElevationSpec,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            velocity: vec![ModeTerm::new(1, 1, Component::X1, 0.5)],
            elevation: ElevationSpec::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpectrumSpec {
    /// q_jk = q0 · λ_jk^(−exponent)
    Power { q0: f64, exponent: f64 },
    /// One value per scalar mode, j-major.
    Explicit { q: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WienerSection {
    pub spectrum: SpectrumSpec,
    pub sigma_add: f64,
    pub sigma_mult: f64,
}

impl Default for WienerSection {
    fn default() -> Self {
        Self {
            spectrum: SpectrumSpec::Power {
                q0: 0.01,
                exponent: 1.5,
            },
            sigma_add: 1.0,
            sigma_mult: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JumpSection {
    pub total_intensity: f64,
    pub marks: MarkDistribution,
    pub amp_add: f64,
    pub amp_mult: f64,
    pub profile: Vec<ModeTerm>,
}

impl Default for JumpSection {
    fn default() -> Self {
        Self {
            total_intensity: 2.0,
            marks: MarkDistribution::Uniform { a: -1.0, b: 1.0 },
            amp_add: 0.1,
            amp_mult: 0.1,
            profile: vec![ModeTerm::new(1, 1, Component::X1, 1.0)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: String,
    /// Energy and channel time series.
    pub csv: bool,
    /// TDF1 snapshots of every recorded state.
    pub snapshots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: "tidal-out".into(),
            csv: true,
            snapshots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSection {
    pub modes: usize,
    pub bound: f64,
    pub w_track: f64,
    pub w_reg: f64,
    /// Steady tracking target.
    pub target: Vec<ModeTerm>,
    pub ensemble: usize,
    pub method: Method,
    pub options: OptimizeOptions,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            modes: 1,
            bound: 1.0,
            w_track: 1.0,
            w_reg: 0.01,
            target: Vec::new(),
            ensemble: 8,
            method: Method::FdGradient,
            options: OptimizeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub domain: DomainSpec,
    pub model: ModelSection,
    pub initial: InitialSection,
    pub wiener: WienerSection,
    pub jumps: JumpSection,
    pub sim: SimConfig,
    /// Number of paths for ensemble workflows.
    pub ensemble: usize,
    pub outputs: OutputSection,
    pub control: Option<ControlSection>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            domain: DomainSpec::default(),
            model: ModelSection::default(),
            initial: InitialSection::default(),
            wiener: WienerSection::default(),
            jumps: JumpSection::default(),
            sim: SimConfig::default(),
            ensemble: 128,
            outputs: OutputSection::default(),
            control: None,
        }
    }
}

/// Everything a workflow needs, built from a validated config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub domain: DomainSpec,
    pub params: ModelParams,
    pub noise: NoiseSpec,
    pub u0: VectorModal,
    pub z0: NodalField,
    pub sim: SimConfig,
    pub ensemble: usize,
}

impl RunConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                e.into_inner().to_string()
            } else {
                format!("{path}: {}", e.into_inner())
            }
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Build and validate; all violations are collected before returning.
    pub fn build(&self) -> Result<Setup> {
        let mut v = self.domain.violations("domain");
        if !v.is_empty() {
            return Err(Error::Config(v));
        }
        let d = &self.domain;
        let basis = Basis::new(d)?;

        let depth = match &self.model.depth {
            DepthSpec::Constant { value } => Some(NodalField::scalar_from_fn(d, |_, _| *value)),
            DepthSpec::Linear {
                h0,
                slope_x1,
                slope_x2,
            } => Some(NodalField::scalar_from_fn(d, |x, y| h0 + slope_x1 * x + slope_x2 * y)),
            DepthSpec::Grid { values } => grid_values(d, values, "model.depth.values", &mut v).map(|vals| NodalField {
                grid_x1: d.grid_x1,
                grid_x2: d.grid_x2,
                data: vec![vals],
            }),
        };
        let background = match &self.model.background_flow {
            FlowSpec::Zero => Some(Modulated::steady(NodalField::vector_zeros(d))),
            FlowSpec::Uniform { w1, w2, frequency } => Some(Modulated {
                base: NodalField::vector_from_fn(d, |_, _| (*w1, *w2)),
                frequency: *frequency,
            }),
            FlowSpec::Grid { w1, w2, frequency } => {
                let a = grid_values(d, w1, "model.background_flow.w1", &mut v);
                let b = grid_values(d, w2, "model.background_flow.w2", &mut v);
                a.zip(b).map(|(a, b)| Modulated {
                    base: NodalField {
                        grid_x1: d.grid_x1,
                        grid_x2: d.grid_x2,
                        data: vec![a, b],
                    },
                    frequency: *frequency,
                })
            }
        };
        let forcing = match &self.model.forcing {
            ForcingSpec::Zero => Modulated::steady(VectorModal::zeros_for(d)),
            ForcingSpec::Modes { terms, frequency } => Modulated {
                base: modal_from_terms(d, terms, "model.forcing.terms", &mut v),
                frequency: *frequency,
            },
        };
        let u0 = modal_from_terms(d, &self.initial.velocity, "initial.velocity", &mut v);
        let z0 = match &self.initial.elevation {
            ElevationSpec::Zero => Some(NodalField::scalar_zeros(d)),
            ElevationSpec::Gaussian {
                amplitude,
                center_x1,
                center_x2,
                width,
            } => {
                if !(*width > 0.0) {
                    v.push(Violation::new("initial.elevation.width", "must be positive"));
                }
                Some(NodalField::scalar_from_fn(d, |x, y| {
                    let r2 = (x - center_x1).powi(2) + (y - center_x2).powi(2);
                    amplitude * (-r2 / (width * width)).exp()
                }))
            }
            ElevationSpec::Grid { values } => grid_values(d, values, "initial.elevation.values", &mut v).map(|vals| {
                NodalField {
                    grid_x1: d.grid_x1,
                    grid_x2: d.grid_x2,
                    data: vec![vals],
                }
            }),
        };
        if let Some(z) = &z0 {
            if !z.is_finite() {
                v.push(Violation::new("initial.elevation", "must be finite"));
            }
        }

        let wiener = match &self.wiener.spectrum {
            SpectrumSpec::Power { q0, exponent } => {
                if !(q0.is_finite() && *q0 >= 0.0) {
                    v.push(Violation::new("wiener.spectrum.q0", "must be nonnegative"));
                }
                if !(exponent.is_finite() && *exponent > 1.0) {
                    v.push(Violation::new("wiener.spectrum.exponent", "must exceed 1"));
                }
                WienerSpec::power_law(d, *q0, *exponent, self.wiener.sigma_add, self.wiener.sigma_mult)
            }
            SpectrumSpec::Explicit { q } => {
                if q.len() != d.scalar_modes() {
                    v.push(Violation::new(
                        "wiener.spectrum.q",
                        format!("expected {} values, got {}", d.scalar_modes(), q.len()),
                    ));
                }
                WienerSpec {
                    q: q.clone(),
                    sigma_add: self.wiener.sigma_add,
                    sigma_mult: self.wiener.sigma_mult,
                    decay_exponent: None,
                }
            }
        };
        if wiener.q.len() == d.scalar_modes() {
            if let Err(e) = wiener.validate(d) {
                v.push(Violation::new("wiener", e.to_string()));
            }
        }
        let jumps = JumpSpec {
            total_intensity: self.jumps.total_intensity,
            marks: self.jumps.marks.clone(),
            amp_add: self.jumps.amp_add,
            amp_mult: self.jumps.amp_mult,
            profile: modal_from_terms(d, &self.jumps.profile, "jumps.profile", &mut v),
        };
        if let Err(e) = self.jumps.marks.validate() {
            v.push(Violation::new("jumps.marks", e));
        } else if let Err(e) = jumps.validate(d) {
            v.push(Violation::new("jumps", e.to_string()));
        }
        v.extend(self.sim.violations("sim"));
        if self.ensemble == 0 {
            v.push(Violation::new("ensemble", "must be at least 1"));
        }
        if let Some(c) = &self.control {
            if c.modes == 0 || c.modes > d.scalar_modes() {
                v.push(Violation::new("control.modes", format!("must lie in 1..={}", d.scalar_modes())));
            }
            if !(c.bound.is_finite() && c.bound > 0.0) {
                v.push(Violation::new("control.bound", "must be positive"));
            }
            if !(c.w_track.is_finite() && c.w_track >= 0.0) {
                v.push(Violation::new("control.w_track", "must be nonnegative"));
            }
            if !(c.w_reg.is_finite() && c.w_reg > 0.0) {
                v.push(Violation::new("control.w_reg", "must be positive"));
            }
            if c.ensemble == 0 {
                v.push(Violation::new("control.ensemble", "must be at least 1"));
            }
            if c.options.budget == 0 {
                v.push(Violation::new("control.options.budget", "must be at least 1"));
            }
            modal_from_terms(d, &c.target, "control.target", &mut v);
        }

        let params = match (depth, background) {
            (Some(h), Some(w)) => {
                match ModelParams::new(
                    basis,
                    self.model.alpha,
                    self.model.beta,
                    self.model.g,
                    self.model.r,
                    h,
                    w,
                    forcing,
                ) {
                    Ok(p) => Some(p),
                    Err(Error::Config(more)) => {
                        v.extend(more);
                        None
                    }
                    Err(e) => return Err(e),
                }
            }
            _ => None,
        };
        if !v.is_empty() {
            return Err(Error::Config(v));
        }
        Ok(Setup {
            domain: d.clone(),
            params: params.expect("no violations"),
            noise: NoiseSpec { wiener, jumps },
            u0,
            z0: z0.expect("no violations"),
            sim: self.sim.clone(),
            ensemble: self.ensemble,
        })
    }

    /// The control problem of the `control` section, if any.
    pub fn control_problem(&self, setup: &Setup) -> Result<Option<(ControlProblem, Method, OptimizeOptions)>> {
        let Some(c) = &self.control else {
            return Ok(None);
        };
        let mut v = Vec::new();
        let target = modal_from_terms(&setup.domain, &c.target, "control.target", &mut v);
        if !v.is_empty() {
            return Err(Error::Config(v));
        }
        let field = setup.params.basis().synthesize_vector(&target)?;
        let prob = ControlProblem {
            u0: setup.u0.clone(),
            z0: setup.z0.clone(),
            control_modes: c.modes,
            control_bound: c.bound,
            cost: CostSpec::new(c.w_track, c.w_reg, TrackingTarget::Steady(field))?,
            params: setup.params.clone(),
            noise: setup.noise.clone(),
            sim: setup.sim.clone(),
            seed_set: ControlProblem::derived_seeds(setup.sim.seed, c.ensemble),
        };
        Ok(Some((prob, c.method, c.options.clone())))
    }
}

/// Read, parse and validate a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg = RunConfig::from_json(&text).map_err(|message| Error::Parse {
        path: path.to_path_buf(),
        message,
    })?;
    cfg.build()?;
    Ok(cfg)
}
