//! Initial-value optimal control by sample-average approximation: the
//! control U shifts the initial velocity, the cost is estimated on a fixed
//! seed set (common random numbers) and minimized over the first m modes.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::mean_stderr;
use crate::error::{Error, Result, Violation};
use crate::grid::{Basis, NodalField, VectorModal};
use crate::noise::{path_rng, NoiseSpec};
use crate::noise::derive_path_seed;
use crate::operators::ModelParams;
use crate::timestepper::{SimConfig, Simulator, State, TrajectoryRecord};

/// Reference velocity u_ref(t, x) on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrackingTarget {
    Steady(NodalField),
    /// Linear interpolation in time between the given fields.
    Path { times: Vec<f64>, fields: Vec<NodalField> },
}

impl TrackingTarget {
    /// Target following the recorded snapshots of a run.
    pub fn from_record(rec: &TrajectoryRecord, basis: &Basis) -> Result<Self> {
        let fields = rec
            .states
            .iter()
            .map(|s| basis.synthesize_vector(&s.u))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::Path {
            times: rec.times.clone(),
            fields,
        })
    }

    pub fn at(&self, t: f64) -> NodalField {
        match self {
            Self::Steady(f) => f.clone(),
            Self::Path { times, fields } => {
                let k = times.partition_point(|s| *s <= t);
                if k == 0 {
                    return fields[0].clone();
                }
                if k == times.len() || times[k - 1] == t {
                    return fields[k - 1].clone();
                }
                let w = (t - times[k - 1]) / (times[k] - times[k - 1]);
                let mut out = fields[k - 1].clone();
                out.scale(1.0 - w);
                out.axpy(w, &fields[k]);
                out
            }
        }
    }

    fn validate(&self, basis: &Basis) -> Result<()> {
        let d = basis.domain();
        let ok = |f: &NodalField| f.matches(d) && f.components() == 2;
        match self {
            Self::Steady(f) => {
                if !ok(f) {
                    return Err(Error::Dimension("target must be a vector grid field".into()));
                }
            }
            Self::Path { times, fields } => {
                if times.is_empty() || times.len() != fields.len() {
                    return Err(Error::Dimension("target times and fields differ in length".into()));
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::Contract("target times must increase".into()));
                }
                if !fields.iter().all(ok) {
                    return Err(Error::Dimension("target must be a vector grid field".into()));
                }
            }
        }
        Ok(())
    }
}

/// L(t, u, U) = w_track |u − u_ref|² + w_reg |U|², with k(U) = w_reg |U|².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub w_track: f64,
    pub w_reg: f64,
    pub target: TrackingTarget,
}

impl CostSpec {
    pub fn new(w_track: f64, w_reg: f64, target: TrackingTarget) -> Result<Self> {
        let mut v = Vec::new();
        if !(w_track.is_finite() && w_track >= 0.0) {
            v.push(Violation::new("control.w_track", "must be nonnegative"));
        }
        if !(w_reg.is_finite() && w_reg > 0.0) {
            v.push(Violation::new("control.w_reg", "must be positive"));
        }
        if !v.is_empty() {
            return Err(Error::Config(v));
        }
        Ok(Self {
            w_track,
            w_reg,
            target,
        })
    }

    /// Pointwise density for a velocity value, reference value and control value.
    pub fn density(&self, u: [f64; 2], u_ref: [f64; 2], c: [f64; 2]) -> f64 {
        let du = (u[0] - u_ref[0]).powi(2) + (u[1] - u_ref[1]).powi(2);
        self.w_track * du + self.k(c)
    }

    pub fn k(&self, c: [f64; 2]) -> f64 {
        self.w_reg * (c[0] * c[0] + c[1] * c[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub samples: usize,
    /// min over samples of L − k(U)
    pub min_excess: f64,
    pub lower_bound_ok: bool,
    /// k(sU)/s² for s on a ray
    pub coercivity_ratios: Vec<f64>,
    pub coercive: bool,
    pub satisfied: bool,
}

/// Lower bound L ≥ k(U) on random samples and quadratic growth of k on a ray.
pub fn check_admissibility(cost: &CostSpec, samples: usize, seed: u64) -> AdmissibilityReport {
    let mut rng = path_rng(seed);
    let mut min_excess = f64::INFINITY;
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
    for _ in 0..samples {
        let (u, r, c) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        min_excess = min_excess.min(cost.density(u, r, c) - cost.k(c));
    }
    let dir = [0.6, -0.8];
    let coercivity_ratios: Vec<f64> = [1.0, 10.0, 100.0, 1000.0]
        .iter()
        .map(|s| cost.k([s * dir[0], s * dir[1]]) / (s * s))
        .collect();
    let r0 = coercivity_ratios[0];
    let coercive = r0 > 0.0 && coercivity_ratios.iter().all(|r| (r - r0).abs() <= 1e-12 * r0);
    let lower_bound_ok = samples == 0 || min_excess >= 0.0;
    AdmissibilityReport {
        samples,
        min_excess,
        lower_bound_ok,
        coercivity_ratios,
        coercive,
        satisfied: lower_bound_ok && coercive,
    }
}

/// Everything needed to evaluate Ĵ(U).
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub u0: VectorModal,
    pub z0: NodalField,
    /// U lives in the first m modal slots of each component.
    pub control_modes: usize,
    /// Projection radius: ‖U‖² ≤ C_c.
    pub control_bound: f64,
    pub cost: CostSpec,
    pub params: ModelParams,
    pub noise: NoiseSpec,
    pub sim: SimConfig,
    pub seed_set: Vec<u64>,
}

impl ControlProblem {
    /// Seed set derived from the run seed, one per ensemble member.
    pub fn derived_seeds(master: u64, ensemble: usize) -> Vec<u64> {
        (0..ensemble).map(|i| derive_path_seed(master, i as u64)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.params.domain();
        let mut v = Vec::new();
        if self.control_modes == 0 || self.control_modes > d.scalar_modes() {
            v.push(Violation::new(
                "control.modes",
                format!("must lie in 1..={}", d.scalar_modes()),
            ));
        }
        if !(self.control_bound.is_finite() && self.control_bound > 0.0) {
            v.push(Violation::new("control.bound", "must be positive"));
        }
        if self.seed_set.is_empty() {
            v.push(Violation::new("control.ensemble", "must be at least 1"));
        }
        if !v.is_empty() {
            return Err(Error::Config(v));
        }
        self.sim.validate()?;
        self.noise.validate(d)?;
        self.cost.target.validate(self.params.basis())?;
        if self.u0.modes() != (d.modes_x1, d.modes_x2) {
            return Err(Error::Dimension("u0 shape does not match domain".into()));
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        2 * self.control_modes
    }

    /// Control coefficients to a modal field.
    pub fn field(&self, coeffs: &[f64]) -> Result<VectorModal> {
        let m = self.control_modes;
        if coeffs.len() != 2 * m {
            return Err(Error::Dimension(format!(
                "expected {} control coefficients, got {}",
                2 * m,
                coeffs.len()
            )));
        }
        let mut u = VectorModal::zeros_for(self.params.domain());
        u.comp1.coeffs[..m].copy_from_slice(&coeffs[..m]);
        u.comp2.coeffs[..m].copy_from_slice(&coeffs[m..]);
        Ok(u)
    }

    /// Radial projection onto ‖U‖² ≤ C_c.
    pub fn project(&self, coeffs: &mut [f64]) {
        let n2: f64 = coeffs.iter().map(|c| c * c).sum();
        if n2 > self.control_bound {
            let s = (self.control_bound / n2).sqrt();
            for c in coeffs.iter_mut() {
                *c *= s;
            }
            // rounding can leave the norm a hair above the bound
            let again: f64 = coeffs.iter().map(|c| c * c).sum();
            if again > self.control_bound {
                let s = (self.control_bound / again).sqrt() * (1.0 - 1e-15);
                for c in coeffs.iter_mut() {
                    *c *= s;
                }
            }
        }
    }
}

/// Tracking integral ∫₀ᵀ∫ w_track|u − u_ref|² on one path (trapezoid in time).
fn path_tracking(prob: &ControlProblem, u0: &VectorModal, seed: u64) -> Result<f64> {
    let b = prob.params.basis();
    let sim = Simulator::new(&prob.params, &prob.noise, &prob.sim)?;
    let dt = prob.sim.dt;
    let n = prob.sim.steps();
    let mut rng = path_rng(seed);
    let mut acc = 0.0;
    let mut err: Option<Error> = None;
    let mut obs = |s: &State| {
        if err.is_some() {
            return;
        }
        let r = (|| -> Result<f64> {
            let mut diff = b.synthesize_vector(&s.u)?;
            diff.axpy(-1.0, &prob.cost.target.at(s.t));
            Ok(b.nodal_l2_norm(&diff)?.powi(2))
        })();
        match r {
            Ok(v) => {
                let m = (s.t / dt).round() as usize;
                let w = if m == 0 || m == n { 0.5 } else { 1.0 };
                acc += w * dt * v;
            }
            Err(e) => err = Some(e),
        }
    };
    let noise = &prob.noise;
    // keep only a minimal record: the stride only affects snapshots
    let mut cfg = prob.sim.clone();
    cfg.record_stride = n.max(1);
    let sim = Simulator { config: &cfg, ..sim };
    sim.run_with(u0, &prob.z0, seed, &mut |_| noise.sample(dt, &mut rng), &mut obs)?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(prob.cost.w_track * acc)
}

/// Ĵ(U) and its standard error over the seed set.
pub fn evaluate_cost(coeffs: &[f64], prob: &ControlProblem) -> Result<(f64, f64)> {
    let uc = prob.field(coeffs)?;
    let norm_sq = uc.l2_norm_sq();
    if norm_sq > prob.control_bound + 1e-12 {
        return Err(Error::Contract(format!(
            "control norm² {norm_sq} exceeds bound {}",
            prob.control_bound
        )));
    }
    let reg = prob.cost.w_reg * norm_sq * prob.sim.horizon;
    if prob.cost.w_track == 0.0 {
        return Ok((reg, 0.0));
    }
    let start = prob.u0.add(&uc);
    let vals = prob
        .seed_set
        .par_iter()
        .map(|s| path_tracking(prob, &start, *s))
        .collect::<Result<Vec<_>>>()?;
    let (m, se) = mean_stderr(&vals);
    Ok((m + reg, se))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FdGradient,
    CoordinateSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeOptions {
    /// Maximum number of cost evaluations.
    pub budget: usize,
    /// First line-search step (gradient) or probe size (coordinate search).
    pub initial_step: f64,
    /// Stop when the step or probe shrinks below this.
    pub min_step: f64,
    pub grad_tol: f64,
    pub initial: Option<Vec<f64>>,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            budget: 200,
            initial_step: 1.0,
            min_step: 1e-12,
            grad_tol: 1e-12,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub iteration: usize,
    pub coeffs: Vec<f64>,
    pub value: f64,
    pub stderr: f64,
    /// Line-search step or probe size that produced this iterate.
    pub step: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub method: Method,
    /// Accepted iterates, starting with the initial point.
    pub iterates: Vec<Iterate>,
    pub best_coeffs: Vec<f64>,
    pub best_value: f64,
    pub evaluations: usize,
    pub budget_exhausted: bool,
    pub stop_reason: String,
}

impl OptimizationTrace {
    pub fn is_monotone(&self) -> bool {
        self.iterates.windows(2).all(|w| w[1].value <= w[0].value)
    }
}

struct Counter<'a> {
    prob: &'a ControlProblem,
    used: usize,
    budget: usize,
}

impl Counter<'_> {
    fn eval(&mut self, c: &[f64]) -> Result<Option<(f64, f64)>> {
        if self.used >= self.budget {
            return Ok(None);
        }
        self.used += 1;
        evaluate_cost(c, self.prob).map(Some)
    }
}

pub fn optimize(prob: &ControlProblem, method: Method, opts: &OptimizeOptions) -> Result<OptimizationTrace> {
    if opts.budget == 0 {
        return Err(Error::Contract("budget must be at least 1".into()));
    }
    if !(opts.initial_step > 0.0) {
        return Err(Error::Contract("initial step must be positive".into()));
    }
    prob.validate()?;
    let dim = prob.dimension();
    let mut x = match &opts.initial {
        Some(v) if v.len() != dim => {
            return Err(Error::Dimension(format!("initial control needs {dim} coefficients")));
        }
        Some(v) => v.clone(),
        None => vec![0.0; dim],
    };
    prob.project(&mut x);
    let mut ctr = Counter {
        prob,
        used: 0,
        budget: opts.budget,
    };
    let (mut fx, se) = ctr.eval(&x)?.expect("budget ≥ 1");
    let mut trace = OptimizationTrace {
        method,
        iterates: vec![Iterate {
            iteration: 0,
            coeffs: x.clone(),
            value: fx,
            stderr: se,
            step: 0.0,
            evaluations: 1,
        }],
        best_coeffs: x.clone(),
        best_value: fx,
        evaluations: 1,
        budget_exhausted: false,
        stop_reason: String::new(),
    };
    let mut step = opts.initial_step;
    // previous accepted point and its gradient, for the Barzilai–Borwein step
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let accept = |trace: &mut OptimizationTrace, x: &[f64], f: f64, se: f64, step: f64, used: usize| {
        let iteration = trace.iterates.len();
        trace.iterates.push(Iterate {
            iteration,
            coeffs: x.to_vec(),
            value: f,
            stderr: se,
            step,
            evaluations: used,
        });
        trace.best_coeffs = x.to_vec();
        trace.best_value = f;
    };
    let reason = 'outer: loop {
        match method {
            Method::FdGradient => {
                let mut grad = vec![0.0; dim];
                for i in 0..dim {
                    let h = 1e-4 * (1.0 + x[i].abs());
                    let mut xp = x.clone();
                    xp[i] += h;
                    let mut xm = x.clone();
                    xm[i] -= h;
                    // stay inside the ball for the probe points
                    prob.project(&mut xp);
                    prob.project(&mut xm);
                    let Some((fp, _)) = ctr.eval(&xp)? else { break 'outer "budget" };
                    let Some((fm, _)) = ctr.eval(&xm)? else { break 'outer "budget" };
                    let span = xp[i] - xm[i];
                    grad[i] = if span != 0.0 { (fp - fm) / span } else { 0.0 };
                }
                let gn = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if gn <= opts.grad_tol {
                    break 'outer "gradient below tolerance";
                }
                if let Some((px, pg)) = &prev {
                    let dx: Vec<f64> = x.iter().zip(px).map(|(a, b)| a - b).collect();
                    let dg: Vec<f64> = grad.iter().zip(pg).map(|(a, b)| a - b).collect();
                    let xx: f64 = dx.iter().map(|v| v * v).sum();
                    let xg: f64 = dx.iter().zip(&dg).map(|(a, b)| a * b).sum();
                    if xg > 0.0 && (xx / xg).is_finite() {
                        step = xx / xg;
                    }
                }
                let here = x.clone();
                let mut moved = false;
                while step >= opts.min_step {
                    let mut y: Vec<f64> = x.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
                    prob.project(&mut y);
                    let Some((fy, sy)) = ctr.eval(&y)? else { break 'outer "budget" };
                    if fy < fx {
                        x = y;
                        fx = fy;
                        accept(&mut trace, &x, fx, sy, step, ctr.used);
                        step *= 2.0;
                        moved = true;
                        break;
                    }
                    step *= 0.5;
                }
                if !moved {
                    break 'outer "line search failed";
                }
                prev = Some((here, grad));
            }
            Method::CoordinateSearch => {
                if step < opts.min_step {
                    break 'outer "probe size below minimum";
                }
                let mut improved = false;
                for i in 0..dim {
                    for sign in [1.0, -1.0] {
                        let mut y = x.clone();
                        y[i] += sign * step;
                        prob.project(&mut y);
                        if y == x {
                            continue;
                        }
                        let Some((fy, sy)) = ctr.eval(&y)? else { break 'outer "budget" };
                        if fy < fx {
                            x = y;
                            fx = fy;
                            accept(&mut trace, &x, fx, sy, step, ctr.used);
                            improved = true;
                            break;
                        }
                    }
                }
                if !improved {
                    step *= 0.5;
                }
            }
        }
    };
    trace.evaluations = ctr.used;
    trace.budget_exhausted = reason == "budget";
    trace.stop_reason = reason.to_string();
    Ok(trace)
}
