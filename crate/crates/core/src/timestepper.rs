//! Semi-implicit Euler–Maruyama stepping of the Galerkin system.
//!
//! Per step, with `u = u_m`, `ẑ = ẑ_m`:
//!
//! ```text
//! E   = −B(u, t_m) − G(ẑ) + f(t_m)
//! S   = σ(u)ΔW + Σ_i H(u, z_i) − Δt ∫H(u,z)λ(dz)
//! (I + Δt·A) u_{m+1} = u + Δt·E + S          (2×2 per mode)
//! ẑ_{m+1} = ẑ − Δt·Div(h u_{m+1})
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::grid::{DomainSpec, NodalField, VectorModal};
use crate::noise::{derive_path_seed, path_rng, NoiseDraw, NoiseSpec};
use crate::operators::{apply_b, divergence_flux, pressure_gradient, ModelParams};

/// States whose norm exceeds this are treated as blown up.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    SemiImplicit,
}

/// Which velocity drives the elevation update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElevationUpdate {
    /// u_{m+1}, after the velocity solve.
    #[default]
    New,
    /// u_m.
    Old,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub record_stride: usize,
    pub scheme: Scheme,
    pub seed: u64,
    pub elevation_update: ElevationUpdate,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 1.0,
            record_stride: 10,
            scheme: Scheme::SemiImplicit,
            seed: 42,
            elevation_update: ElevationUpdate::New,
        }
    }
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64) -> Self {
        Self {
            dt,
            horizon,
            ..Self::default()
        }
    }

    pub fn violations(&self, prefix: &str) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.dt.is_finite() && self.dt > 0.0) {
            v.push(Violation::new(format!("{prefix}.dt"), "must be positive"));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            v.push(Violation::new(format!("{prefix}.horizon"), "must be positive"));
        }
        if self.record_stride == 0 {
            v.push(Violation::new(format!("{prefix}.record_stride"), "must be positive"));
        }
        if v.is_empty() {
            if self.dt > self.horizon * (1.0 + 1e-12) {
                v.push(Violation::new(format!("{prefix}.dt"), "must not exceed the horizon"));
            } else {
                let n = self.horizon / self.dt;
                if n > 1e9 {
                    v.push(Violation::new(format!("{prefix}.dt"), "too many steps (> 1e9)"));
                } else if (n - n.round()).abs() > 1e-6 * n.max(1.0) {
                    v.push(Violation::new(
                        format!("{prefix}.horizon"),
                        format!("horizon/dt = {n} is not an integer"),
                    ));
                }
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations("sim");
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// The pair (u, ẑ) at time t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub t: f64,
    pub u: VectorModal,
    pub zhat: NodalField,
}

/// Per-step scalar energies, one entry per time level (t₀ included).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergySeries {
    pub l2_sq: Vec<f64>,
    pub h10_sq: Vec<f64>,
    pub zhat_sq: Vec<f64>,
}

impl EnergySeries {
    pub fn len(&self) -> usize {
        self.l2_sq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.l2_sq.is_empty()
    }

    /// ‖u‖ᵖ at every time level.
    pub fn l2_pow(&self, p: f64) -> Vec<f64> {
        self.l2_sq.iter().map(|x| x.powf(0.5 * p)).collect()
    }
}

/// Everything one path produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub config: SimConfig,
    pub seed: u64,
    /// Snapshot times (every `record_stride` steps plus the final one).
    pub times: Vec<f64>,
    pub states: Vec<State>,
    /// Time of every level t_m = m·dt, m = 0..=steps.
    pub step_times: Vec<f64>,
    pub energies: EnergySeries,
    /// Σ (σ(u_m)ΔW_m, u_m), cumulative per time level.
    pub sigma_channel: Vec<f64>,
    /// Σ (ΣH(u_m,z) − Δt·compensator, u_m), cumulative per time level.
    pub jump_channel: Vec<f64>,
    /// Number of jump events in each step.
    pub jump_log: Vec<u32>,
}

impl TrajectoryRecord {
    pub fn final_state(&self) -> &State {
        self.states.last().expect("record always holds the initial state")
    }

    pub fn steps(&self) -> usize {
        self.jump_log.len()
    }

    pub fn dt(&self) -> f64 {
        self.config.dt
    }
}

/// Velocity and elevation increments produced by one step, plus the
/// martingale-channel increments.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub state: State,
    pub sigma_increment: f64,
    pub jump_increment: f64,
}

/// (I + Δt·A)⁻¹ applied per mode: with a = Δtαλ, b = Δtβ the block is
/// `[[1+a, −b], [b, 1+a]]`.
pub fn implicit_solve(rhs: &VectorModal, domain: &DomainSpec, alpha: f64, beta: f64, dt: f64) -> VectorModal {
    let mut out = rhs.clone();
    let b = dt * beta;
    for (s, l) in domain.eigenvalues().iter().enumerate() {
        let a1 = 1.0 + dt * alpha * l;
        let det = a1 * a1 + b * b;
        let (r1, r2) = (rhs.comp1.coeffs[s], rhs.comp2.coeffs[s]);
        out.comp1.coeffs[s] = (a1 * r1 + b * r2) / det;
        out.comp2.coeffs[s] = (a1 * r2 - b * r1) / det;
    }
    out
}

/// Deterministic part of the right-hand side: −B(u) − G(ẑ) + f(t).
pub fn explicit_terms(s: &State, p: &ModelParams) -> Result<VectorModal> {
    let mut e = p.forcing_at(s.t);
    e.axpy(-1.0, &apply_b(&s.u, s.t, p)?);
    e.axpy(-1.0, &pressure_gradient(&s.zhat, p)?);
    Ok(e)
}

/// One step of the scheme.
pub fn step(
    s: &State,
    draw: &NoiseDraw,
    p: &ModelParams,
    noise: &NoiseSpec,
    c: &SimConfig,
) -> Result<StepOutput> {
    let dt = c.dt;
    let e = explicit_terms(s, p)?;
    let (sig, jmp) = noise.increments(&s.u, draw, dt);
    let mut rhs = s.u.clone();
    rhs.axpy(dt, &e);
    rhs.axpy(1.0, &sig);
    rhs.axpy(1.0, &jmp);
    let u_new = implicit_solve(&rhs, p.domain(), p.alpha, p.beta, dt);
    let drive = match c.elevation_update {
        ElevationUpdate::New => &u_new,
        ElevationUpdate::Old => &s.u,
    };
    let flux = divergence_flux(drive, p)?;
    let mut z = s.zhat.clone();
    z.axpy(-dt, &flux);
    Ok(StepOutput {
        sigma_increment: sig.dot(&s.u),
        jump_increment: jmp.dot(&s.u),
        state: State {
            t: s.t + dt,
            u: u_new,
            zhat: z,
        },
    })
}

/// Path driver bound to a model, a noise law and a run configuration.
#[derive(Debug, Clone, Copy)]
pub struct Simulator<'a> {
    pub params: &'a ModelParams,
    pub noise: &'a NoiseSpec,
    pub config: &'a SimConfig,
}

impl<'a> Simulator<'a> {
    pub fn new(params: &'a ModelParams, noise: &'a NoiseSpec, config: &'a SimConfig) -> Result<Self> {
        config.validate()?;
        noise.validate(params.domain())?;
        Ok(Self {
            params,
            noise,
            config,
        })
    }

    fn check_initial(&self, u0: &VectorModal, z0: &NodalField) -> Result<()> {
        let d = self.params.domain();
        if u0.modes() != (d.modes_x1, d.modes_x2) {
            return Err(Error::Dimension("initial velocity shape does not match domain".into()));
        }
        if !z0.matches(d) || z0.components() != 1 {
            return Err(Error::Dimension("initial elevation must be a scalar grid field".into()));
        }
        if !u0.is_finite() || !z0.is_finite() {
            return Err(Error::Contract("initial data must be finite".into()));
        }
        Ok(())
    }

    /// Run one path with the noise drawn from `seed`.
    pub fn simulate_seeded(&self, u0: &VectorModal, z0: &NodalField, seed: u64) -> Result<TrajectoryRecord> {
        let mut rng = path_rng(seed);
        let dt = self.config.dt;
        let noise = self.noise;
        self.run_with(u0, z0, seed, &mut |_| noise.sample(dt, &mut rng), &mut |_| {})
    }

    /// Run one path with the configured seed.
    pub fn simulate(&self, u0: &VectorModal, z0: &NodalField) -> Result<TrajectoryRecord> {
        self.simulate_seeded(u0, z0, self.config.seed)
    }

    /// Run one path pulling draws from `source(step_index)`; `observer` sees
    /// every state including the initial one.
    pub fn run_with(
        &self,
        u0: &VectorModal,
        z0: &NodalField,
        seed: u64,
        source: &mut dyn FnMut(usize) -> Result<NoiseDraw>,
        observer: &mut dyn FnMut(&State),
    ) -> Result<TrajectoryRecord> {
        self.check_initial(u0, z0)?;
        let c = self.config;
        let p = self.params;
        let d = p.domain();
        let b = p.basis();
        let n = c.steps();
        let mut rec = TrajectoryRecord {
            config: c.clone(),
            seed,
            times: Vec::new(),
            states: Vec::new(),
            step_times: Vec::with_capacity(n + 1),
            energies: EnergySeries::default(),
            sigma_channel: Vec::with_capacity(n + 1),
            jump_channel: Vec::with_capacity(n + 1),
            jump_log: Vec::with_capacity(n),
        };
        let push_energy = |rec: &mut TrajectoryRecord, s: &State| -> Result<()> {
            rec.step_times.push(s.t);
            rec.energies.l2_sq.push(s.u.l2_norm_sq());
            rec.energies.h10_sq.push(s.u.h10_norm_sq(d));
            rec.energies.zhat_sq.push(b.nodal_l2_norm(&s.zhat)?.powi(2));
            Ok(())
        };
        let mut s = State {
            t: 0.0,
            u: u0.clone(),
            zhat: z0.clone(),
        };
        observer(&s);
        push_energy(&mut rec, &s)?;
        rec.sigma_channel.push(0.0);
        rec.jump_channel.push(0.0);
        rec.times.push(0.0);
        rec.states.push(s.clone());
        for m in 0..n {
            let draw = source(m)?;
            let out = step(&s, &draw, p, self.noise, c)?;
            let mut next = out.state;
            // Exact time levels avoid drift from repeated addition.
            next.t = (m + 1) as f64 * c.dt;
            rec.jump_log.push(draw.jumps.len() as u32);
            let sc = rec.sigma_channel[m] + out.sigma_increment;
            let jc = rec.jump_channel[m] + out.jump_increment;
            let zmax = next.zhat.max_abs();
            let un = next.u.l2_norm();
            let bad = if !next.u.is_finite() || !next.zhat.is_finite() {
                Some("non-finite state".to_string())
            } else if un > DIVERGENCE_THRESHOLD || zmax > DIVERGENCE_THRESHOLD {
                Some(format!("state norm exceeded {DIVERGENCE_THRESHOLD:e} (|u| = {un:e}, max|z| = {zmax:e})"))
            } else {
                None
            };
            if let Some(reason) = bad {
                rec.jump_log.pop();
                if rec.times.last() != Some(&s.t) {
                    rec.times.push(s.t);
                    rec.states.push(s.clone());
                }
                return Err(Error::Divergence {
                    step: m + 1,
                    reason,
                    seed,
                    partial: Box::new(rec),
                });
            }
            rec.sigma_channel.push(sc);
            rec.jump_channel.push(jc);
            push_energy(&mut rec, &next)?;
            observer(&next);
            if (m + 1) % c.record_stride == 0 || m + 1 == n {
                rec.times.push(next.t);
                rec.states.push(next.clone());
            }
            s = next;
        }
        Ok(rec)
    }

    /// Two initial conditions driven by the same draw sequence.
    pub fn simulate_pair(
        &self,
        u0_a: &VectorModal,
        u0_b: &VectorModal,
        z0: &NodalField,
        seed: u64,
    ) -> Result<(TrajectoryRecord, TrajectoryRecord)> {
        let a = self.simulate_seeded(u0_a, z0, seed)?;
        let b = self.simulate_seeded(u0_b, z0, seed)?;
        Ok((a, b))
    }

    /// `paths` independent paths with seeds derived from the configured master seed.
    pub fn ensemble(&self, u0: &VectorModal, z0: &NodalField, paths: usize) -> Result<Vec<TrajectoryRecord>> {
        (0..paths)
            .into_par_iter()
            .map(|i| self.simulate_seeded(u0, z0, derive_path_seed(self.config.seed, i as u64)))
            .collect()
    }
}

/// Per-path seeds used by [`Simulator::ensemble`].
pub fn ensemble_seeds(master: u64, paths: usize) -> Vec<u64> {
    (0..paths).map(|i| derive_path_seed(master, i as u64)).collect()
}

/// Inputs for one resolution level of a refinement study.
pub struct Level {
    pub params: ModelParams,
    pub noise: NoiseSpec,
    pub u0: VectorModal,
    pub z0: NodalField,
}

/// One row of a refinement table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub coarse_modes: usize,
    pub coarse_dt: f64,
    pub fine_modes: usize,
    pub fine_dt: f64,
    /// ‖u_coarse − u_fine‖ in L²(0,T; L²).
    pub distance: f64,
}

fn integer_ratio(a: f64, b: f64) -> Option<usize> {
    let r = a / b;
    let k = r.round();
    if k >= 1.0 && (r - k).abs() <= 1e-9 * k {
        Some(k as usize)
    } else {
        None
    }
}

/// Sum `ratio` consecutive fine draws into one coarse draw restricted to the
/// coarse modes.
fn aggregate_draw(
    fine: &[NoiseDraw],
    fine_domain: &DomainSpec,
    coarse_domain: &DomainSpec,
    fine_dt: f64,
) -> NoiseDraw {
    let mut out = NoiseDraw::zero(coarse_domain.scalar_modes());
    for (i, d) in fine.iter().enumerate() {
        for j in 1..=coarse_domain.modes_x1 {
            for k in 1..=coarse_domain.modes_x2 {
                let cs = (j - 1) * coarse_domain.modes_x2 + (k - 1);
                let fs = (j - 1) * fine_domain.modes_x2 + (k - 1);
                out.dw1[cs] += d.dw1[fs];
                out.dw2[cs] += d.dw2[fs];
            }
        }
        out.jumps
            .extend(d.jumps.iter().map(|(t, z)| (t + i as f64 * fine_dt, *z)));
    }
    out
}

/// Distances between consecutive levels under common noise.
///
/// Levels are `(modes, dt)` pairs, `modes` applied in both directions; a
/// single-entry list is broadcast. The finest level's draws are generated
/// from `config.seed` and summed/restricted for the coarser ones.
pub fn refinement_study(
    mode_levels: &[usize],
    dt_levels: &[f64],
    config: &SimConfig,
    build: &dyn Fn(&DomainSpec) -> Result<Level>,
    base: &DomainSpec,
) -> Result<Vec<RefinementRow>> {
    let n = mode_levels.len().max(dt_levels.len());
    let ok_len = |l: usize| l == n || l == 1;
    if n == 0 || !ok_len(mode_levels.len()) || !ok_len(dt_levels.len()) {
        return Err(Error::Contract("mode and dt level lists have incompatible lengths".into()));
    }
    let modes: Vec<usize> = (0..n).map(|i| mode_levels[i.min(mode_levels.len() - 1)]).collect();
    let dts: Vec<f64> = (0..n).map(|i| dt_levels[i.min(dt_levels.len() - 1)]).collect();
    for i in 1..n {
        if modes[i] < modes[i - 1] || dts[i] > dts[i - 1] {
            return Err(Error::Contract("levels must refine monotonically".into()));
        }
        if integer_ratio(dts[i - 1], dts[i]).is_none() {
            return Err(Error::Contract(format!(
                "dt {} is not an integer multiple of {}",
                dts[i - 1],
                dts[i]
            )));
        }
    }
    let fine_dt = dts[n - 1];
    let fine_domain = base.with_modes(modes[n - 1], modes[n - 1]);
    let fine_level = build(&fine_domain)?;
    let mut fine_cfg = config.clone();
    fine_cfg.dt = fine_dt;
    fine_cfg.validate()?;
    let fine_steps = fine_cfg.steps();
    let mut rng = path_rng(config.seed);
    let mut draws = Vec::with_capacity(fine_steps);
    for _ in 0..fine_steps {
        draws.push(fine_level.noise.sample(fine_dt, &mut rng)?);
    }
    let mut runs = Vec::with_capacity(n);
    for i in 0..n {
        let dom = base.with_modes(modes[i], modes[i]);
        let lvl = if i == n - 1 { None } else { Some(build(&dom)?) };
        let lvl = lvl.as_ref().unwrap_or(&fine_level);
        let mut cfg = config.clone();
        cfg.dt = dts[i];
        cfg.record_stride = 1;
        let ratio = integer_ratio(dts[i], fine_dt)
            .ok_or_else(|| Error::Contract("dt levels are not nested".into()))?;
        let sim = Simulator::new(&lvl.params, &lvl.noise, &cfg)?;
        let mut src = |m: usize| -> Result<NoiseDraw> {
            Ok(aggregate_draw(&draws[m * ratio..(m + 1) * ratio], &fine_domain, &dom, fine_dt))
        };
        runs.push(sim.run_with(&lvl.u0, &lvl.z0, config.seed, &mut src, &mut |_| {})?);
    }
    let mut rows = Vec::with_capacity(n.saturating_sub(1));
    for i in 0..n.saturating_sub(1) {
        let (c, f) = (&runs[i], &runs[i + 1]);
        let r = integer_ratio(dts[i], dts[i + 1]).unwrap_or(1);
        let mut acc = 0.0;
        for m in 0..c.states.len() - 1 {
            let uc = c.states[m].u.resized(modes[i + 1], modes[i + 1]);
            acc += dts[i] * uc.sub(&f.states[m * r].u).l2_norm_sq();
        }
        rows.push(RefinementRow {
            coarse_modes: modes[i],
            coarse_dt: dts[i],
            fine_modes: modes[i + 1],
            fine_dt: dts[i + 1],
            distance: acc.sqrt(),
        });
    }
    Ok(rows)
}
