//! Spatial operators of the tide model and the inequality checks on them.
//!
//! Velocity-type quantities are modal; depth, background flow and elevation
//! are nodal. Nonlinear and variable-coefficient terms are evaluated
//! pointwise on the grid and projected back.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::grid::{random_vector, Basis, DomainSpec, NodalField, ScalarModal, VectorModal};

/// A field with a harmonic time envelope: `value(x, t) = base(x)·cos(ωt)`.
/// `frequency = 0` gives a steady field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Modulated<T> {
    pub base: T,
    pub frequency: f64,
}

impl<T> Modulated<T> {
    pub fn steady(base: T) -> Self {
        Self {
            base,
            frequency: 0.0,
        }
    }

    pub fn envelope(&self, t: f64) -> f64 {
        if self.frequency == 0.0 {
            1.0
        } else {
            (self.frequency * t).cos()
        }
    }

    /// ∫₀ᵀ |cos(ωt)|ᵖ dt by composite Simpson on 4096 panels.
    pub fn envelope_power_integral(&self, p: i32, horizon: f64) -> f64 {
        if self.frequency == 0.0 {
            return horizon;
        }
        simpson(|t| self.envelope(t).abs().powi(p), horizon, 4096)
    }
}

pub(crate) fn simpson(f: impl Fn(f64) -> f64, b: f64, panels: usize) -> f64 {
    let n = 2 * panels;
    let h = b / n as f64;
    let mut acc = f(0.0) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h);
    }
    acc * h / 3.0
}

/// Physical coefficients, depth, background flow and forcing, plus the
/// derived constants used throughout the estimates.
#[derive(Debug, Clone)]
pub struct ModelParams {
    basis: Basis,
    pub alpha: f64,
    pub beta: f64,
    pub g: f64,
    pub r: f64,
    depth: NodalField,
    /// Nodal vector field w⁰.
    background: Modulated<NodalField>,
    forcing: Modulated<VectorModal>,
    gamma: Vec<f64>,
    grad_h: (Vec<f64>, Vec<f64>),
    eps: f64,
    mu: f64,
    grad_bound: f64,
}

/// Constants derived from the model at construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorConstants {
    /// Continuity constant of a(·,·): α + |β|.
    pub c1: f64,
    /// sup γ = r/ε.
    pub c2: f64,
    pub eps: f64,
    pub mu: f64,
    /// max |∇h| (finite differences).
    pub grad_bound: f64,
    pub poincare: f64,
}

impl ModelParams {
    pub fn new(
        basis: Basis,
        alpha: f64,
        beta: f64,
        g: f64,
        r: f64,
        depth: NodalField,
        background: Modulated<NodalField>,
        forcing: Modulated<VectorModal>,
    ) -> Result<Self> {
        let d = basis.domain().clone();
        let mut v = Vec::new();
        if !(alpha.is_finite() && alpha > 0.0) {
            v.push(Violation::new("model.alpha", "must be positive"));
        }
        if !beta.is_finite() {
            v.push(Violation::new("model.beta", "must be finite"));
        }
        if !(g.is_finite() && g >= 0.0) {
            v.push(Violation::new("model.g", "must be nonnegative"));
        }
        if !(r.is_finite() && r >= 0.0) {
            v.push(Violation::new("model.r", "must be nonnegative"));
        }
        if !depth.matches(&d) || depth.components() != 1 {
            v.push(Violation::new("model.depth", "must be a scalar field on the grid"));
        } else {
            let min = depth.data[0].iter().cloned().fold(f64::INFINITY, f64::min);
            if !(min > 0.0) || !depth.is_finite() {
                v.push(Violation::new(
                    "model.depth",
                    format!("depth.min > 0 violated (min = {min})"),
                ));
            }
        }
        if !background.base.matches(&d) || background.base.components() != 2 {
            v.push(Violation::new(
                "model.background_flow",
                "must be a vector field on the grid",
            ));
        } else if !background.base.is_finite() || !background.frequency.is_finite() {
            v.push(Violation::new("model.background_flow", "must be finite"));
        }
        if forcing.base.modes() != (d.modes_x1, d.modes_x2) {
            v.push(Violation::new("model.forcing", "modal shape does not match domain"));
        } else if !forcing.base.is_finite() || !forcing.frequency.is_finite() {
            v.push(Violation::new("model.forcing", "must be finite"));
        }
        if !v.is_empty() {
            return Err(Error::Config(v));
        }
        let eps = depth.data[0].iter().cloned().fold(f64::INFINITY, f64::min);
        let mu = depth.data[0].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let grad_h = basis.fd_gradient(&depth.data[0]);
        let grad_bound = grad_h
            .0
            .iter()
            .zip(&grad_h.1)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max);
        let gamma = depth.data[0].iter().map(|h| r / h).collect();
        Ok(Self {
            basis,
            alpha,
            beta,
            g,
            r,
            depth,
            background,
            forcing,
            gamma,
            grad_h,
            eps,
            mu,
            grad_bound,
        })
    }

    /// Constant depth, no background flow, no forcing.
    pub fn simple(domain: &DomainSpec, alpha: f64, beta: f64, g: f64, r: f64, h: f64) -> Result<Self> {
        let basis = Basis::new(domain)?;
        let depth = NodalField::scalar_from_fn(domain, |_, _| h);
        Self::new(
            basis,
            alpha,
            beta,
            g,
            r,
            depth,
            Modulated::steady(NodalField::vector_zeros(domain)),
            Modulated::steady(VectorModal::zeros_for(domain)),
        )
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn domain(&self) -> &DomainSpec {
        self.basis.domain()
    }

    pub fn depth(&self) -> &NodalField {
        &self.depth
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn background(&self) -> &Modulated<NodalField> {
        &self.background
    }

    pub fn forcing(&self) -> &Modulated<VectorModal> {
        &self.forcing
    }

    pub fn background_at(&self, t: f64) -> NodalField {
        let mut w = self.background.base.clone();
        w.scale(self.background.envelope(t));
        w
    }

    pub fn forcing_at(&self, t: f64) -> VectorModal {
        self.forcing.base.scaled(self.forcing.envelope(t))
    }

    pub fn with_gamma_field(mut self, gamma: Vec<f64>) -> Result<Self> {
        if gamma.len() != self.domain().nodes() || gamma.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::Contract("γ must be finite, nonnegative, one value per node".into()));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn with_background(mut self, background: Modulated<NodalField>) -> Result<Self> {
        if !background.base.matches(self.domain()) || background.base.components() != 2 {
            return Err(Error::Dimension("background flow must be a vector field on the grid".into()));
        }
        self.background = background;
        Ok(self)
    }

    pub fn with_forcing(mut self, forcing: Modulated<VectorModal>) -> Result<Self> {
        if forcing.base.modes() != (self.domain().modes_x1, self.domain().modes_x2) {
            return Err(Error::Dimension("forcing shape does not match domain".into()));
        }
        self.forcing = forcing;
        Ok(self)
    }

    pub fn constants(&self) -> OperatorConstants {
        OperatorConstants {
            c1: self.alpha + self.beta.abs(),
            c2: self.gamma.iter().cloned().fold(0.0, f64::max),
            eps: self.eps,
            mu: self.mu,
            grad_bound: self.grad_bound,
            poincare: self.domain().poincare_constant(),
        }
    }

    /// ∫₀ᵀ ‖w⁰(t)‖⁴_{L⁴} dt.
    pub fn background_l4_integral(&self, horizon: f64) -> Result<f64> {
        let n = self.basis.nodal_l4_norm(&self.background.base)?;
        Ok(n.powi(4) * self.background.envelope_power_integral(4, horizon))
    }

    /// ∫₀ᵀ ‖f(t)‖²_{L²} dt.
    pub fn forcing_l2_integral(&self, horizon: f64) -> f64 {
        self.forcing.base.l2_norm_sq() * self.forcing.envelope_power_integral(2, horizon)
    }
}

/// A  per mode: comp1 = αλu₁ − βu₂, comp2 = βu₁ + αλu₂.
pub fn apply_a(u: &VectorModal, p: &ModelParams) -> VectorModal {
    let d = p.domain();
    let mut out = VectorModal::zeros_for(d);
    let lam = d.eigenvalues();
    for (s, l) in lam.iter().enumerate() {
        let (a, b) = (u.comp1.coeffs[s], u.comp2.coeffs[s]);
        out.comp1.coeffs[s] = p.alpha * l * a - p.beta * b;
        out.comp2.coeffs[s] = p.beta * a + p.alpha * l * b;
    }
    out
}

/// a(u,v) = α(∇u, ∇v) + β[(u₁,v₂) − (u₂,v₁)].
pub fn bilinear_a(u: &VectorModal, v: &VectorModal, p: &ModelParams) -> f64 {
    let d = p.domain();
    let mut grad = 0.0;
    let mut rot = 0.0;
    for (s, l) in d.eigenvalues().iter().enumerate() {
        let (u1, u2) = (u.comp1.coeffs[s], u.comp2.coeffs[s]);
        let (v1, v2) = (v.comp1.coeffs[s], v.comp2.coeffs[s]);
        grad += l * (u1 * v1 + u2 * v2);
        rot += u1 * v2 - u2 * v1;
    }
    p.alpha * grad + p.beta * rot
}

/// Pointwise γ|a|a for a nodal vector field `a` (already including w⁰).
pub fn friction_pointwise(a: &NodalField, gamma: &[f64]) -> NodalField {
    let mut out = a.clone();
    for n in 0..gamma.len() {
        let (x, y) = (a.data[0][n], a.data[1][n]);
        let s = gamma[n] * x.hypot(y);
        out.data[0][n] = s * x;
        out.data[1][n] = s * y;
    }
    out
}

/// Nodal intermediate γ|u+w⁰|(u+w⁰) at time `t`.
pub fn b_nodal(u: &VectorModal, t: f64, p: &ModelParams) -> Result<NodalField> {
    let mut a = p.basis.synthesize_vector(u)?;
    let env = p.background.envelope(t);
    if env != 0.0 {
        a.axpy(env, &p.background.base);
    }
    Ok(friction_pointwise(&a, &p.gamma))
}

/// B(u) = Pₙ[γ|u+w⁰|(u+w⁰)].
pub fn apply_b(u: &VectorModal, t: f64, p: &ModelParams) -> Result<VectorModal> {
    p.basis.project_vector(&b_nodal(u, t, p)?)
}

/// Modal representative of g∇ẑ, defined by duality:
/// `G·v = −g ∫ ẑ Div v` for every v in the span.
pub fn pressure_gradient(zhat: &NodalField, p: &ModelParams) -> Result<VectorModal> {
    if !zhat.matches(p.domain()) || zhat.components() != 1 {
        return Err(Error::Dimension("elevation must be a scalar field on the grid".into()));
    }
    let mut c1 = p.basis.pair_dx1(&zhat.data[0]);
    let mut c2 = p.basis.pair_dx2(&zhat.data[0]);
    c1.coeffs.iter_mut().for_each(|x| *x *= -p.g);
    c2.coeffs.iter_mut().for_each(|x| *x *= -p.g);
    VectorModal::new(c1, c2)
}

/// Nodal Div(h u) = h Div u + ∇h·u.
pub fn divergence_flux(u: &VectorModal, p: &ModelParams) -> Result<NodalField> {
    let div = p.basis.divergence(u)?;
    let un = p.basis.synthesize_vector(u)?;
    let h = &p.depth.data[0];
    let (hx, hy) = &p.grad_h;
    let mut out = NodalField::scalar_zeros(p.domain());
    for n in 0..div.len() {
        out.data[0][n] = h[n] * div[n] + hx[n] * un.data[0][n] + hy[n] * un.data[1][n];
    }
    Ok(out)
}

/// Relative allowance on the pressure dual bound for trapezoid aliasing.
pub const PRESSURE_QUADRATURE_TOL: f64 = 5e-3;

/// Outcome of one inequality check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub tolerance: f64,
    pub satisfied: bool,
    /// rhs − lhs.
    pub margin: f64,
    pub samples: usize,
}

impl OperatorReport {
    pub fn new(name: &str, lhs: f64, rhs: f64, tolerance: f64, samples: usize) -> Self {
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            tolerance,
            satisfied: lhs <= rhs + tolerance,
            margin: rhs - lhs,
            samples,
        }
    }

    /// Whether `satisfied` agrees with the numeric fields.
    pub fn consistent(&self) -> bool {
        self.satisfied == (self.lhs <= self.rhs + self.tolerance)
    }
}

/// Keeps the sample with the largest `lhs / (rhs + tol)`, so samples where
/// both sides vanish do not mask informative ones.
struct Worst {
    name: &'static str,
    tol: f64,
    lhs: f64,
    rhs: f64,
    ratio: f64,
    n: usize,
}

impl Worst {
    fn new(name: &'static str, tol: f64) -> Self {
        Self {
            name,
            tol,
            lhs: 0.0,
            rhs: 0.0,
            ratio: f64::NEG_INFINITY,
            n: 0,
        }
    }

    fn push(&mut self, lhs: f64, rhs: f64) {
        self.n += 1;
        let den = rhs + self.tol;
        let r = if lhs == 0.0 && den == 0.0 { 0.0 } else { lhs / den };
        // NaN must surface as a failure.
        if r.is_nan() || r > self.ratio {
            self.ratio = if r.is_nan() { f64::INFINITY } else { r };
            self.lhs = lhs;
            self.rhs = rhs;
        }
    }

    fn report(&self) -> OperatorReport {
        OperatorReport::new(self.name, self.lhs, self.rhs, self.tol, self.n)
    }
}

/// Random state scaled to a target L² size; mixes smooth and rough spectra.
fn sample_state(d: &DomainSpec, rng: &mut ChaCha8Rng) -> VectorModal {
    let decay = rng.random_range(0.0..2.0);
    let mut u = random_vector(d, rng, decay);
    let n = u.l2_norm();
    if n > 0.0 {
        u.scale(10f64.powf(rng.random_range(-1.0..1.0)) / n);
    }
    u
}

/// The (e2)/(e1) growth and Lipschitz bounds of B on random samples.
pub fn b_bound_checks(p: &ModelParams, samples: usize, seed: u64) -> Result<Vec<OperatorReport>> {
    if samples == 0 {
        return Err(Error::Contract("samples must be at least 1".into()));
    }
    let d = p.domain().clone();
    let b = p.basis();
    let c2 = p.constants().c2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e2 = Worst::new("B growth (e2)", 1e-10);
    let mut e1 = Worst::new("B Lipschitz (e1)", 1e-10);
    for _ in 0..samples {
        let u = sample_state(&d, &mut rng);
        let v = if rng.random_bool(0.05) {
            u.clone()
        } else {
            sample_state(&d, &mut rng)
        };
        let t = rng.random_range(0.0..1.0);
        let w = p.background_at(t);
        let mut a = b.synthesize_vector(&u)?;
        a.axpy(1.0, &w);
        let mut c = b.synthesize_vector(&v)?;
        c.axpy(1.0, &w);
        let bu = b.project_vector(&friction_pointwise(&a, &p.gamma))?;
        let bv = b.project_vector(&friction_pointwise(&c, &p.gamma))?;
        let a4 = b.nodal_l4_norm(&a)?;
        let c4 = b.nodal_l4_norm(&c)?;
        let diff = b.synthesize_vector(&u.sub(&v))?;
        let rhs_e2 = c2 * a4 * a4;
        e2.push(bu.l2_norm(), rhs_e2 * (1.0 + 1e-12));
        let rhs_e1 = c2 * (a4 + c4) * b.nodal_l4_norm(&diff)?;
        e1.push(bu.sub(&bv).l2_norm(), rhs_e1 * (1.0 + 1e-12));
    }
    Ok(vec![e2.report(), e1.report()])
}

/// Full operator inequality suite on `samples` random draws.
pub fn operator_suite(p: &ModelParams, samples: usize, seed: u64) -> Result<Vec<OperatorReport>> {
    if samples == 0 {
        return Err(Error::Contract("samples must be at least 1".into()));
    }
    let d = p.domain().clone();
    let b = p.basis();
    let k = p.constants();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f70_7375_6974_6521);
    let mut mono = Worst::new("B monotonicity", 1e-9);
    let mut coer = Worst::new("a(u,u) = alpha |u|_H10^2", 0.0);
    let mut cont = Worst::new("a continuity", 0.0);
    let mut pair = Worst::new("A pairing = a(u,v)", 0.0);
    let mut lady = Worst::new("Ladyzhenskaya", 1e-8);
    let mut pres = Worst::new("pressure H-1 bound", 0.0);
    let mut dual = Worst::new("pressure duality", 0.0);
    for _ in 0..samples {
        let u = sample_state(&d, &mut rng);
        let v = sample_state(&d, &mut rng);
        let t = rng.random_range(0.0..1.0);

        let bu = apply_b(&u, t, p)?;
        let bv = apply_b(&v, t, p)?;
        let w = u.sub(&v);
        mono.push(-bu.sub(&bv).dot(&w), 0.0);

        let h1u = u.h10_norm_sq(&d);
        let h1v = v.h10_norm_sq(&d);
        coer.push((bilinear_a(&u, &u, p) - p.alpha * h1u).abs(), 1e-10 * h1u);
        cont.push(
            bilinear_a(&u, &v, p).abs(),
            k.c1 * (h1u * h1v).sqrt() * (1.0 + 1e-12),
        );
        let ip = apply_a(&u, p).dot(&v);
        let ba = bilinear_a(&u, &v, p);
        pair.push((ip - ba).abs(), 1e-10 * (1.0 + ba.abs()));

        let phi = b.synthesize_scalar(&u.comp1)?;
        let l4 = b.nodal_l4_norm(&phi)?;
        let s = VectorModal::new(u.comp1.clone(), ScalarModal::zeros(d.modes_x1, d.modes_x2))?;
        lady.push(l4.powi(4), 2.0 * s.l2_norm_sq() * s.h10_norm_sq(&d));

        let z = b.synthesize_scalar(&v.comp2)?;
        let gz = pressure_gradient(&z, p)?;
        let zl2 = b.nodal_l2_norm(&z)?;
        // The trapezoid divergence operator has norm slightly above 1 on the
        // span (about 1 + 1e-3), hence the relative quadrature allowance.
        pres.push(gz.hminus1_norm(&d), p.g * zl2 * (1.0 + PRESSURE_QUADRATURE_TOL));
        let div = b.divergence(&u)?;
        let zd: Vec<f64> = z.data[0].iter().zip(&div).map(|(a, c)| a * c).collect();
        let want = -p.g * b.integrate(&zd);
        dual.push((gz.dot(&u) - want).abs(), 1e-8 * (1.0 + want.abs()));
    }
    let mut out = vec![
        mono.report(),
        coer.report(),
        cont.report(),
        pair.report(),
        lady.report(),
        pres.report(),
        dual.report(),
    ];
    out.extend(b_bound_checks(p, samples, seed)?);
    Ok(out)
}
