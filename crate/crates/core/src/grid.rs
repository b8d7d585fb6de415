//! Rectangular basin, tensor-sine spectral basis and collocation grid.
//!
//! Velocity components live in the span of the Dirichlet-Laplacian
//! eigenfunctions
//!
//! ```text
//! φ_jk(x) = 2/√(L₁L₂) · sin(jπx₁/L₁) · sin(kπx₂/L₂),   −Δφ_jk = λ_jk φ_jk,
//! λ_jk   = π² (j²/L₁² + k²/L₂²)
//! ```
//!
//! Scalar fields (depth, elevation) are stored on a uniform grid of
//! `grid_x1 × grid_x2` nodes that includes the boundary. Integrals use the
//! trapezoid rule on that grid; for sine products up to the dealiasing limit
//! the rule is exact, so the discrete basis is orthonormal to rounding.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result, Violation};

/// The rectangle `[0, L₁] × [0, L₂]` with its spectral truncation and grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainSpec {
    pub length_x1: f64,
    pub length_x2: f64,
    pub modes_x1: usize,
    pub modes_x2: usize,
    /// Number of grid nodes along x₁, boundary nodes included.
    pub grid_x1: usize,
    /// Number of grid nodes along x₂, boundary nodes included.
    pub grid_x2: usize,
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self::unit_square(8, 8)
    }
}

impl DomainSpec {
    pub fn new(
        length_x1: f64,
        length_x2: f64,
        modes_x1: usize,
        modes_x2: usize,
        grid_x1: usize,
        grid_x2: usize,
    ) -> Result<Self> {
        let d = Self {
            length_x1,
            length_x2,
            modes_x1,
            modes_x2,
            grid_x1,
            grid_x2,
        };
        let v = d.violations("domain");
        if v.is_empty() {
            Ok(d)
        } else {
            Err(Error::Config(v))
        }
    }

    /// Unit square with the minimal dealiased grid `2m+1`.
    pub fn unit_square(modes_x1: usize, modes_x2: usize) -> Self {
        Self {
            length_x1: 1.0,
            length_x2: 1.0,
            modes_x1,
            modes_x2,
            grid_x1: 2 * modes_x1 + 1,
            grid_x2: 2 * modes_x2 + 1,
        }
    }

    /// Same box and grid ratio with a different truncation.
    pub fn with_modes(&self, modes_x1: usize, modes_x2: usize) -> Self {
        Self {
            modes_x1,
            modes_x2,
            grid_x1: 2 * modes_x1 + 1,
            grid_x2: 2 * modes_x2 + 1,
            ..self.clone()
        }
    }

    pub fn violations(&self, prefix: &str) -> Vec<Violation> {
        let mut out = Vec::new();
        for (name, val) in [("length_x1", self.length_x1), ("length_x2", self.length_x2)] {
            if !(val.is_finite() && val > 0.0) {
                out.push(Violation::new(
                    format!("{prefix}.{name}"),
                    format!("must be a positive finite length, got {val}"),
                ));
            }
        }
        for (name, val) in [("modes_x1", self.modes_x1), ("modes_x2", self.modes_x2)] {
            if val == 0 {
                out.push(Violation::new(format!("{prefix}.{name}"), "must be positive"));
            }
        }
        if self.grid_x1 < 2 * self.modes_x1 + 1 {
            out.push(Violation::new(
                format!("{prefix}.grid_x1"),
                format!(
                    "dealiasing invariant grid_x1 >= 2*modes_x1+1 violated ({} < {})",
                    self.grid_x1,
                    2 * self.modes_x1 + 1
                ),
            ));
        }
        if self.grid_x2 < 2 * self.modes_x2 + 1 {
            out.push(Violation::new(
                format!("{prefix}.grid_x2"),
                format!(
                    "dealiasing invariant grid_x2 >= 2*modes_x2+1 violated ({} < {})",
                    self.grid_x2,
                    2 * self.modes_x2 + 1
                ),
            ));
        }
        out
    }

    /// Number of scalar modes `modes_x1 · modes_x2`.
    pub fn scalar_modes(&self) -> usize {
        self.modes_x1 * self.modes_x2
    }

    /// Dirichlet-Laplacian eigenvalue λ_jk (1-based indices).
    pub fn eigenvalue(&self, j: usize, k: usize) -> f64 {
        let a = j as f64 / self.length_x1;
        let b = k as f64 / self.length_x2;
        PI * PI * (a * a + b * b)
    }

    /// Eigenvalues in storage order (j-major).
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.scalar_modes());
        for j in 1..=self.modes_x1 {
            for k in 1..=self.modes_x2 {
                out.push(self.eigenvalue(j, k));
            }
        }
        out
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalue(1, 1)
    }

    /// Poincaré constant of the rectangle, `1/√λ₁₁`.
    pub fn poincare_constant(&self) -> f64 {
        1.0 / self.lambda_min().sqrt()
    }

    pub fn spacing(&self) -> (f64, f64) {
        (
            self.length_x1 / (self.grid_x1 - 1) as f64,
            self.length_x2 / (self.grid_x2 - 1) as f64,
        )
    }

    pub fn node(&self, i: usize, l: usize) -> (f64, f64) {
        let (h1, h2) = self.spacing();
        (i as f64 * h1, l as f64 * h2)
    }

    pub fn nodes(&self) -> usize {
        self.grid_x1 * self.grid_x2
    }

    pub fn mode_slot(&self, j: usize, k: usize) -> Result<usize> {
        if j == 0 || k == 0 || j > self.modes_x1 || k > self.modes_x2 {
            return Err(Error::Index(format!(
                "mode ({j},{k}) outside [1,{}]×[1,{}]",
                self.modes_x1, self.modes_x2
            )));
        }
        Ok((j - 1) * self.modes_x2 + (k - 1))
    }
}

/// Velocity component selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    X1,
    X2,
}

/// A spectral mode; `component` is `None` for scalar modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModeIndex {
    pub j: usize,
    pub k: usize,
    pub component: Option<Component>,
}

impl ModeIndex {
    pub fn scalar(j: usize, k: usize) -> Self {
        Self {
            j,
            k,
            component: None,
        }
    }

    pub fn vector(j: usize, k: usize, c: Component) -> Self {
        Self {
            j,
            k,
            component: Some(c),
        }
    }
}

/// Expansion coefficients of a scalar function in the sine basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarModal {
    pub modes_x1: usize,
    pub modes_x2: usize,
    /// j-major: slot `(j-1)·modes_x2 + (k-1)`.
    pub coeffs: Vec<f64>,
}

impl ScalarModal {
    pub fn zeros(modes_x1: usize, modes_x2: usize) -> Self {
        Self {
            modes_x1,
            modes_x2,
            coeffs: vec![0.0; modes_x1 * modes_x2],
        }
    }

    pub fn from_coeffs(modes_x1: usize, modes_x2: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != modes_x1 * modes_x2 {
            return Err(Error::Dimension(format!(
                "expected {} coefficients, got {}",
                modes_x1 * modes_x2,
                coeffs.len()
            )));
        }
        Ok(Self {
            modes_x1,
            modes_x2,
            coeffs,
        })
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn slot(&self, j: usize, k: usize) -> Result<usize> {
        if j == 0 || k == 0 || j > self.modes_x1 || k > self.modes_x2 {
            return Err(Error::Index(format!(
                "mode ({j},{k}) outside [1,{}]×[1,{}]",
                self.modes_x1, self.modes_x2
            )));
        }
        Ok((j - 1) * self.modes_x2 + (k - 1))
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.coeffs[(j - 1) * self.modes_x2 + (k - 1)]
    }

    pub fn set(&mut self, j: usize, k: usize, v: f64) {
        self.coeffs[(j - 1) * self.modes_x2 + (k - 1)] = v;
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    /// Truncate or zero-pad to a different truncation.
    pub fn resized(&self, modes_x1: usize, modes_x2: usize) -> Self {
        let mut out = Self::zeros(modes_x1, modes_x2);
        for j in 1..=modes_x1.min(self.modes_x1) {
            for k in 1..=modes_x2.min(self.modes_x2) {
                out.set(j, k, self.get(j, k));
            }
        }
        out
    }
}

/// Coefficients of a two-component velocity field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorModal {
    pub comp1: ScalarModal,
    pub comp2: ScalarModal,
}

impl VectorModal {
    pub fn zeros(modes_x1: usize, modes_x2: usize) -> Self {
        Self {
            comp1: ScalarModal::zeros(modes_x1, modes_x2),
            comp2: ScalarModal::zeros(modes_x1, modes_x2),
        }
    }

    pub fn zeros_for(domain: &DomainSpec) -> Self {
        Self::zeros(domain.modes_x1, domain.modes_x2)
    }

    pub fn new(comp1: ScalarModal, comp2: ScalarModal) -> Result<Self> {
        if comp1.modes_x1 != comp2.modes_x1 || comp1.modes_x2 != comp2.modes_x2 {
            return Err(Error::Dimension("vector components differ in shape".into()));
        }
        Ok(Self { comp1, comp2 })
    }

    /// Single unit-free mode with the given amplitude.
    pub fn single(domain: &DomainSpec, m: ModeIndex, amplitude: f64) -> Result<Self> {
        let mut v = Self::zeros_for(domain);
        v.set(m, amplitude)?;
        Ok(v)
    }

    pub fn modes(&self) -> (usize, usize) {
        (self.comp1.modes_x1, self.comp1.modes_x2)
    }

    /// Total number of real degrees of freedom (both components).
    pub fn dof(&self) -> usize {
        2 * self.comp1.len()
    }

    pub fn component(&self, c: Component) -> &ScalarModal {
        match c {
            Component::X1 => &self.comp1,
            Component::X2 => &self.comp2,
        }
    }

    pub fn component_mut(&mut self, c: Component) -> &mut ScalarModal {
        match c {
            Component::X1 => &mut self.comp1,
            Component::X2 => &mut self.comp2,
        }
    }

    pub fn get(&self, m: ModeIndex) -> Result<f64> {
        let c = m
            .component
            .ok_or_else(|| Error::Index("vector mode requires a component".into()))?;
        let s = self.component(c);
        Ok(s.coeffs[s.slot(m.j, m.k)?])
    }

    pub fn set(&mut self, m: ModeIndex, v: f64) -> Result<()> {
        let c = m
            .component
            .ok_or_else(|| Error::Index("vector mode requires a component".into()))?;
        let s = self.component_mut(c);
        let slot = s.slot(m.j, m.k)?;
        s.coeffs[slot] = v;
        Ok(())
    }

    /// Flat view: comp1 slots followed by comp2 slots.
    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.comp1.coeffs.iter().chain(&self.comp2.coeffs).copied()
    }

    pub fn flat_get(&self, idx: usize) -> f64 {
        let n = self.comp1.len();
        if idx < n {
            self.comp1.coeffs[idx]
        } else {
            self.comp2.coeffs[idx - n]
        }
    }

    pub fn flat_set(&mut self, idx: usize, v: f64) {
        let n = self.comp1.len();
        if idx < n {
            self.comp1.coeffs[idx] = v;
        } else {
            self.comp2.coeffs[idx - n] = v;
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.comp1.dot(&other.comp1) + self.comp2.dot(&other.comp2)
    }

    /// ‖·‖²_{L²}: by orthonormality the coefficient sum of squares.
    pub fn l2_norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    /// ‖∇·‖²_{L²} = Σ λ_jk c².
    pub fn h10_norm_sq(&self, domain: &DomainSpec) -> f64 {
        self.weighted_sq(domain, |l| l)
    }

    pub fn h10_norm(&self, domain: &DomainSpec) -> f64 {
        self.h10_norm_sq(domain).sqrt()
    }

    /// Dual norm Σ c²/λ_jk.
    pub fn hminus1_norm_sq(&self, domain: &DomainSpec) -> f64 {
        self.weighted_sq(domain, |l| 1.0 / l)
    }

    pub fn hminus1_norm(&self, domain: &DomainSpec) -> f64 {
        self.hminus1_norm_sq(domain).sqrt()
    }

    /// ‖Δ·‖²_{L²} = Σ λ²_jk c².
    pub fn laplacian_norm_sq(&self, domain: &DomainSpec) -> f64 {
        self.weighted_sq(domain, |l| l * l)
    }

    fn weighted_sq(&self, domain: &DomainSpec, w: impl Fn(f64) -> f64) -> f64 {
        let (mx, my) = self.modes();
        let mut acc = 0.0;
        for j in 1..=mx {
            for k in 1..=my {
                let s = (j - 1) * my + (k - 1);
                let a = self.comp1.coeffs[s];
                let b = self.comp2.coeffs[s];
                acc += w(domain.eigenvalue(j, k)) * (a * a + b * b);
            }
        }
        acc
    }

    pub fn scale(&mut self, s: f64) {
        self.comp1.coeffs.iter_mut().for_each(|x| *x *= s);
        self.comp2.coeffs.iter_mut().for_each(|x| *x *= s);
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    /// `self += a·x`.
    pub fn axpy(&mut self, a: f64, x: &Self) {
        for (y, v) in self.comp1.coeffs.iter_mut().zip(&x.comp1.coeffs) {
            *y += a * v;
        }
        for (y, v) in self.comp2.coeffs.iter_mut().zip(&x.comp2.coeffs) {
            *y += a * v;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.flat().all(f64::is_finite)
    }

    pub fn resized(&self, modes_x1: usize, modes_x2: usize) -> Self {
        Self {
            comp1: self.comp1.resized(modes_x1, modes_x2),
            comp2: self.comp2.resized(modes_x1, modes_x2),
        }
    }
}

/// Random coefficients, uniform in [−1, 1] scaled by `(j²+k²)^(−decay/2)`.
pub fn random_vector(domain: &DomainSpec, rng: &mut impl Rng, decay: f64) -> VectorModal {
    let mut v = VectorModal::zeros_for(domain);
    for j in 1..=domain.modes_x1 {
        for k in 1..=domain.modes_x2 {
            let s = ((j * j + k * k) as f64).powf(-decay / 2.0);
            v.comp1.set(j, k, s * rng.random_range(-1.0..1.0));
            v.comp2.set(j, k, s * rng.random_range(-1.0..1.0));
        }
    }
    v
}

/// Grid values of a scalar (one component) or vector (two components) field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodalField {
    pub grid_x1: usize,
    pub grid_x2: usize,
    /// One node array per component, index `i·grid_x2 + l`.
    pub data: Vec<Vec<f64>>,
}

impl NodalField {
    pub fn zeros(grid_x1: usize, grid_x2: usize, components: usize) -> Self {
        Self {
            grid_x1,
            grid_x2,
            data: vec![vec![0.0; grid_x1 * grid_x2]; components],
        }
    }

    pub fn scalar_zeros(domain: &DomainSpec) -> Self {
        Self::zeros(domain.grid_x1, domain.grid_x2, 1)
    }

    pub fn vector_zeros(domain: &DomainSpec) -> Self {
        Self::zeros(domain.grid_x1, domain.grid_x2, 2)
    }

    /// Scalar field sampled from a function of position.
    pub fn scalar_from_fn(domain: &DomainSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = Self::scalar_zeros(domain);
        for i in 0..domain.grid_x1 {
            for l in 0..domain.grid_x2 {
                let (x, y) = domain.node(i, l);
                out.data[0][i * domain.grid_x2 + l] = f(x, y);
            }
        }
        out
    }

    pub fn vector_from_fn(domain: &DomainSpec, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let mut out = Self::vector_zeros(domain);
        for i in 0..domain.grid_x1 {
            for l in 0..domain.grid_x2 {
                let (x, y) = domain.node(i, l);
                let (a, b) = f(x, y);
                out.data[0][i * domain.grid_x2 + l] = a;
                out.data[1][i * domain.grid_x2 + l] = b;
            }
        }
        out
    }

    pub fn components(&self) -> usize {
        self.data.len()
    }

    pub fn matches(&self, domain: &DomainSpec) -> bool {
        self.grid_x1 == domain.grid_x1 && self.grid_x2 == domain.grid_x2
    }

    pub fn scale(&mut self, s: f64) {
        self.data
            .iter_mut()
            .flat_map(|c| c.iter_mut())
            .for_each(|x| *x *= s);
    }

    pub fn axpy(&mut self, a: f64, x: &Self) {
        for (yc, xc) in self.data.iter_mut().zip(&x.data) {
            for (y, v) in yc.iter_mut().zip(xc) {
                *y += a * v;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Which norm [`Basis::norm`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    L2,
    L4,
    H10,
    Hminus1,
}

/// Input to [`Basis::norm`].
#[derive(Debug, Clone, Copy)]
pub enum FieldRef<'a> {
    Scalar(&'a ScalarModal),
    Vector(&'a VectorModal),
    Nodal(&'a NodalField),
}

/// Precomputed 1-D basis tables and quadrature weights for one domain.
#[derive(Debug, Clone)]
pub struct Basis {
    domain: DomainSpec,
    /// `sin_x1[(j-1)·grid_x1 + i] = √(2/L₁)·sin(jπx_i/L₁)`
    sin_x1: Vec<f64>,
    sin_x2: Vec<f64>,
    /// x-derivatives of the sine tables.
    dsin_x1: Vec<f64>,
    dsin_x2: Vec<f64>,
    weights_x1: Vec<f64>,
    weights_x2: Vec<f64>,
}

fn sine_tables(length: f64, modes: usize, nodes: usize) -> (Vec<f64>, Vec<f64>) {
    let h = length / (nodes - 1) as f64;
    let norm = (2.0 / length).sqrt();
    let mut s = Vec::with_capacity(modes * nodes);
    let mut d = Vec::with_capacity(modes * nodes);
    for j in 1..=modes {
        let kj = j as f64 * PI / length;
        for i in 0..nodes {
            // Exact zeros at both ends keep boundary values clean.
            let arg = kj * (i as f64 * h);
            let sv = if i == 0 || i == nodes - 1 {
                0.0
            } else {
                arg.sin()
            };
            s.push(norm * sv);
            d.push(norm * kj * arg.cos());
        }
    }
    (s, d)
}

fn trapezoid_weights(length: f64, nodes: usize) -> Vec<f64> {
    let h = length / (nodes - 1) as f64;
    let mut w = vec![h; nodes];
    w[0] = 0.5 * h;
    w[nodes - 1] = 0.5 * h;
    w
}

impl Basis {
    pub fn new(domain: &DomainSpec) -> Result<Self> {
        let v = domain.violations("domain");
        if !v.is_empty() {
            return Err(Error::Config(v));
        }
        let (sin_x1, dsin_x1) = sine_tables(domain.length_x1, domain.modes_x1, domain.grid_x1);
        let (sin_x2, dsin_x2) = sine_tables(domain.length_x2, domain.modes_x2, domain.grid_x2);
        Ok(Self {
            domain: domain.clone(),
            sin_x1,
            sin_x2,
            dsin_x1,
            dsin_x2,
            weights_x1: trapezoid_weights(domain.length_x1, domain.grid_x1),
            weights_x2: trapezoid_weights(domain.length_x2, domain.grid_x2),
        })
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    /// Pointwise value of φ_jk at `x`.
    pub fn basis_eval(&self, m: ModeIndex, x: (f64, f64)) -> Result<f64> {
        let d = &self.domain;
        d.mode_slot(m.j, m.k)?;
        let inside = |v: f64, l: f64| v.is_finite() && (0.0..=l).contains(&v);
        if !inside(x.0, d.length_x1) || !inside(x.1, d.length_x2) {
            return Err(Error::Contract(format!(
                "point ({}, {}) outside the closed rectangle",
                x.0, x.1
            )));
        }
        let norm = 2.0 / (d.length_x1 * d.length_x2).sqrt();
        let s1 = (m.j as f64 * PI * x.0 / d.length_x1).sin();
        let s2 = (m.k as f64 * PI * x.1 / d.length_x2).sin();
        // sin(jπ) is ~1e-16 in floating point; the basis vanishes on ∂O exactly.
        let on_edge = x.0 == 0.0 || x.0 == d.length_x1 || x.1 == 0.0 || x.1 == d.length_x2;
        Ok(if on_edge { 0.0 } else { norm * s1 * s2 })
    }

    /// Trapezoid-rule integral of a nodal scalar array.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        let ny = self.domain.grid_x2;
        let mut acc = 0.0;
        for (i, wi) in self.weights_x1.iter().enumerate() {
            let row = &values[i * ny..(i + 1) * ny];
            let s: f64 = row.iter().zip(&self.weights_x2).map(|(v, w)| v * w).sum();
            acc += wi * s;
        }
        acc
    }

    /// Quadrature inner product of two nodal fields with equal component count.
    pub fn inner_nodal(&self, a: &NodalField, b: &NodalField) -> Result<f64> {
        if a.components() != b.components() || !a.matches(&self.domain) || !b.matches(&self.domain)
        {
            return Err(Error::Dimension("nodal fields do not match".into()));
        }
        let mut acc = 0.0;
        for (ac, bc) in a.data.iter().zip(&b.data) {
            let prod: Vec<f64> = ac.iter().zip(bc).map(|(x, y)| x * y).collect();
            acc += self.integrate(&prod);
        }
        Ok(acc)
    }

    fn synth_tables(&self, c: &ScalarModal, tx: &[f64], ty: &[f64], out: &mut [f64]) {
        let d = &self.domain;
        let (mx, my, nx, ny) = (d.modes_x1, d.modes_x2, d.grid_x1, d.grid_x2);
        // tmp[j][l] = Σ_k c_jk ty_k(l)
        let mut tmp = vec![0.0; mx * ny];
        for j in 0..mx {
            let trow = &mut tmp[j * ny..(j + 1) * ny];
            for k in 0..my {
                let ck = c.coeffs[j * my + k];
                if ck == 0.0 {
                    continue;
                }
                let tyk = &ty[k * ny..(k + 1) * ny];
                for (t, s) in trow.iter_mut().zip(tyk) {
                    *t += ck * s;
                }
            }
        }
        out.iter_mut().for_each(|x| *x = 0.0);
        for j in 0..mx {
            let trow = &tmp[j * ny..(j + 1) * ny];
            let txj = &tx[j * nx..(j + 1) * nx];
            for (i, sx) in txj.iter().enumerate() {
                if *sx == 0.0 {
                    continue;
                }
                let orow = &mut out[i * ny..(i + 1) * ny];
                for (o, t) in orow.iter_mut().zip(trow) {
                    *o += sx * t;
                }
            }
        }
    }

    fn analyze_tables(&self, f: &[f64], tx: &[f64], ty: &[f64]) -> ScalarModal {
        let d = &self.domain;
        let (mx, my, nx, ny) = (d.modes_x1, d.modes_x2, d.grid_x1, d.grid_x2);
        // tmp[j][l] = Σ_i w_i tx_j(i) f(i,l)
        let mut tmp = vec![0.0; mx * ny];
        for j in 0..mx {
            let trow = &mut tmp[j * ny..(j + 1) * ny];
            let txj = &tx[j * nx..(j + 1) * nx];
            for i in 0..nx {
                let a = self.weights_x1[i] * txj[i];
                if a == 0.0 {
                    continue;
                }
                let frow = &f[i * ny..(i + 1) * ny];
                for (t, v) in trow.iter_mut().zip(frow) {
                    *t += a * v;
                }
            }
        }
        let mut out = ScalarModal::zeros(mx, my);
        for j in 0..mx {
            let trow = &tmp[j * ny..(j + 1) * ny];
            for k in 0..my {
                let tyk = &ty[k * ny..(k + 1) * ny];
                let mut s = 0.0;
                for l in 0..ny {
                    s += trow[l] * self.weights_x2[l] * tyk[l];
                }
                out.coeffs[j * my + k] = s;
            }
        }
        out
    }

    fn check_modal(&self, c: &ScalarModal) -> Result<()> {
        if c.modes_x1 != self.domain.modes_x1 || c.modes_x2 != self.domain.modes_x2 {
            return Err(Error::Dimension(format!(
                "modal shape {}×{} does not match domain {}×{}",
                c.modes_x1, c.modes_x2, self.domain.modes_x1, self.domain.modes_x2
            )));
        }
        Ok(())
    }

    fn check_nodal(&self, f: &NodalField, components: usize) -> Result<()> {
        if !f.matches(&self.domain) || f.components() != components {
            return Err(Error::Dimension(format!(
                "nodal field {}×{}×{} does not match grid {}×{}×{}",
                f.grid_x1,
                f.grid_x2,
                f.components(),
                self.domain.grid_x1,
                self.domain.grid_x2,
                components
            )));
        }
        Ok(())
    }

    /// Pointwise Σ c_jk φ_jk on the grid.
    pub fn synthesize_scalar(&self, c: &ScalarModal) -> Result<NodalField> {
        self.check_modal(c)?;
        let mut out = NodalField::scalar_zeros(&self.domain);
        self.synth_tables(c, &self.sin_x1, &self.sin_x2, &mut out.data[0]);
        Ok(out)
    }

    pub fn synthesize_vector(&self, c: &VectorModal) -> Result<NodalField> {
        self.check_modal(&c.comp1)?;
        self.check_modal(&c.comp2)?;
        let mut out = NodalField::vector_zeros(&self.domain);
        let (a, b) = out.data.split_at_mut(1);
        self.synth_tables(&c.comp1, &self.sin_x1, &self.sin_x2, &mut a[0]);
        self.synth_tables(&c.comp2, &self.sin_x1, &self.sin_x2, &mut b[0]);
        Ok(out)
    }

    /// Nodal ∂₁ of a scalar expansion (analytic basis derivative).
    pub fn synthesize_dx1(&self, c: &ScalarModal) -> Result<Vec<f64>> {
        self.check_modal(c)?;
        let mut out = vec![0.0; self.domain.nodes()];
        self.synth_tables(c, &self.dsin_x1, &self.sin_x2, &mut out);
        Ok(out)
    }

    /// Nodal ∂₂ of a scalar expansion.
    pub fn synthesize_dx2(&self, c: &ScalarModal) -> Result<Vec<f64>> {
        self.check_modal(c)?;
        let mut out = vec![0.0; self.domain.nodes()];
        self.synth_tables(c, &self.sin_x1, &self.dsin_x2, &mut out);
        Ok(out)
    }

    /// Nodal divergence ∂₁u₁ + ∂₂u₂.
    pub fn divergence(&self, u: &VectorModal) -> Result<Vec<f64>> {
        let mut d = self.synthesize_dx1(&u.comp1)?;
        let d2 = self.synthesize_dx2(&u.comp2)?;
        d.iter_mut().zip(&d2).for_each(|(a, b)| *a += b);
        Ok(d)
    }

    /// Orthogonal projection Pₙ of a scalar nodal field.
    pub fn project_scalar(&self, f: &NodalField) -> Result<ScalarModal> {
        self.check_nodal(f, 1)?;
        Ok(self.analyze_tables(&f.data[0], &self.sin_x1, &self.sin_x2))
    }

    /// Orthogonal projection Pₙ of a vector nodal field.
    pub fn project_vector(&self, f: &NodalField) -> Result<VectorModal> {
        self.check_nodal(f, 2)?;
        Ok(VectorModal {
            comp1: self.analyze_tables(&f.data[0], &self.sin_x1, &self.sin_x2),
            comp2: self.analyze_tables(&f.data[1], &self.sin_x1, &self.sin_x2),
        })
    }

    /// Quadrature pairing of a nodal array against ∂₁φ_jk for every mode.
    pub fn pair_dx1(&self, f: &[f64]) -> ScalarModal {
        self.analyze_tables(f, &self.dsin_x1, &self.sin_x2)
    }

    /// Quadrature pairing of a nodal array against ∂₂φ_jk for every mode.
    pub fn pair_dx2(&self, f: &[f64]) -> ScalarModal {
        self.analyze_tables(f, &self.sin_x1, &self.dsin_x2)
    }

    pub fn norm(&self, field: FieldRef<'_>, which: NormKind) -> Result<f64> {
        let d = &self.domain;
        match (field, which) {
            (FieldRef::Scalar(c), NormKind::L2) => Ok(c.norm_sq().sqrt()),
            (FieldRef::Vector(c), NormKind::L2) => Ok(c.l2_norm()),
            (FieldRef::Scalar(c), NormKind::H10) => {
                let v = VectorModal {
                    comp1: c.clone(),
                    comp2: ScalarModal::zeros(c.modes_x1, c.modes_x2),
                };
                Ok(v.h10_norm(d))
            }
            (FieldRef::Vector(c), NormKind::H10) => Ok(c.h10_norm(d)),
            (FieldRef::Scalar(c), NormKind::Hminus1) => {
                let v = VectorModal {
                    comp1: c.clone(),
                    comp2: ScalarModal::zeros(c.modes_x1, c.modes_x2),
                };
                Ok(v.hminus1_norm(d))
            }
            (FieldRef::Vector(c), NormKind::Hminus1) => Ok(c.hminus1_norm(d)),
            (FieldRef::Nodal(f), NormKind::L2) => Ok(self.nodal_l2_norm(f)?),
            (FieldRef::Nodal(f), NormKind::L4) => Ok(self.nodal_l4_norm(f)?),
            (FieldRef::Scalar(_) | FieldRef::Vector(_), NormKind::L4) => Err(Error::Contract(
                "L4 norm needs a nodal field; synthesize the coefficients first".into(),
            )),
            (FieldRef::Nodal(_), NormKind::H10 | NormKind::Hminus1) => Err(Error::Contract(
                "H10/H-1 norms are defined on modal coefficients".into(),
            )),
        }
    }

    fn pointwise_sq(&self, f: &NodalField) -> Result<Vec<f64>> {
        if !f.matches(&self.domain) {
            return Err(Error::Dimension("nodal field does not match grid".into()));
        }
        let mut sq = vec![0.0; self.domain.nodes()];
        for c in &f.data {
            for (s, v) in sq.iter_mut().zip(c) {
                *s += v * v;
            }
        }
        Ok(sq)
    }

    pub fn nodal_l2_norm(&self, f: &NodalField) -> Result<f64> {
        Ok(self.integrate(&self.pointwise_sq(f)?).max(0.0).sqrt())
    }

    /// (∫|f|⁴)^{1/4} with |·| the Euclidean norm over components.
    pub fn nodal_l4_norm(&self, f: &NodalField) -> Result<f64> {
        let q: Vec<f64> = self.pointwise_sq(f)?.into_iter().map(|s| s * s).collect();
        Ok(self.integrate(&q).max(0.0).powf(0.25))
    }

    /// Finite-difference gradient of a nodal scalar array: centered inside,
    /// second-order one-sided at the boundary.
    pub fn fd_gradient(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = &self.domain;
        let (nx, ny) = (d.grid_x1, d.grid_x2);
        let (h1, h2) = d.spacing();
        let at = |i: usize, l: usize| f[i * ny + l];
        let deriv = |n: usize, h: f64, get: &dyn Fn(usize) -> f64, i: usize| -> f64 {
            if n < 3 {
                return (get(n - 1) - get(0)) / (h * (n - 1) as f64);
            }
            if i == 0 {
                (-3.0 * get(0) + 4.0 * get(1) - get(2)) / (2.0 * h)
            } else if i == n - 1 {
                (3.0 * get(n - 1) - 4.0 * get(n - 2) + get(n - 3)) / (2.0 * h)
            } else {
                (get(i + 1) - get(i - 1)) / (2.0 * h)
            }
        };
        let mut gx = vec![0.0; nx * ny];
        let mut gy = vec![0.0; nx * ny];
        for i in 0..nx {
            for l in 0..ny {
                gx[i * ny + l] = deriv(nx, h1, &|ii| at(ii, l), i);
                gy[i * ny + l] = deriv(ny, h2, &|ll| at(i, ll), l);
            }
        }
        (gx, gy)
    }

    /// Five-point Laplacian at interior nodes; boundary nodes are left at 0.
    pub fn fd_laplacian(&self, f: &[f64]) -> Vec<f64> {
        let d = &self.domain;
        let (nx, ny) = (d.grid_x1, d.grid_x2);
        let (h1, h2) = d.spacing();
        let mut out = vec![0.0; nx * ny];
        for i in 1..nx.saturating_sub(1) {
            for l in 1..ny.saturating_sub(1) {
                let c = f[i * ny + l];
                out[i * ny + l] = (f[(i + 1) * ny + l] - 2.0 * c + f[(i - 1) * ny + l]) / (h1 * h1)
                    + (f[i * ny + l + 1] - 2.0 * c + f[i * ny + l - 1]) / (h2 * h2);
            }
        }
        out
    }
}
