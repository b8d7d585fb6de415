//! Driving noise: truncated Q-Wiener increments and compound-Poisson jumps.
//!
//! Each scalar mode (j,k) carries covariance eigenvalue q_jk, applied
//! independently to both velocity components. The diffusion acts diagonally:
//! `σ(u)dW` in mode m is `(c₀ + c₁·u_m)·dW_m`. Jumps carry real marks z and
//! displace the state by `H(u,z) = z·(c₂ψ + c₃u)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{random_vector, DomainSpec, VectorModal};
use crate::operators::OperatorReport;

/// Per-path seed from a master seed (splitmix64 finalizer over
/// `master + (index+1)·φ64`). Adjacent indices give decorrelated streams.
pub fn derive_path_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add((index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn path_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Q-Wiener covariance spectrum and the affine diffusion coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WienerSpec {
    /// One eigenvalue per scalar mode, j-major.
    pub q: Vec<f64>,
    pub sigma_add: f64,
    pub sigma_mult: f64,
    /// Exponent s of a power-law spectrum q₀λ^{-s}, when that is how q was built.
    pub decay_exponent: Option<f64>,
}

impl WienerSpec {
    pub fn power_law(domain: &DomainSpec, q0: f64, s: f64, c0: f64, c1: f64) -> Self {
        Self {
            q: domain.eigenvalues().iter().map(|l| q0 * l.powf(-s)).collect(),
            sigma_add: c0,
            sigma_mult: c1,
            decay_exponent: Some(s),
        }
    }

    pub fn off(domain: &DomainSpec) -> Self {
        Self {
            q: vec![0.0; domain.scalar_modes()],
            sigma_add: 0.0,
            sigma_mult: 0.0,
            decay_exponent: None,
        }
    }

    pub fn validate(&self, domain: &DomainSpec) -> Result<()> {
        if self.q.len() != domain.scalar_modes() {
            return Err(Error::Dimension(format!(
                "spectrum has {} entries for {} modes",
                self.q.len(),
                domain.scalar_modes()
            )));
        }
        if self.q.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
            return Err(Error::Contract("q eigenvalues must be finite and nonnegative".into()));
        }
        if !self.sigma_add.is_finite() || !self.sigma_mult.is_finite() {
            return Err(Error::Contract("sigma coefficients must be finite".into()));
        }
        Ok(())
    }

    /// Tr Q over the vector-valued space (each scalar mode counted twice).
    pub fn trace(&self) -> f64 {
        2.0 * self.q.iter().sum::<f64>()
    }

    pub fn is_active(&self) -> bool {
        (self.sigma_add != 0.0 || self.sigma_mult != 0.0) && self.q.iter().any(|q| *q > 0.0)
    }

    /// Growth constant: ‖σ(u)‖²_{L_Q} ≤ K(1+‖u‖²).
    pub fn growth_constant(&self) -> f64 {
        let c = self.sigma_add.powi(2).max(self.sigma_mult.powi(2));
        2.0 * c * self.trace()
    }

    /// Lipschitz constant: ‖σ(u)−σ(v)‖²_{L_Q} ≤ L‖u−v‖².
    pub fn lipschitz_constant(&self) -> f64 {
        self.sigma_mult.powi(2) * self.trace()
    }

    /// ‖σ(u)‖²_{L_Q} = Σ_m q_m (c₀ + c₁u_m)².
    pub fn hs_norm_sq(&self, u: &VectorModal) -> f64 {
        let mut acc = 0.0;
        for (s, q) in self.q.iter().enumerate() {
            for c in [u.comp1.coeffs[s], u.comp2.coeffs[s]] {
                acc += q * (self.sigma_add + self.sigma_mult * c).powi(2);
            }
        }
        acc
    }

    /// ‖σ(u)−σ(v)‖²_{L_Q}.
    pub fn hs_dist_sq(&self, u: &VectorModal, v: &VectorModal) -> f64 {
        let mut acc = 0.0;
        for (s, q) in self.q.iter().enumerate() {
            let a = u.comp1.coeffs[s] - v.comp1.coeffs[s];
            let b = u.comp2.coeffs[s] - v.comp2.coeffs[s];
            acc += q * self.sigma_mult.powi(2) * (a * a + b * b);
        }
        acc
    }

    /// Σ_m λ_m q_m (c₀ + c₁u_m)², the H¹₀ analogue of [`Self::hs_norm_sq`].
    pub fn gradient_hs_norm_sq(&self, domain: &DomainSpec, u: &VectorModal) -> f64 {
        let lam = domain.eigenvalues();
        let mut acc = 0.0;
        for (s, q) in self.q.iter().enumerate() {
            for c in [u.comp1.coeffs[s], u.comp2.coeffs[s]] {
                acc += lam[s] * q * (self.sigma_add + self.sigma_mult * c).powi(2);
            }
        }
        acc
    }
}

/// Law of the jump marks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarkDistribution {
    Uniform { a: f64, b: f64 },
    Discrete { values: Vec<f64>, probs: Vec<f64> },
}

impl MarkDistribution {
    pub fn validate(&self) -> std::result::Result<(), String> {
        match self {
            Self::Uniform { a, b } => {
                if !(a.is_finite() && b.is_finite() && a <= b) {
                    return Err(format!("uniform marks need finite a <= b, got ({a}, {b})"));
                }
            }
            Self::Discrete { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return Err("discrete marks need matching nonempty values and probs".into());
                }
                if values.iter().any(|v| !v.is_finite()) || probs.iter().any(|p| !(*p >= 0.0)) {
                    return Err("discrete marks need finite values and nonnegative probs".into());
                }
                let s: f64 = probs.iter().sum();
                if (s - 1.0).abs() > 1e-12 {
                    return Err(format!("discrete mark probabilities sum to {s}, not 1"));
                }
            }
        }
        Ok(())
    }

    /// E|z|ᵖ for real p ≥ 0.
    pub fn abs_moment(&self, p: f64) -> f64 {
        match self {
            Self::Uniform { a, b } => {
                if a == b {
                    return a.abs().powf(p);
                }
                // antiderivative of |z|ᵖ
                let f = |z: f64| z.signum() * z.abs().powf(p + 1.0) / (p + 1.0);
                (f(*b) - f(*a)) / (b - a)
            }
            Self::Discrete { values, probs } => values
                .iter()
                .zip(probs)
                .map(|(v, pr)| pr * v.abs().powf(p))
                .sum(),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Uniform { a, b } => 0.5 * (a + b),
            Self::Discrete { values, probs } => values.iter().zip(probs).map(|(v, p)| v * p).sum(),
        }
    }

    pub fn second_moment(&self) -> f64 {
        self.abs_moment(2.0)
    }

    pub fn variance(&self) -> f64 {
        self.second_moment() - self.mean().powi(2)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self {
            Self::Uniform { a, b } => {
                if a == b {
                    *a
                } else {
                    a + (b - a) * rng.random::<f64>()
                }
            }
            Self::Discrete { values, probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                *values.last().unwrap()
            }
        }
    }
}

/// Finite-intensity Poisson random measure and the jump coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpSpec {
    pub total_intensity: f64,
    pub marks: MarkDistribution,
    pub amp_add: f64,
    pub amp_mult: f64,
    /// Shape ψ.
    pub profile: VectorModal,
}

impl JumpSpec {
    pub fn off(domain: &DomainSpec) -> Self {
        Self {
            total_intensity: 0.0,
            marks: MarkDistribution::Uniform { a: 0.0, b: 0.0 },
            amp_add: 0.0,
            amp_mult: 0.0,
            profile: VectorModal::zeros_for(domain),
        }
    }

    pub fn validate(&self, domain: &DomainSpec) -> Result<()> {
        if !(self.total_intensity.is_finite() && self.total_intensity >= 0.0) {
            return Err(Error::Contract("jump intensity must be finite and nonnegative".into()));
        }
        self.marks.validate().map_err(Error::Contract)?;
        if self.profile.modes() != (domain.modes_x1, domain.modes_x2) {
            return Err(Error::Dimension("jump profile shape does not match domain".into()));
        }
        if !self.amp_add.is_finite() || !self.amp_mult.is_finite() || !self.profile.is_finite() {
            return Err(Error::Contract("jump amplitudes must be finite".into()));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.total_intensity > 0.0
    }

    /// c₂ψ + c₃u, the mark-free part of H.
    fn shape(&self, u: &VectorModal) -> VectorModal {
        let mut out = self.profile.scaled(self.amp_add);
        out.axpy(self.amp_mult, u);
        out
    }

    /// ∫_Z ‖H(u,z)‖² λ(dz) ≤ K(1+‖u‖²).
    pub fn growth_constant(&self) -> f64 {
        2.0 * self.total_intensity
            * self.marks.second_moment()
            * (self.amp_add.powi(2) * self.profile.l2_norm_sq()).max(self.amp_mult.powi(2))
    }

    pub fn lipschitz_constant(&self) -> f64 {
        self.total_intensity * self.marks.second_moment() * self.amp_mult.powi(2)
    }

    /// Constant M of ∫‖H(u,z)‖ᵖλ(dz) ≤ M(1+‖u‖ᵖ).
    pub fn p_moment_constant(&self, p: f64) -> f64 {
        let a = self.amp_add.abs().powf(p) * self.profile.l2_norm().powf(p);
        let b = self.amp_mult.abs().powf(p);
        self.total_intensity * self.marks.abs_moment(p) * 2f64.powf(p - 1.0) * a.max(b)
    }

    /// Closed form ∫‖H(u,z)‖ᵖ λ(dz) = λ E|z|ᵖ ‖c₂ψ + c₃u‖ᵖ.
    pub fn p_moment(&self, u: &VectorModal, p: f64) -> f64 {
        self.total_intensity * self.marks.abs_moment(p) * self.shape(u).l2_norm().powf(p)
    }

    pub fn lipschitz_integral(&self, u: &VectorModal, v: &VectorModal) -> f64 {
        self.total_intensity
            * self.marks.second_moment()
            * self.amp_mult.powi(2)
            * u.sub(v).l2_norm_sq()
    }

    /// ∫‖∇H(u,z)‖² λ(dz).
    pub fn gradient_integral(&self, domain: &DomainSpec, u: &VectorModal) -> f64 {
        self.total_intensity * self.marks.second_moment() * self.shape(u).h10_norm_sq(domain)
    }
}

/// Wiener and jump parts together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub wiener: WienerSpec,
    pub jumps: JumpSpec,
}

impl NoiseSpec {
    pub fn off(domain: &DomainSpec) -> Self {
        Self {
            wiener: WienerSpec::off(domain),
            jumps: JumpSpec::off(domain),
        }
    }

    pub fn validate(&self, domain: &DomainSpec) -> Result<()> {
        self.wiener.validate(domain)?;
        self.jumps.validate(domain)
    }

    pub fn is_active(&self) -> bool {
        self.wiener.is_active() || self.jumps.is_active()
    }

    /// K of the combined growth hypothesis.
    pub fn growth_constant(&self) -> f64 {
        self.wiener.growth_constant() + self.jumps.growth_constant()
    }

    /// L of the combined Lipschitz hypothesis.
    pub fn lipschitz_constant(&self) -> f64 {
        self.wiener.lipschitz_constant() + self.jumps.lipschitz_constant()
    }

    /// One step's worth of randomness. Wiener increments for every mode are
    /// drawn first (component 1 then 2), then the jump events.
    pub fn sample(&self, dt: f64, rng: &mut impl Rng) -> Result<NoiseDraw> {
        let (dw1, dw2) = sample_wiener(dt, &self.wiener, rng)?;
        let jumps = sample_jumps(dt, &self.jumps, rng)?;
        Ok(NoiseDraw { dw1, dw2, jumps })
    }

    /// σ(u)dW + Σ H(u,z_i) − dt·∫H(u,z)λ(dz), split into its two parts.
    pub fn increments(&self, u: &VectorModal, draw: &NoiseDraw, dt: f64) -> (VectorModal, VectorModal) {
        let s = apply_sigma(u, draw, &self.wiener);
        let mut j = u.scaled(0.0);
        if self.jumps.is_active() {
            let total: f64 = draw.jumps.iter().map(|e| e.1).sum();
            let comp = self.jumps.total_intensity * self.jumps.marks.mean() * dt;
            j = self.jumps.shape(u).scaled(total - comp);
        }
        (s, j)
    }
}

/// Realized randomness for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseDraw {
    pub dw1: Vec<f64>,
    pub dw2: Vec<f64>,
    /// (offset within the step, mark), offsets in (0, dt), increasing.
    pub jumps: Vec<(f64, f64)>,
}

impl NoiseDraw {
    pub fn zero(modes: usize) -> Self {
        Self {
            dw1: vec![0.0; modes],
            dw2: vec![0.0; modes],
            jumps: Vec::new(),
        }
    }
}

/// Independent N(0, q_m dt) increments for every mode of both components.
pub fn sample_wiener(dt: f64, spec: &WienerSpec, rng: &mut impl Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Contract(format!("dt must be positive, got {dt}")));
    }
    let draw = |q: f64, rng: &mut dyn rand::RngCore| {
        let z: f64 = StandardNormal.sample(rng);
        (q * dt).sqrt() * z
    };
    let dw1: Vec<f64> = spec.q.iter().map(|q| draw(*q, rng)).collect();
    let dw2: Vec<f64> = spec.q.iter().map(|q| draw(*q, rng)).collect();
    Ok((dw1, dw2))
}

/// Poisson events on (0, dt) by exponential inter-arrival times.
pub fn sample_jumps(dt: f64, spec: &JumpSpec, rng: &mut impl Rng) -> Result<Vec<(f64, f64)>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Contract(format!("dt must be positive, got {dt}")));
    }
    let mut out = Vec::new();
    if spec.total_intensity == 0.0 {
        return Ok(out);
    }
    let exp = Exp::new(spec.total_intensity)
        .map_err(|e| Error::Contract(format!("jump intensity: {e}")))?;
    let mut t = 0.0;
    loop {
        t += exp.sample(rng);
        if t >= dt {
            break;
        }
        if t > 0.0 {
            out.push((t, spec.marks.sample(rng)));
        }
    }
    Ok(out)
}

/// σ(u)dW with the affine per-mode coefficient.
pub fn apply_sigma(u: &VectorModal, draw: &NoiseDraw, spec: &WienerSpec) -> VectorModal {
    let mut out = u.scaled(0.0);
    let (c0, c1) = (spec.sigma_add, spec.sigma_mult);
    for s in 0..spec.q.len() {
        out.comp1.coeffs[s] = (c0 + c1 * u.comp1.coeffs[s]) * draw.dw1[s];
        out.comp2.coeffs[s] = (c0 + c1 * u.comp2.coeffs[s]) * draw.dw2[s];
    }
    out
}

/// H(u,z) = z(c₂ψ + c₃u).
pub fn apply_h(u: &VectorModal, z: f64, spec: &JumpSpec) -> VectorModal {
    spec.shape(u).scaled(z)
}

/// ∫_Z H(u,z) λ(dz) = λ E[z] (c₂ψ + c₃u).
pub fn compensator(u: &VectorModal, spec: &JumpSpec) -> VectorModal {
    spec.shape(u)
        .scaled(spec.total_intensity * spec.marks.mean())
}

/// Growth/Lipschitz hypotheses and the p-th moment bound on random states.
pub fn hypothesis_checks(
    noise: &NoiseSpec,
    domain: &DomainSpec,
    samples: usize,
    seed: u64,
) -> Result<Vec<OperatorReport>> {
    if samples == 0 {
        return Err(Error::Contract("samples must be at least 1".into()));
    }
    noise.validate(domain)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f_6973_6521);
    let k = noise.growth_constant();
    let l = noise.lipschitz_constant();
    let m4 = noise.jumps.p_moment_constant(4.0);
    let mut worst = [
        ("noise growth", f64::INFINITY, 0.0, 0.0),
        ("noise Lipschitz", f64::INFINITY, 0.0, 0.0),
        ("jump 4th moment", f64::INFINITY, 0.0, 0.0),
    ];
    let mut record = |i: usize, lhs: f64, rhs: f64| {
        let slack = if (rhs - lhs).is_nan() { f64::NEG_INFINITY } else { rhs - lhs };
        if slack < worst[i].1 {
            worst[i] = (worst[i].0, slack, lhs, rhs);
        }
    };
    for _ in 0..samples {
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let u = random_vector(domain, &mut rng, 1.0).scaled(scale);
        let v = random_vector(domain, &mut rng, 1.0).scaled(scale);
        let grow = noise.wiener.hs_norm_sq(&u) + noise.jumps.p_moment(&u, 2.0);
        record(0, grow, k * (1.0 + u.l2_norm_sq()) * (1.0 + 1e-12));
        let lip = noise.wiener.hs_dist_sq(&u, &v) + noise.jumps.lipschitz_integral(&u, &v);
        record(1, lip, l * u.sub(&v).l2_norm_sq() * (1.0 + 1e-12));
        record(
            2,
            noise.jumps.p_moment(&u, 4.0),
            m4 * (1.0 + u.l2_norm().powi(4)) * (1.0 + 1e-12),
        );
    }
    Ok(worst
        .iter()
        .map(|(n, _, lhs, rhs)| OperatorReport::new(n, *lhs, *rhs, 0.0, samples))
        .collect())
}
