//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tidal_core::control::{evaluate_cost, optimize, ControlProblem, CostSpec, Method, OptimizeOptions, TrackingTarget};
use tidal_core::diagnostics::{
    energy_estimate_check, h1_blowup_probe, martingale_mean_check, modulus_from_distances,
    uniqueness_check, BdgConstants, H1ProbeSpec,
};
use tidal_core::grid::{random_vector, Basis, Component, DomainSpec, ModeIndex, NodalField, VectorModal};
use tidal_core::io::RunConfig;
use tidal_core::noise::{path_rng, NoiseSpec};
use tidal_core::operators::{apply_b, b_bound_checks, operator_suite, Modulated, ModelParams};
use tidal_core::timestepper::{SimConfig, Simulator, TrajectoryRecord};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn scaled(u: VectorModal, rng: &mut ChaCha8Rng) -> VectorModal {
    let n = u.l2_norm();
    u.scaled(10f64.powf(rng.random_range(-1.0..1.0)) / n)
}

fn monotonicity() -> Outcome {
    let d = DomainSpec::unit_square(16, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = f64::INFINITY;
    let mut pairs = 0;
    for _ in 0..20 {
        let gamma: Vec<f64> = (0..d.nodes()).map(|_| rng.random_range(0.01..2.0)).collect();
        let w = NodalField::vector_from_fn(&d, |_, _| (0.0, 0.0));
        let mut w0 = w.clone();
        for c in 0..2 {
            for x in w0.data[c].iter_mut() {
                *x = rng.random_range(-1.0..1.0);
            }
        }
        let p = ModelParams::simple(&d, 0.1, 0.5, 1.0, 0.5, 1.0)
            .unwrap()
            .with_gamma_field(gamma)
            .unwrap()
            .with_background(Modulated {
                base: w0,
                frequency: 1.3,
            })
            .unwrap();
        for _ in 0..500 {
            let (du, dv) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
            let u = random_vector(&d, &mut rng, du);
            let u = scaled(u, &mut rng);
            let v = random_vector(&d, &mut rng, dv);
            let v = scaled(v, &mut rng);
            let t = rng.random_range(0.0..5.0);
            let bu = apply_b(&u, t, &p).unwrap();
            let bv = apply_b(&v, t, &p).unwrap();
            worst = worst.min(bu.sub(&bv).dot(&u.sub(&v)));
            pairs += 1;
        }
    }
    outcome(worst >= -1e-9, format!("{pairs} pairs, min <B(u)-B(v),u-v> = {worst:e}"))
}

fn coercivity_continuity() -> Outcome {
    let d = DomainSpec::unit_square(8, 8);
    let p = ModelParams::simple(&d, 0.07, -1.3, 1.0, 0.5, 1.0).unwrap();
    let r = operator_suite(&p, 1000, 202).unwrap();
    let pick = |n: &str| r.iter().find(|x| x.name == n).unwrap().clone();
    let coer = pick("a(u,u) = alpha |u|_H10^2");
    let cont = pick("a continuity");
    outcome(
        coer.satisfied && cont.satisfied,
        format!(
            "worst |a(u,u)-a|u|^2| = {:e} (allowed {:e}); worst |a(u,v)| = {:e} <= {:e}",
            coer.lhs, coer.rhs, cont.lhs, cont.rhs
        ),
    )
}

fn ladyzhenskaya() -> Outcome {
    // Fine grid so the quartic integrand is integrated without aliasing.
    let mut d = DomainSpec::unit_square(8, 8);
    d.grid_x1 = 65;
    d.grid_x2 = 65;
    let b = Basis::new(&d).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut min_slack = f64::INFINITY;
    for _ in 0..200 {
        let decay = rng.random_range(0.0..2.0);
        let u = random_vector(&d, &mut rng, decay);
        let phi = b.synthesize_scalar(&u.comp1).unwrap();
        let l4 = b.nodal_l4_norm(&phi).unwrap().powi(4);
        let l2 = u.comp1.norm_sq();
        let h1: f64 = u
            .comp1
            .coeffs
            .iter()
            .zip(d.eigenvalues())
            .map(|(c, l)| c * c * l)
            .sum();
        min_slack = min_slack.min(2.0 * l2 * h1 - l4);
    }
    outcome(min_slack >= -1e-8, format!("200 polynomials, min slack = {min_slack:e}"))
}

fn b_bounds() -> Outcome {
    let s = RunConfig::default().build().unwrap();
    let r = b_bound_checks(&s.params, 1000, 404).unwrap();
    let ok = r.iter().all(|x| x.satisfied);
    let detail = r
        .iter()
        .map(|x| format!("{}: {:e} <= {:e}", x.name, x.lhs, x.rhs))
        .collect::<Vec<_>>()
        .join("; ");
    outcome(ok, format!("C2 = {}; {detail}", s.params.constants().c2))
}

fn default_ensemble() -> (RunConfig, Vec<TrajectoryRecord>) {
    let cfg = RunConfig::default();
    let s = cfg.build().unwrap();
    let sim = Simulator::new(&s.params, &s.noise, &s.sim).unwrap();
    let trajs = sim.ensemble(&s.u0, &s.z0, 128).unwrap();
    (cfg, trajs)
}

fn energy(cfg: &RunConfig, trajs: &[TrajectoryRecord]) -> Outcome {
    let s = cfg.build().unwrap();
    let r = energy_estimate_check(trajs, &s.params, &s.noise, BdgConstants::default()).unwrap();
    outcome(
        r.satisfied,
        format!(
            "{} paths, lhs = {:e} (sup {:e} + diss {:e}), bound = {:e}",
            r.ensemble_size, r.lhs_total, r.lhs_sup, r.lhs_dissipation, r.gronwall_bound
        ),
    )
}

fn uniqueness() -> Outcome {
    let s = RunConfig::default().build().unwrap();
    let d = &s.domain;
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let dir = random_vector(d, &mut rng, 1.0);
    let pert = dir.scaled(1e-3 / dir.l2_norm());
    let ub = s.u0.add(&pert);
    let sim = Simulator::new(&s.params, &s.noise, &s.sim).unwrap();
    let mut pairs = Vec::new();
    for i in 0..64 {
        let seed = tidal_core::noise::derive_path_seed(s.sim.seed, i);
        pairs.push(sim.simulate_pair(&s.u0, &ub, &s.z0, seed).unwrap());
    }
    let r = uniqueness_check(&pairs, &s.params, &s.noise).unwrap();
    let (a, b) = sim.simulate_pair(&s.u0, &s.u0, &s.z0, 77).unwrap();
    let same = a.states == b.states && a.energies == b.energies && a.jump_log == b.jump_log;
    outcome(
        r.satisfied && same,
        format!(
            "E|w(T)|^2 = {:e} <= {:e} (|w0|^2 = {:e}); identical-data paths bitwise equal: {same}",
            r.final_sq, r.bound, r.initial_sq
        ),
    )
}

fn noise_laws(trajs: &[TrajectoryRecord]) -> Outcome {
    let s = RunConfig::default().build().unwrap();
    let noise = &s.noise;
    let d = &s.domain;
    let n = 100_000;
    let dt = 1e-3;
    let modes = d.scalar_modes();
    let mut rng = path_rng(707);
    let mut sq1 = vec![0.0; modes];
    let mut sq2 = vec![0.0; modes];
    let mut counts = 0usize;
    let u = random_vector(d, &mut ChaCha8Rng::seed_from_u64(708), 1.0);
    let dof = 2 * modes;
    let mut jsum = vec![0.0; dof];
    let mut jsq = vec![0.0; dof];
    for _ in 0..n {
        let draw = noise.sample(dt, &mut rng).unwrap();
        for m in 0..modes {
            sq1[m] += draw.dw1[m] * draw.dw1[m];
            sq2[m] += draw.dw2[m] * draw.dw2[m];
        }
        counts += draw.jumps.len();
        let (_, jump) = noise.increments(&u, &draw, dt);
        for (k, x) in jump.flat().enumerate() {
            jsum[k] += x;
            jsq[k] += x * x;
        }
    }
    let mut worst_var: f64 = 0.0;
    for m in 0..modes {
        let q = noise.wiener.q[m] * dt;
        for s in [sq1[m], sq2[m]] {
            worst_var = worst_var.max((s / n as f64 / q - 1.0).abs());
        }
    }
    let lam = noise.jumps.total_intensity * dt;
    let mean_count = counts as f64 / n as f64;
    let count_ok = (mean_count - lam).abs() <= 3.0 * (lam / n as f64).sqrt();
    let mut worst_z: f64 = 0.0;
    for k in 0..dof {
        let mean = jsum[k] / n as f64;
        let var = (jsq[k] / n as f64 - mean * mean).max(0.0);
        let se = (var / n as f64).sqrt();
        if se > 0.0 {
            worst_z = worst_z.max(mean.abs() / se);
        } else if mean != 0.0 {
            worst_z = f64::INFINITY;
        }
    }
    let mart = martingale_mean_check(trajs).unwrap();
    let chan: Vec<String> = mart
        .channels
        .iter()
        .map(|c| format!("{} {:e}±{:e}", c.name, c.mean, c.stderr))
        .collect();
    outcome(
        worst_var <= 0.05 && count_ok && worst_z <= 4.0 && mart.satisfied,
        format!(
            "max rel var err {worst_var:.4}; mean count {mean_count:e} vs {lam:e}; max |jump mean|/se {worst_z:.2}; channels {}",
            chan.join(", ")
        ),
    )
}

fn linear_oracle() -> Outcome {
    let d = DomainSpec::unit_square(6, 6);
    let alpha = 0.3;
    let p = ModelParams::simple(&d, alpha, 0.0, 0.0, 0.0, 1.0).unwrap();
    let noise = NoiseSpec::off(&d);
    let mut u0 = VectorModal::zeros_for(&d);
    u0.set(ModeIndex::vector(1, 1, Component::X1), 1.0).unwrap();
    u0.set(ModeIndex::vector(2, 3, Component::X2), -0.5).unwrap();
    u0.set(ModeIndex::vector(5, 1, Component::X1), 0.25).unwrap();
    let z0 = NodalField::scalar_zeros(&d);
    let horizon = 0.5;
    let run = |dt: f64| {
        let c = SimConfig::new(dt, horizon);
        Simulator::new(&p, &noise, &c).unwrap().simulate(&u0, &z0).unwrap()
    };
    let mut worst_rel: f64 = 0.0;
    let mut errs = Vec::new();
    for dt in [0.01, 0.005] {
        let rec = run(dt);
        let steps = (horizon / dt).round() as i32;
        let fin = &rec.final_state().u;
        let mut err_sq = 0.0;
        for (m, j, k, c) in [(1.0, 1, 1, Component::X1), (-0.5, 2, 3, Component::X2), (0.25, 5, 1, Component::X1)] {
            let lam = d.eigenvalue(j, k);
            let want = m * (1.0 + dt * alpha * lam).powi(-steps);
            let got = fin.get(ModeIndex::vector(j, k, c)).unwrap();
            worst_rel = worst_rel.max(((got - want) / want).abs());
            let exact = m * (-alpha * lam * horizon).exp();
            err_sq += (got - exact).powi(2);
        }
        errs.push(err_sq.sqrt());
    }
    let ratio = errs[0] / errs[1];
    outcome(
        worst_rel <= 1e-8 && (1.7..=2.3).contains(&ratio),
        format!("max rel deviation {worst_rel:e}; dt-halving error ratio {ratio:.4}"),
    )
}

fn brute_modulus(times: &[f64], delta: f64, dist: &dyn Fn(usize, usize) -> f64) -> f64 {
    let n = times.len();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << (n - 2)) {
        let mut cuts = vec![0];
        cuts.extend((0..n - 2).filter(|i| mask & (1 << i) != 0).map(|i| i + 1));
        cuts.push(n - 1);
        if cuts.windows(2).any(|w| times[w[1]] - times[w[0]] < delta - 1e-12) {
            continue;
        }
        let mut worst: f64 = 0.0;
        for w in cuts.windows(2) {
            for i in w[0]..w[1] {
                for j in i..w[1] {
                    worst = worst.max(dist(i, j));
                }
            }
        }
        best = best.min(worst);
    }
    best
}

fn modulus_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut checks = 0;
    let mut mismatches = 0;
    // Random step trajectories in the plane.
    for _ in 0..80 {
        let n = rng.random_range(3..=14);
        let mut times = vec![0.0];
        for _ in 1..n {
            let last = *times.last().unwrap();
            times.push(last + rng.random_range(0.02..0.3));
        }
        let mut vals = Vec::with_capacity(n);
        let mut cur = (0.0, 0.0);
        for _ in 0..n {
            if rng.random_bool(0.3) {
                cur = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
            vals.push(cur);
        }
        let dist = |i: usize, j: usize| {
            let (a, b): ((f64, f64), (f64, f64)) = (vals[i], vals[j]);
            (a.0 - b.0).hypot(a.1 - b.1)
        };
        let horizon = times[n - 1];
        for k in 1..5 {
            let delta = horizon * k as f64 / 5.0;
            checks += 1;
            if modulus_from_distances(&times, delta, &dist).unwrap() != brute_modulus(&times, delta, &dist) {
                mismatches += 1;
            }
        }
    }
    // Simulated jump paths measured in H⁻¹.
    let d = DomainSpec::unit_square(4, 4);
    let p = ModelParams::simple(&d, 0.1, 0.5, 1.0, 0.5, 1.0).unwrap();
    let mut noise = NoiseSpec::off(&d);
    noise.jumps.total_intensity = 20.0;
    noise.jumps.marks = tidal_core::noise::MarkDistribution::Uniform { a: -1.0, b: 1.0 };
    noise.jumps.amp_add = 1.0;
    noise.jumps.profile = VectorModal::single(&d, ModeIndex::vector(1, 1, Component::X1), 1.0).unwrap();
    let c = SimConfig {
        record_stride: 1,
        ..SimConfig::new(0.01, 0.13)
    };
    let u0 = VectorModal::single(&d, ModeIndex::vector(1, 2, Component::X2), 0.3).unwrap();
    let sim = Simulator::new(&p, &noise, &c).unwrap();
    for seed in 0..20 {
        let rec = sim.simulate_seeded(&u0, &NodalField::scalar_zeros(&d), seed).unwrap();
        let st = &rec.states;
        let dist = |i: usize, j: usize| st[i].u.sub(&st[j].u).hminus1_norm(&d);
        for delta in [0.02, 0.05, 0.1] {
            checks += 1;
            let a = tidal_core::diagnostics::cadlag_modulus(&rec, &d, delta).unwrap();
            if a != brute_modulus(&rec.times, delta, &dist) {
                mismatches += 1;
            }
        }
    }
    outcome(mismatches == 0, format!("{checks} comparisons, {mismatches} mismatches"))
}

fn tracking_problem(w_track: f64) -> ControlProblem {
    let d = DomainSpec::unit_square(4, 4);
    let alpha = 0.1;
    let params = ModelParams::simple(&d, alpha, 0.0, 0.0, 0.0, 1.0).unwrap();
    let basis = params.basis().clone();
    let sim = SimConfig::new(0.01, 0.5);
    let lam = d.eigenvalue(1, 1);
    let mut times = Vec::new();
    let mut fields = Vec::new();
    for m in 0..=sim.steps() {
        let t = m as f64 * sim.dt;
        let u = VectorModal::single(&d, ModeIndex::vector(1, 1, Component::X1), 0.8 * (-alpha * lam * t).exp()).unwrap();
        times.push(t);
        fields.push(basis.synthesize_vector(&u).unwrap());
    }
    ControlProblem {
        u0: VectorModal::single(&d, ModeIndex::vector(1, 1, Component::X1), 0.3).unwrap(),
        z0: NodalField::scalar_zeros(&d),
        control_modes: 1,
        control_bound: 4.0,
        cost: CostSpec::new(w_track, 0.05, TrackingTarget::Path { times, fields }).unwrap(),
        params,
        noise: NoiseSpec::off(&d),
        sim,
        seed_set: vec![1],
    }
}

fn control_recovery() -> Outcome {
    let prob = tracking_problem(1.0);
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=2000 {
        let c = -1.0 + i as f64 * 1e-3;
        let j = evaluate_cost(&[c, 0.0], &prob).unwrap().0;
        if j < best.0 {
            best = (j, c);
        }
    }
    let opts = OptimizeOptions {
        budget: 200,
        ..Default::default()
    };
    let t = optimize(&prob, Method::FdGradient, &opts).unwrap();
    let u_err = (t.best_coeffs[0] - best.1).abs().max(t.best_coeffs[1].abs());
    let cs = optimize(
        &prob,
        Method::CoordinateSearch,
        &OptimizeOptions {
            budget: 200,
            initial_step: 0.25,
            ..Default::default()
        },
    )
    .unwrap();

    let origin = optimize(
        &tracking_problem(0.0),
        Method::FdGradient,
        &OptimizeOptions {
            budget: 50,
            initial: Some(vec![0.9, -0.6]),
            ..Default::default()
        },
    )
    .unwrap();
    let origin_norm = origin.best_coeffs.iter().map(|x| x * x).sum::<f64>().sqrt();

    // Full noise run: monotone trace and no worse than U = 0.
    let cfg = RunConfig::default();
    let mut s = cfg.build().unwrap();
    s.sim = SimConfig::new(0.01, 0.5);
    let noisy = ControlProblem {
        u0: s.u0.clone(),
        z0: s.z0.clone(),
        control_modes: 2,
        control_bound: 1.0,
        cost: CostSpec::new(1.0, 0.01, TrackingTarget::Steady(NodalField::vector_zeros(&s.domain))).unwrap(),
        params: s.params.clone(),
        noise: s.noise.clone(),
        sim: s.sim.clone(),
        seed_set: ControlProblem::derived_seeds(5, 16),
    };
    let nt = optimize(
        &noisy,
        Method::FdGradient,
        &OptimizeOptions {
            budget: 40,
            ..Default::default()
        },
    )
    .unwrap();
    let j0 = evaluate_cost(&[0.0; 4], &noisy).unwrap().0;
    let monotone = t.is_monotone() && cs.is_monotone() && origin.is_monotone() && nt.is_monotone();
    outcome(
        u_err <= 1e-3 && origin_norm <= 1e-6 && monotone && nt.best_value <= j0 && origin.evaluations <= 50,
        format!(
            "grid argmin {:.3}, optimizer {:?} (err {u_err:e}); w_track=0 |U*| = {origin_norm:e} in {} evals; monotone {monotone}; noisy J {:e} <= J(0) {:e}",
            best.1, t.best_coeffs, origin.evaluations, nt.best_value, j0
        ),
    )
}

fn regularity() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.wiener.sigma_mult = 0.0;
    cfg.jumps.amp_mult = 0.0;
    let s = cfg.build().unwrap();
    let spec = H1ProbeSpec {
        thresholds: vec![0.5, 2.0, 5.0, 20.0],
        horizons: vec![0.2, 0.1, 0.05, 0.02],
        ensemble: 256,
        small_value: 0.05,
    };
    let r = h1_blowup_probe(&s.params, &s.noise, &s.sim, &s.u0, &s.z0, &spec).unwrap();
    let rows: Vec<String> = r
        .rows
        .iter()
        .map(|row| format!("N={}{}: {:?}", row.threshold, if row.degenerate { "*" } else { "" }, row.probabilities))
        .collect();
    outcome(
        r.satisfied,
        format!("smallest-T max {:.4}; {}", r.smallest_column_max, rows.join("; ")),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, limit: Duration, f: &mut dyn FnMut() -> Outcome| {
        let t0 = Instant::now();
        let o = f();
        let el = t0.elapsed();
        let in_time = el <= limit;
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {id:>2} {name}: {} [{:.1}s / limit {}s]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            el.as_secs_f64(),
            limit.as_secs()
        );
    };
    let secs = Duration::from_secs;
    report(1, "B monotonicity", secs(30), &mut monotonicity);
    report(2, "a(.,.) coercivity and continuity", secs(5), &mut coercivity_continuity);
    report(3, "Ladyzhenskaya inequality", secs(10), &mut ladyzhenskaya);
    report(4, "B growth/Lipschitz bounds", secs(20), &mut b_bounds);
    let t0 = Instant::now();
    let (cfg, trajs) = default_ensemble();
    let build = t0.elapsed();
    report(5, "energy estimate", secs(300), &mut || {
        let mut o = energy(&cfg, &trajs);
        o.detail.push_str(&format!("; ensemble built in {:.1}s", build.as_secs_f64()));
        o
    });
    report(6, "pathwise stability", secs(180), &mut uniqueness);
    report(7, "noise laws and martingale means", secs(120), &mut || noise_laws(&trajs));
    report(8, "deterministic linear oracle", secs(30), &mut linear_oracle);
    report(9, "cadlag modulus oracle", secs(60), &mut modulus_oracle);
    report(10, "control recovery", secs(120), &mut control_recovery);
    report(11, "H1 regularity probe", secs(600), &mut regularity);
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
    println!("all 11 criteria passed");
}
