//! End-to-end checks across modules: config to simulation to export and
//! back, and the ensemble diagnostics on small problems.

use tidal_core::diagnostics::{
    energy_estimate_check, h1_blowup_probe, lp_energy_check, martingale_mean_check, tightness_probe,
    uniqueness_check, BdgConstants, H1ProbeSpec,
};
use tidal_core::grid::{Component, DomainSpec, ModeIndex, VectorModal};
use tidal_core::io::config::{FlowSpec, ModeTerm, SpectrumSpec};
use tidal_core::io::export::{read_energy_csv, read_modes_csv, write_energy_csv, write_modes_csv};
use tidal_core::io::RunConfig;
use tidal_core::noise::MarkDistribution;
use tidal_core::timestepper::{SimConfig, Simulator};

fn small_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.domain = DomainSpec::unit_square(4, 4);
    c.sim = SimConfig::new(0.005, 0.5);
    c
}

fn additive(mut c: RunConfig) -> RunConfig {
    c.wiener.sigma_mult = 0.0;
    c.jumps.amp_mult = 0.0;
    c
}

#[test]
fn energy_csv_reparse_reproduces_report() {
    let cfg = small_config();
    let s = cfg.build().unwrap();
    let trajs = Simulator::new(&s.params, &s.noise, &s.sim)
        .unwrap()
        .ensemble(&s.u0, &s.z0, 6)
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut back = trajs.clone();
    for (i, t) in trajs.iter().enumerate() {
        let p = dir.path().join(format!("e{i}.csv"));
        write_energy_csv(&p, t).unwrap();
        let (times, e) = read_energy_csv(&p).unwrap();
        assert_eq!(times, t.step_times);
        back[i].energies = e;
    }
    let a = energy_estimate_check(&trajs, &s.params, &s.noise, BdgConstants::default()).unwrap();
    let b = energy_estimate_check(&back, &s.params, &s.noise, BdgConstants::default()).unwrap();
    assert_eq!(a.lhs_total.to_bits(), b.lhs_total.to_bits());
    assert_eq!(a, b);
    assert!(a.satisfied);
    assert_eq!(a.satisfied, a.recompute_satisfied());
}

#[test]
fn modes_csv_round_trip() {
    let cfg = small_config();
    let s = cfg.build().unwrap();
    let rec = Simulator::new(&s.params, &s.noise, &s.sim).unwrap().simulate(&s.u0, &s.z0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.csv");
    write_modes_csv(&p, &rec.final_state().u).unwrap();
    let u = read_modes_csv(&p, 4, 4).unwrap();
    assert_eq!(u, rec.final_state().u);
}

#[test]
fn config_file_round_trip_and_rerun_is_bitwise() {
    let mut cfg = small_config();
    cfg.initial.velocity.push(ModeTerm::new(2, 1, Component::X2, -0.2));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.json");
    std::fs::write(&p, cfg.to_json()).unwrap();
    let back = tidal_core::io::parse_config(&p).unwrap();
    assert_eq!(back, cfg);
    let run = |c: &RunConfig| {
        let s = c.build().unwrap();
        Simulator::new(&s.params, &s.noise, &s.sim).unwrap().simulate(&s.u0, &s.z0).unwrap()
    };
    assert_eq!(run(&cfg), run(&back));
}

#[test]
fn lp_estimate_is_stable_and_ordered() {
    let cfg = additive(small_config());
    let s = cfg.build().unwrap();
    let sim = Simulator::new(&s.params, &s.noise, &s.sim).unwrap();
    let big = sim.ensemble(&s.u0, &s.z0, 128).unwrap();
    let r64 = lp_energy_check(&big[..64], &s.params, 4.0, 1e6).unwrap();
    let r128 = lp_energy_check(&big, &s.params, 4.0, 1e6).unwrap();
    assert!(r64.satisfied && r128.satisfied);
    let ratio = r128.lhs_total / r64.lhs_total;
    assert!((0.5..=2.0).contains(&ratio), "{ratio}");
    let r3 = lp_energy_check(&big, &s.params, 3.0, 1e6).unwrap();
    // Lyapunov: (E X³)^{1/3} ≤ (E X⁴)^{1/4} for X = sup ‖u‖
    assert!(r3.sup_u_moment.powf(1.0 / 3.0) <= r128.sup_u_moment.powf(0.25) * (1.0 + 1e-12));
}

#[test]
fn martingale_channels_wiener_only() {
    let mut cfg = additive(small_config());
    cfg.jumps.total_intensity = 0.0;
    cfg.sim = SimConfig::new(0.01, 0.1);
    let s = cfg.build().unwrap();
    let trajs = Simulator::new(&s.params, &s.noise, &s.sim)
        .unwrap()
        .ensemble(&s.u0, &s.z0, 10_000)
        .unwrap();
    let r = martingale_mean_check(&trajs).unwrap();
    assert!(r.satisfied, "{r:?}");
    assert_eq!(r.channels[1].mean, 0.0);
}

#[test]
fn martingale_channels_jumps_only() {
    let mut cfg = small_config();
    cfg.wiener.sigma_add = 0.0;
    cfg.wiener.sigma_mult = 0.0;
    cfg.jumps.total_intensity = 5.0;
    cfg.jumps.marks = MarkDistribution::Discrete {
        values: vec![-1.0, 0.5],
        probs: vec![1.0 / 3.0, 2.0 / 3.0],
    };
    cfg.sim = SimConfig::new(0.01, 0.2);
    let s = cfg.build().unwrap();
    let trajs = Simulator::new(&s.params, &s.noise, &s.sim)
        .unwrap()
        .ensemble(&s.u0, &s.z0, 4000)
        .unwrap();
    let r = martingale_mean_check(&trajs).unwrap();
    assert!(r.satisfied, "{r:?}");
    assert_eq!(r.channels[0].mean, 0.0);
}

#[test]
fn stability_with_common_noise() {
    let cfg = small_config();
    let s = cfg.build().unwrap();
    let sim = Simulator::new(&s.params, &s.noise, &s.sim).unwrap();
    let ub = s.u0.add(&VectorModal::single(&s.domain, ModeIndex::vector(2, 2, Component::X2), 1e-3).unwrap());
    let pairs: Vec<_> = (0..16).map(|i| sim.simulate_pair(&s.u0, &ub, &s.z0, i).unwrap()).collect();
    let r = uniqueness_check(&pairs, &s.params, &s.noise).unwrap();
    assert!(r.satisfied);
    assert!(r.final_sq < r.initial_sq);
    assert_eq!(r.identical_pairs, 0);
    let same: Vec<_> = (0..3).map(|i| sim.simulate_pair(&s.u0, &s.u0, &s.z0, i).unwrap()).collect();
    let r = uniqueness_check(&same, &s.params, &s.noise).unwrap();
    assert_eq!(r.identical_pairs, 3);
    assert_eq!(r.final_sq, 0.0);
}

#[test]
fn regularity_table_shrinking_horizons() {
    let cfg = additive(small_config());
    let s = cfg.build().unwrap();
    let spec = H1ProbeSpec {
        thresholds: vec![0.5, 1.5, 3.0],
        horizons: vec![0.16, 0.08, 0.04, 0.02, 0.01],
        ensemble: 256,
        small_value: 0.05,
    };
    let r = h1_blowup_probe(&s.params, &s.noise, &s.sim, &s.u0, &s.z0, &spec).unwrap();
    let col_max: Vec<f64> = (0..spec.horizons.len())
        .map(|c| r.rows.iter().filter(|x| !x.degenerate).map(|x| x.probabilities[c]).fold(0.0, f64::max))
        .collect();
    assert!(col_max.windows(2).all(|w| w[1] <= w[0]), "{col_max:?}");
    assert!(r.rows[0].degenerate && r.rows[0].probabilities.iter().all(|p| *p == 1.0));
    let recomputed = r.rows.iter().filter(|x| !x.degenerate).all(|x| x.nonincreasing)
        && r.smallest_column_max <= r.small_value;
    assert_eq!(recomputed, r.satisfied);
}

#[test]
fn tightness_diffusive_scaling() {
    let mut cfg = additive(RunConfig::default());
    cfg.domain = DomainSpec::unit_square(6, 6);
    cfg.initial.velocity.clear();
    cfg.model.background_flow = FlowSpec::Zero;
    cfg.jumps.total_intensity = 0.0;
    cfg.wiener.spectrum = SpectrumSpec::Power { q0: 0.1, exponent: 1.5 };
    cfg.sim = SimConfig {
        record_stride: 5,
        ..SimConfig::new(1e-3, 0.5)
    };
    let s = cfg.build().unwrap();
    let trajs = Simulator::new(&s.params, &s.noise, &s.sim)
        .unwrap()
        .ensemble(&s.u0, &s.z0, 32)
        .unwrap();
    let r = tightness_probe(&trajs, &s.domain, &[0.005, 0.05, 0.2], &[0.005, 0.01, 0.02, 0.04]).unwrap();
    let b = r.aldous_moment.beta_hat;
    assert!((0.7..=1.3).contains(&b), "beta = {b}");
    assert!(r.modulus_monotone);
    // finest δ: one snapshot spacing, so only single-step increments remain
    assert!(r.modulus_curve[0].1 < r.modulus_curve[2].1);
}
