//! `tidal` command dispatch. Exit codes: 0 success, 1 a check reported
//! `satisfied = false`, 2 usage or configuration error, 3 divergence.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use tidal_core::control::{optimize, Method};
use tidal_core::diagnostics::{
    cadlag_modulus, energy_estimate_check, h1_blowup_probe, lp_energy_check, martingale_mean_check,
    tightness_probe, BdgConstants, EnergyReport, H1ProbeSpec, LpReport, MartingaleReport,
};
use tidal_core::io::export::{
    write_csv, write_energy_csv, write_json, write_modes_csv, write_tdf1, write_trace_csv,
};
use tidal_core::io::{parse_config, RunConfig, RunManifest, Setup};
use tidal_core::noise::hypothesis_checks;
use tidal_core::operators::{operator_suite, OperatorReport};
use tidal_core::timestepper::{ensemble_seeds, Simulator, TrajectoryRecord};
use tidal_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_UNSATISFIED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "tidal", version, about = "Stochastic tidal dynamics simulator and verification suite")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides outputs.directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides sim.seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run paths and write energies, final state and manifest.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        paths: usize,
    },
    /// Operator inequalities and noise hypotheses on random samples.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
    /// Sup-energy estimate, optional Lᵖ estimate and martingale means.
    Energy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        paths: Option<usize>,
        /// Also check the Lᵖ estimate for this p > 2.
        #[arg(long)]
        exponent: Option<f64>,
        #[arg(long, default_value_t = 1e6)]
        max_constant: f64,
    },
    /// Small-time H¹₀ exceedance table.
    Regularity {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0.5,2,5,10")]
        thresholds: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.1,0.05,0.02")]
        horizons: Vec<f64>,
        #[arg(long, default_value_t = 256)]
        paths: usize,
        #[arg(long, default_value_t = 0.05)]
        small_value: f64,
    },
    /// Tightness probes: moment bounds, modulus curve, Aldous fit.
    Tightness {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.2,0.4")]
        deltas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.02,0.04,0.08")]
        thetas: Vec<f64>,
    },
    /// Minimize the sample-average cost of the `control` section.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Càdlàg modulus curve of simulated paths.
    Modulus {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.2,0.4")]
        deltas: Vec<f64>,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    match s {
        "fd_gradient" => Ok(Method::FdGradient),
        "coordinate_search" => Ok(Method::CoordinateSearch),
        _ => Err(format!("unknown method {s:?} (fd_gradient | coordinate_search)")),
    }
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome = Result<bool, Failure>;

/// Loaded configuration plus output bookkeeping for one command.
struct Run {
    argv: Vec<String>,
    config: RunConfig,
    setup: Setup,
    out: PathBuf,
    started: Instant,
    artifacts: Vec<String>,
}

impl Run {
    fn open(argv: &[String], c: &Common) -> Result<Self, Failure> {
        let mut config = match &c.config {
            Some(p) => parse_config(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = c.seed {
            config.sim.seed = s;
        }
        let setup = config.build()?;
        let out = c
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(&config.outputs.directory));
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Self {
            argv: argv.to_vec(),
            config,
            setup,
            out,
            started: Instant::now(),
            artifacts: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.out.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let p = self.path(name);
        write_json(&p, value)?;
        Ok(())
    }

    fn finish(mut self, seeds: Vec<u64>) -> Result<(), Failure> {
        let mut m = RunManifest::new(self.argv.clone(), &self.config, &self.setup, seeds);
        m.artifacts = std::mem::take(&mut self.artifacts);
        m.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        write_json(&self.out.join("manifest.json"), &m)?;
        Ok(())
    }

    fn ensemble(&self, paths: usize) -> Result<Vec<TrajectoryRecord>, Failure> {
        let s = &self.setup;
        let sim = Simulator::new(&s.params, &s.noise, &s.sim)?;
        Ok(sim.ensemble(&s.u0, &s.z0, paths)?)
    }
}

/// Wraps a report with a pointer back to the manifest of the run.
#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    manifest: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

fn doc<T: Serialize>(body: &T) -> Document<'_, T> {
    Document {
        manifest: "manifest.json",
        body,
    }
}

#[derive(Serialize)]
struct VerifyReport {
    samples: usize,
    seed: u64,
    reports: Vec<OperatorReport>,
    satisfied: bool,
}

#[derive(Serialize)]
struct EnergyDocument {
    energy: EnergyReport,
    martingale: MartingaleReport,
    lp: Option<LpReport>,
    satisfied: bool,
}

#[derive(Serialize)]
struct ModulusRow {
    delta: f64,
    sup: f64,
    mean: f64,
}

fn simulate(argv: &[String], c: &Common, paths: usize) -> Outcome {
    if paths == 0 {
        return Err(Failure::Usage("--paths must be at least 1".into()));
    }
    let mut run = Run::open(argv, c)?;
    let seeds = if paths == 1 {
        vec![run.setup.sim.seed]
    } else {
        ensemble_seeds(run.setup.sim.seed, paths)
    };
    let s = run.setup.clone();
    let sim = Simulator::new(&s.params, &s.noise, &s.sim)?;
    let mut first: Option<TrajectoryRecord> = None;
    for (i, seed) in seeds.iter().enumerate() {
        let rec = match sim.simulate_seeded(&s.u0, &s.z0, *seed) {
            Ok(r) => r,
            Err(Error::Divergence {
                step,
                reason,
                seed,
                partial,
            }) => {
                let name = format!("path_{i:04}_energy.csv");
                let p = run.path(&name);
                write_energy_csv(&p, &partial)?;
                run.finish(seeds.clone())?;
                return Err(Failure::Core(Error::Divergence {
                    step,
                    reason,
                    seed,
                    partial,
                }));
            }
            Err(e) => return Err(e.into()),
        };
        if run.config.outputs.csv {
            let p = run.path(&format!("path_{i:04}_energy.csv"));
            write_energy_csv(&p, &rec)?;
        }
        if run.config.outputs.snapshots {
            let b = s.params.basis();
            for (k, st) in rec.states.iter().enumerate() {
                let p = run.path(&format!("path_{i:04}_u_{k:05}.tdf"));
                write_tdf1(&p, &b.synthesize_vector(&st.u)?)?;
                let p = run.path(&format!("path_{i:04}_z_{k:05}.tdf"));
                write_tdf1(&p, &st.zhat)?;
            }
        }
        if first.is_none() {
            first = Some(rec);
        }
    }
    let rec = first.expect("at least one path");
    let fin = rec.final_state();
    let p = run.path("final_modes.csv");
    write_modes_csv(&p, &fin.u)?;
    let p = run.path("final_velocity.tdf");
    write_tdf1(&p, &s.params.basis().synthesize_vector(&fin.u)?)?;
    let p = run.path("final_elevation.tdf");
    write_tdf1(&p, &fin.zhat)?;
    println!(
        "simulated {} path(s) to T = {}; final ‖u‖² = {}",
        seeds.len(),
        s.sim.horizon,
        fin.u.l2_norm_sq()
    );
    run.finish(seeds)?;
    Ok(true)
}

fn verify(argv: &[String], c: &Common, samples: usize) -> Outcome {
    let mut run = Run::open(argv, c)?;
    let seed = run.setup.sim.seed;
    let mut reports = operator_suite(&run.setup.params, samples, seed)?;
    reports.extend(hypothesis_checks(&run.setup.noise, &run.setup.domain, samples, seed)?);
    for r in &reports {
        println!(
            "{:<28} {}  lhs = {:e}  rhs = {:e}",
            r.name,
            if r.satisfied { "ok  " } else { "FAIL" },
            r.lhs,
            r.rhs
        );
    }
    let satisfied = reports.iter().all(|r| r.satisfied);
    let rep = VerifyReport {
        samples,
        seed,
        reports,
        satisfied,
    };
    run.json("verify.json", &doc(&rep))?;
    run.finish(vec![seed])?;
    Ok(satisfied)
}

fn energy(argv: &[String], c: &Common, paths: Option<usize>, exponent: Option<f64>, max_constant: f64) -> Outcome {
    let mut run = Run::open(argv, c)?;
    let n = paths.unwrap_or(run.setup.ensemble);
    let trajs = run.ensemble(n)?;
    let s = &run.setup;
    let energy = energy_estimate_check(&trajs, &s.params, &s.noise, BdgConstants::default())?;
    let martingale = martingale_mean_check(&trajs)?;
    let lp = match exponent {
        Some(p) => Some(lp_energy_check(&trajs, &s.params, p, max_constant)?),
        None => None,
    };
    println!(
        "energy: lhs = {:e}  bound = {:e}  {}",
        energy.lhs_total,
        energy.gronwall_bound,
        if energy.satisfied { "ok" } else { "FAIL" }
    );
    for ch in &martingale.channels {
        println!("martingale {}: mean = {:e} ± {:e}", ch.name, ch.mean, ch.stderr);
    }
    if let Some(l) = &lp {
        println!("L^{} constant = {:e} (max {:e})", l.exponent, l.empirical_constant, l.max_constant);
    }
    let satisfied = energy.satisfied && martingale.satisfied && lp.as_ref().is_none_or(|l| l.satisfied);
    let d = EnergyDocument {
        energy,
        martingale,
        lp,
        satisfied,
    };
    run.json("energy.json", &doc(&d))?;
    if run.config.outputs.csv {
        for (i, t) in trajs.iter().enumerate() {
            let p = run.path(&format!("path_{i:04}_energy.csv"));
            write_energy_csv(&p, t)?;
        }
    }
    let seeds = ensemble_seeds(run.setup.sim.seed, n);
    run.finish(seeds)?;
    Ok(satisfied)
}

fn regularity(argv: &[String], c: &Common, spec: H1ProbeSpec) -> Outcome {
    let mut run = Run::open(argv, c)?;
    let s = run.setup.clone();
    let r = h1_blowup_probe(&s.params, &s.noise, &s.sim, &s.u0, &s.z0, &spec)?;
    let mut header = vec!["threshold".to_string()];
    header.extend(r.horizons.iter().map(|h| format!("T={h}")));
    let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<f64>> = r
        .rows
        .iter()
        .map(|row| {
            let mut v = vec![row.threshold];
            v.extend(&row.probabilities);
            v
        })
        .collect();
    for row in &r.rows {
        println!(
            "N = {:<6} {:?}{}",
            row.threshold,
            row.probabilities,
            if row.degenerate { " (degenerate)" } else { "" }
        );
    }
    let p = run.path("regularity.csv");
    write_csv(&p, &hdr, &rows)?;
    run.json("regularity.json", &doc(&r))?;
    run.finish(ensemble_seeds(s.sim.seed, spec.ensemble))?;
    Ok(r.satisfied)
}

fn tightness(argv: &[String], c: &Common, paths: Option<usize>, deltas: &[f64], thetas: &[f64]) -> Outcome {
    let mut run = Run::open(argv, c)?;
    let n = paths.unwrap_or(run.setup.ensemble);
    let trajs = run.ensemble(n)?;
    let r = tightness_probe(&trajs, &run.setup.domain, deltas, thetas)?;
    println!(
        "E sup‖u‖ = {:e}  E∫‖u‖²_H1 = {:e}  beta = {}  C = {:e}",
        r.sup_l2, r.integral_h10, r.aldous_moment.beta_hat, r.aldous_moment.c_hat
    );
    run.json("tightness.json", &doc(&r))?;
    let seeds = ensemble_seeds(run.setup.sim.seed, n);
    run.finish(seeds)?;
    Ok(r.modulus_monotone)
}

fn modulus(argv: &[String], c: &Common, paths: Option<usize>, deltas: &[f64]) -> Outcome {
    let mut run = Run::open(argv, c)?;
    let n = paths.unwrap_or(run.setup.ensemble);
    let trajs = run.ensemble(n)?;
    let mut rows = Vec::new();
    for &d in deltas {
        let vals = trajs
            .iter()
            .map(|t| cadlag_modulus(t, &run.setup.domain, d))
            .collect::<tidal_core::Result<Vec<_>>>()?;
        let sup = vals.iter().cloned().fold(0.0, f64::max);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        println!("delta = {d}: sup = {sup:e}  mean = {mean:e}");
        rows.push(ModulusRow { delta: d, sup, mean });
    }
    let table: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.delta, r.sup, r.mean]).collect();
    let p = run.path("modulus.csv");
    write_csv(&p, &["delta", "sup", "mean"], &table)?;
    let seeds = ensemble_seeds(run.setup.sim.seed, n);
    run.finish(seeds)?;
    Ok(true)
}

fn optimize_cmd(argv: &[String], c: &Common, method: Option<Method>, budget: Option<usize>) -> Outcome {
    let mut run = Run::open(argv, c)?;
    let Some((prob, m, mut opts)) = run.config.control_problem(&run.setup)? else {
        return Err(Failure::Usage("configuration has no `control` section".into()));
    };
    if let Some(b) = budget {
        opts.budget = b;
    }
    let trace = optimize(&prob, method.unwrap_or(m), &opts)?;
    println!(
        "best cost {:e} after {} evaluations ({})",
        trace.best_value, trace.evaluations, trace.stop_reason
    );
    run.json("trace.json", &doc(&trace))?;
    let p = run.path("trace.csv");
    write_trace_csv(&p, &trace)?;
    run.finish(prob.seed_set.clone())?;
    Ok(trace.is_monotone())
}

/// Parse `argv` (program name first) and run the command.
pub fn run_command<S: AsRef<str>>(argv: &[S]) -> i32 {
    let argv: Vec<String> = argv.iter().map(|s| s.as_ref().to_string()).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Simulate { common, paths } => simulate(&argv, common, *paths),
        Command::Verify { common, samples } => verify(&argv, common, *samples),
        Command::Energy {
            common,
            paths,
            exponent,
            max_constant,
        } => energy(&argv, common, *paths, *exponent, *max_constant),
        Command::Regularity {
            common,
            thresholds,
            horizons,
            paths,
            small_value,
        } => regularity(
            &argv,
            common,
            H1ProbeSpec {
                thresholds: thresholds.clone(),
                horizons: horizons.clone(),
                ensemble: *paths,
                small_value: *small_value,
            },
        ),
        Command::Tightness {
            common,
            paths,
            deltas,
            thetas,
        } => tightness(&argv, common, *paths, deltas, thetas),
        Command::Optimize {
            common,
            method,
            budget,
        } => optimize_cmd(&argv, common, *method, *budget),
        Command::Modulus { common, paths, deltas } => modulus(&argv, common, *paths, deltas),
    };
    match outcome {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_UNSATISFIED,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Divergence { .. } => EXIT_DIVERGENCE,
                _ => EXIT_USAGE,
            }
        }
    }
}
