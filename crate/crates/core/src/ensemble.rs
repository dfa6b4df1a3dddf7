//! The time loop, ensembles of independent trajectories, and moment
//! statistics.
//!
//! One step from `t_n` to `t_{n+1}`:
//!
//! 1. the potential of `c_n` is current (solved at the end of the last step);
//! 2. the Wiener increment `dW_n` is drawn and the record of `t_n` is built,
//!    including `<f dW_n, u_n>` and `½ sum_k ||P f e_k||²`;
//! 3. monitors see the record and may stop the run;
//! 4. cut-off prefactors are evaluated at the current state;
//! 5. ions advance with `u_n` and the (optionally mollified) potential;
//! 6. velocity advances with the Coulomb force of `rho_n` and the noise;
//! 7. the potential of `c_{n+1}` is solved.
//!
//! Trajectory `s` of a run with seed `seed` draws every increment from the
//! counter-based stream `(seed, s, step)`, so results are bit-identical for
//! any worker count.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{SimConfig, TimeStep};
use crate::diagnostics::{energy_balance_residual, record, write_csv, DiagnosticsRecord, StepTerms};
use crate::fluid::{coulomb_force, grad_norm_sq, FluidSolver, FluidState, DEFAULT_TOL};
use crate::ions::{dt_max, step_ions_with, IonSpecies, IonState};
use crate::noise::{
    apply_noise_operator, projected_hs_norm_sq, sample_wiener_increment, NoiseModel, StreamKey,
};
use crate::par::Execution;
use crate::poisson::{ElectroState, PoissonSolver};
use crate::regularization::{mollify, Hits, StoppingMonitor, Truncation};
use crate::snapshot::{FieldKind, Snapshot};
use crate::state::SystemState;
use crate::{Error, Grid, Result, ScalarField, VectorField};

/// Relative residual target of the potential solve inside the loop.
pub const POISSON_TOL: f64 = 1e-12;

/// Environment variable capping ensemble workers.
pub const THREADS_ENV: &str = "NPNS_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum StopReason {
    Completed,
    /// A monitor fired on the record of this step.
    Monitor { step: usize },
}

/// Result of one trajectory.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub records: Vec<DiagnosticsRecord>,
    pub stop: StopReason,
    pub hits: Hits,
    pub dt: f64,
    /// Residual of the pathwise energy balance over the recorded steps.
    pub energy_residual: f64,
    pub final_state: SystemState,
}

impl RunOutput {
    pub fn noise_work_total(&self) -> f64 {
        let steps = self.records.len().saturating_sub(1);
        self.records[..steps].iter().map(|r| r.noise_work).sum()
    }
}

/// Solvers and initial state of a configuration.
#[derive(Clone, Debug)]
pub struct Simulation {
    config: SimConfig,
    poisson: PoissonSolver,
    fluid: FluidSolver,
    noise: Option<NoiseModel>,
    dt: f64,
    n_steps: usize,
    initial: SystemState,
}

fn transport_potential(psi: &ScalarField, eps: Option<f64>) -> Result<ScalarField> {
    match eps {
        Some(e) => mollify(psi, e),
        None => Ok(psi.clone()),
    }
}

impl Simulation {
    pub fn new(config: &SimConfig) -> Result<Self> {
        config.validate()?;
        let g = config.build_grid()?;
        let p = &config.physics;
        let species = p
            .species
            .iter()
            .map(|s| IonSpecies::new(s.z, s.a, s.initial.field(g)))
            .collect::<Result<Vec<_>>>()?;
        let ions = IonState::new(species, p.entropy_delta)?;
        let eta = p.eta.data(&g);
        let poisson = PoissonSolver::new(g, p.varsigma, eta.clone(), POISSON_TOL)?;
        let rho = ions.charge_density();
        let psi = poisson.solve(&rho, None)?;
        let fluid_state = FluidState::new(p.velocity.field(g), p.mu, p.kappa)?;
        let initial = SystemState::new(
            ions,
            fluid_state,
            ElectroState {
                psi,
                rho,
                eta,
                varsigma: p.varsigma,
            },
        )?;

        let t_end = config.time.t_end;
        let (dt, n_steps) = match config.time.dt {
            TimeStep::Fixed(dt) => (dt, ((t_end / dt) - 1e-9).ceil().max(1.0) as usize),
            TimeStep::Auto => {
                let pref = config.truncation.prefactors(&initial);
                let psi_t = transport_potential(&initial.electro.psi, config.mollifier.eps)?;
                let bound = dt_max(&initial.ions, &initial.fluid.u, &psi_t, pref)?;
                let raw = config.time.auto_fraction * bound;
                let n = if raw.is_finite() { (t_end / raw).ceil().max(1.0) as usize } else { 1 };
                (t_end / n as f64, n)
            }
        };
        let noise = if config.noise.enabled {
            Some(NoiseModel::new(g, config.noise.spec())?)
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            poisson,
            fluid: FluidSolver::new(g, p.mu, dt, DEFAULT_TOL)?,
            noise,
            dt,
            n_steps,
            initial,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn grid(&self) -> &Grid {
        self.initial.grid()
    }

    pub fn initial_state(&self) -> &SystemState {
        &self.initial
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn noise_model(&self) -> Option<&NoiseModel> {
        self.noise.as_ref()
    }

    pub fn poisson(&self) -> &PoissonSolver {
        &self.poisson
    }

    /// Runs trajectory `stream`, writing snapshots under `snapshot_dir` when
    /// the configuration asks for them.
    pub fn run(&self, stream: u64, snapshot_dir: Option<&Path>) -> Result<RunOutput> {
        let cfg = &self.config;
        let dt = self.dt;
        let n = self.n_steps;
        let delta = cfg.physics.entropy_delta;
        let truncation: Truncation = cfg.truncation;
        let mut monitor = StoppingMonitor::new(cfg.monitors.thresholds);
        let mut st = self.initial.clone();
        let mut records = Vec::with_capacity(n + 1);
        let mut u4 = 0.0;
        let mut stop = StopReason::Completed;
        let zero_noise = VectorField::zeros(*self.grid());
        let every = cfg.output.snapshot_every;

        for step in 0..=n {
            let at = |e: Error| e.at_step(step);
            let t = step as f64 * dt;
            let mut terms = StepTerms {
                u4_running: u4,
                ..StepTerms::default()
            };
            let mut increment = None;
            if let (Some(model), true) = (&self.noise, step < n) {
                let e = self.poisson.electric_field(&st.electro.psi).map_err(at)?;
                let key = StreamKey {
                    seed: cfg.seed,
                    stream,
                    step: step as u64,
                };
                let inc = sample_wiener_increment(model, dt, key).map_err(at)?;
                let fdw = apply_noise_operator(model, &st.fluid.u, &e, &inc).map_err(at)?;
                terms.noise_work = fdw.dot(&st.fluid.u);
                terms.ito_half_hs =
                    0.5 * projected_hs_norm_sq(model, &st.fluid.u, &e, self.fluid.projector()).map_err(at)?;
                increment = Some(fdw);
            }
            let rec = record(&st, t, terms, delta).map_err(at)?;
            let hit = monitor.observe(&rec);
            records.push(rec);
            if let Some(dir) = snapshot_dir {
                if every > 0 && (step % every == 0 || step == n || hit) {
                    write_snapshots(dir, step, t, &st).map_err(at)?;
                }
            }
            if hit {
                stop = StopReason::Monitor { step };
                break;
            }
            if step == n {
                break;
            }

            u4 += grad_norm_sq(&st.fluid.u) * st.fluid.u.norm_sq() * dt;
            let pref = truncation.prefactors(&st);
            let psi_t = transport_potential(&st.electro.psi, cfg.mollifier.eps).map_err(at)?;
            let ions = step_ions_with(&st.ions, &st.fluid.u, &psi_t, dt, pref).map_err(at)?;
            let mut force = coulomb_force(&st.electro.rho, &psi_t, st.fluid.kappa).map_err(at)?;
            if pref.drift != 1.0 {
                force = force.scaled(pref.drift);
            }
            let noise = increment.as_ref().unwrap_or(&zero_noise);
            let fluid = self.fluid.step(&st.fluid, &force, noise, pref.advection).map_err(at)?;
            let rho = ions.charge_density();
            let psi = self.poisson.solve(&rho, Some(&st.electro.psi)).map_err(at)?;

            let next = step + 1;
            let poisoned = |field: &str| Error::NonFinite {
                step: next,
                field: field.to_string(),
            };
            for (i, s) in ions.species.iter().enumerate() {
                if !s.c.is_finite() {
                    return Err(poisoned(&format!("c{}", i + 1)));
                }
            }
            if !fluid.u.is_finite() {
                return Err(poisoned("u"));
            }
            if !psi.is_finite() {
                return Err(poisoned("psi"));
            }
            st = SystemState {
                ions,
                fluid,
                electro: ElectroState { psi, rho, ..st.electro },
            };
        }

        let works: Vec<f64> = records.iter().map(|r| r.noise_work).collect();
        let energy_residual = energy_balance_residual(&records, &works, st.fluid.kappa)?;
        Ok(RunOutput {
            records,
            stop,
            hits: monitor.hits(),
            dt,
            energy_residual,
            final_state: st,
        })
    }
}

fn write_snapshots(dir: &Path, step: usize, t: f64, st: &SystemState) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let save = |s: Snapshot| s.save(&dir.join(format!("snap_{step:06}_{}.bin", s.kind.name())));
    save(Snapshot::scalar(FieldKind::Potential, t, &st.electro.psi))?;
    save(Snapshot::scalar(FieldKind::Charge, t, &st.electro.rho))?;
    save(Snapshot::scalar(FieldKind::Pressure, t, &st.fluid.p))?;
    save(Snapshot::velocity(t, &st.fluid.u))?;
    for (i, s) in st.ions.species.iter().enumerate() {
        save(Snapshot::scalar(FieldKind::Concentration(i as u32), t, &s.c))?;
    }
    Ok(())
}

fn write_records(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let f = std::fs::File::create(path)?;
    write_csv(std::io::BufWriter::new(f), records)
}

/// Runs trajectory 0 and writes `diagnostics.csv` and snapshots to the
/// output directory, if one is configured.
pub fn run_simulation(config: &SimConfig) -> Result<RunOutput> {
    let sim = Simulation::new(config)?;
    let dir = config.output.directory.as_ref().map(PathBuf::from);
    let out = sim.run(0, dir.as_deref())?;
    if let (Some(dir), true) = (&dir, config.output.csv) {
        write_records(&dir.join("diagnostics.csv"), &out.records)?;
    }
    Ok(out)
}

/// `(mean of x^p, standard error)`; the error is `NaN` for one sample.
pub fn moment_estimate(samples: &[f64], p: f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Domain("no samples".into()));
    }
    if !(p >= 1.0) {
        return Err(Error::Domain(format!("moment order must be >= 1, got {p}")));
    }
    let pow = |x: f64| {
        if p == 1.0 {
            x
        } else if p.fract() == 0.0 && p <= i32::MAX as f64 {
            x.powi(p as i32)
        } else {
            x.powf(p)
        }
    };
    let y: Vec<f64> = samples.iter().map(|&x| pow(x)).collect();
    let n = y.len() as f64;
    // shifted two-pass: identical samples give exactly zero spread
    let y0 = y[0];
    let mean = y0 + y.iter().map(|v| v - y0).sum::<f64>() / n;
    if y.len() < 2 {
        return Ok((mean, f64::NAN));
    }
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Pathwise suprema collected per trajectory, in this order.
pub const SUP_FUNCTIONALS: [&str; 9] = [
    "u_l2",
    "kinetic",
    "free_energy",
    "h1_u",
    "h1_c",
    "grad_u",
    "grad_psi",
    "u4_running",
    "l8_c",
];

fn pathwise_sups(records: &[DiagnosticsRecord], kappa: f64) -> Vec<f64> {
    let mut s = [f64::NEG_INFINITY; SUP_FUNCTIONALS.len()];
    for r in records {
        let l8 = r.lj_norms.iter().map(|l| l[3]).fold(0.0f64, f64::max);
        let vals = [
            (2.0 * r.kinetic).sqrt(),
            r.kinetic,
            r.free_energy(kappa),
            r.h1_u,
            r.h1_c.iter().copied().fold(0.0f64, f64::max),
            r.grad_u_l2,
            r.grad_psi_w13p,
            r.u4_running,
            l8,
        ];
        for (m, v) in s.iter_mut().zip(vals) {
            *m = m.max(v);
        }
    }
    s.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Moment {
    pub p: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

fn moment(samples: &[f64], p: f64) -> Moment {
    let (mean, stderr) = moment_estimate(samples, p).unwrap_or((f64::NAN, f64::NAN));
    Moment {
        p,
        mean,
        stderr,
        n: samples.len(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FunctionalStats {
    pub name: String,
    /// One pathwise supremum per successful trajectory, by stream.
    pub samples: Vec<f64>,
    pub moments: Vec<Moment>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryFailure {
    pub stream: u64,
    pub message: String,
}

/// Summary of one successful trajectory.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectorySummary {
    pub stream: u64,
    pub stop: StopReason,
    pub energy_residual: f64,
    pub noise_work_total: f64,
    pub sups: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub n_requested: usize,
    pub trajectories: Vec<TrajectorySummary>,
    pub failures: Vec<TrajectoryFailure>,
    pub functionals: Vec<FunctionalStats>,
    /// Signed energy-balance residual (first moment).
    pub energy_residual: Moment,
    /// Total noise work per trajectory (first moment).
    pub noise_work: Moment,
}

impl EnsembleStats {
    pub fn functional(&self, name: &str) -> Option<&FunctionalStats> {
        self.functionals.iter().find(|f| f.name == name)
    }

    pub fn monitor_stops(&self) -> usize {
        self.trajectories
            .iter()
            .filter(|t| matches!(t.stop, StopReason::Monitor { .. }))
            .count()
    }

    fn from_outcomes(n_requested: usize, p_list: &[f64], outcomes: Vec<std::result::Result<TrajectorySummary, TrajectoryFailure>>) -> Self {
        let mut trajectories = Vec::new();
        let mut failures = Vec::new();
        for o in outcomes {
            match o {
                Ok(t) => trajectories.push(t),
                Err(f) => failures.push(f),
            }
        }
        let functionals = SUP_FUNCTIONALS
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let samples: Vec<f64> = trajectories.iter().map(|t| t.sups[k]).collect();
                FunctionalStats {
                    name: name.to_string(),
                    moments: p_list.iter().map(|&p| moment(&samples, p)).collect(),
                    samples,
                }
            })
            .collect();
        let residuals: Vec<f64> = trajectories.iter().map(|t| t.energy_residual).collect();
        let works: Vec<f64> = trajectories.iter().map(|t| t.noise_work_total).collect();
        Self {
            n_requested,
            energy_residual: moment(&residuals, 1.0),
            noise_work: moment(&works, 1.0),
            trajectories,
            failures,
            functionals,
        }
    }

    /// One row per functional and moment order.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["functional", "p", "mean", "stderr", "n"])?;
        let mut row = |name: &str, m: &Moment| {
            w.write_record([
                name.to_string(),
                m.p.to_string(),
                m.mean.to_string(),
                m.stderr.to_string(),
                m.n.to_string(),
            ])
        };
        for f in &self.functionals {
            for m in &f.moments {
                row(&format!("sup_{}", f.name), m)?;
            }
        }
        row("energy_residual", &self.energy_residual)?;
        row("noise_work", &self.noise_work)?;
        w.flush()?;
        Ok(())
    }
}

/// Workers for `n` trajectories: `NPNS_THREADS` if set, else the available
/// parallelism, never more than `n`.
pub fn worker_count(n: usize) -> Result<usize> {
    let requested = match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(k) if k >= 1 => k,
            _ => return Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => std::thread::available_parallelism().map_or(1, |k| k.get()),
    };
    Ok(requested.min(n).max(1))
}

fn run_one(sim: &Simulation, stream: u64, dir: Option<&Path>, csv: bool) -> std::result::Result<TrajectorySummary, TrajectoryFailure> {
    let traj_dir = dir.map(|d| d.join(format!("traj_{stream:04}")));
    let fail = |e: Error| TrajectoryFailure {
        stream,
        message: e.to_string(),
    };
    let out = sim.run(stream, traj_dir.as_deref()).map_err(fail)?;
    if let (Some(d), true) = (dir, csv) {
        write_records(&d.join(format!("traj_{stream:04}.csv")), &out.records).map_err(fail)?;
    }
    Ok(TrajectorySummary {
        stream,
        stop: out.stop,
        energy_residual: out.energy_residual,
        noise_work_total: out.noise_work_total(),
        sups: pathwise_sups(&out.records, out.final_state.fluid.kappa),
    })
}

/// Runs `ensemble.N` trajectories on streams `0..N`. A failing trajectory
/// is recorded in the statistics and the others continue.
pub fn run_ensemble(config: &SimConfig) -> Result<EnsembleStats> {
    run_ensemble_with(config, Execution::Parallel)
}

pub fn run_ensemble_with(config: &SimConfig, exec: Execution) -> Result<EnsembleStats> {
    let n = config.ensemble.n;
    if n < 2 {
        return Err(Error::Config(format!("ensemble.N must be >= 2, got {n}")));
    }
    let sim = Simulation::new(config)?;
    let dir = config.output.directory.as_ref().map(PathBuf::from);
    let workers = worker_count(n)?;
    let job = |s: usize| run_one(&sim, s as u64, dir.as_deref(), config.output.csv);
    let outcomes = run_streams(n, exec, workers, job)?;
    let stats = EnsembleStats::from_outcomes(n, &config.ensemble.p_list, outcomes);
    if let Some(d) = &dir {
        std::fs::create_dir_all(d)?;
        stats.write_csv(std::io::BufWriter::new(std::fs::File::create(d.join("ensemble.csv"))?))?;
    }
    Ok(stats)
}

#[cfg(feature = "parallel")]
fn run_streams<T, F>(n: usize, exec: Execution, workers: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    if !exec.is_parallel() || workers == 1 {
        return Ok((0..n).map(job).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(job).collect()))
}

#[cfg(not(feature = "parallel"))]
fn run_streams<T, F>(n: usize, _exec: Execution, _workers: usize, job: F) -> Result<Vec<T>>
where
    F: Fn(usize) -> T,
{
    Ok((0..n).map(job).collect())
}
