//! `npns`: run trajectories, ensembles and verification suites from a TOML file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use npns::config::SimConfig;
use npns::ensemble::{run_ensemble, run_simulation, StopReason};
use npns::mms::{run_suite, MmsProblem, DEFAULT_GRIDS};
use npns::noise::{verify_assumptions, NoiseModel};
use npns::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_MONITOR: u8 = 4;

#[derive(Parser)]
#[command(name = "npns", version, about = "Stochastic Nernst-Planck-Navier-Stokes simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single trajectory (stream 0).
    Run(RunArgs),
    /// Run `ensemble.N` independent trajectories and print moment statistics.
    Ensemble(EnsembleArgs),
    /// Sample the noise growth and Lipschitz ratios against their closed-form bounds.
    VerifyNoise(VerifyArgs),
    /// Manufactured-solution convergence suite.
    Mms(MmsArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file.
    config: PathBuf,
    /// Override a configuration key, e.g. `--set time.T=0.5` or `--set physics.species.0.a=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
    /// Shorthand for `--set time.T=T`.
    #[arg(long = "t-end", value_name = "T")]
    t_end: Option<f64>,
    /// Shorthand for `--set time.dt=DT`; `auto` is accepted.
    #[arg(long)]
    dt: Option<String>,
    /// Output directory for CSV files and snapshots.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Print the effective configuration as canonical TOML and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EnsembleArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Shorthand for `--set ensemble.N=N`.
    #[arg(long, short = 'n')]
    trajectories: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Number of random field pairs.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
}

#[derive(Args)]
struct MmsArgs {
    /// Comma-separated grid sizes, each double the previous.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_GRIDS)]
    grids: Vec<usize>,
}

/// Failure with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        // Anything raised inside the time loop is a solver failure.
        let code = match &e {
            Error::AtStep { .. } => EXIT_SOLVER,
            Error::Config(_) | Error::Compatibility { .. } | Error::Domain(_) => EXIT_CONFIG,
            _ => EXIT_SOLVER,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_failure(message: String) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message,
    }
}

impl ConfigArgs {
    fn load(&self, extra: &[(String, String)]) -> Result<SimConfig, Failure> {
        let text = std::fs::read_to_string(&self.config)
            .map_err(|e| config_failure(format!("cannot read {}: {e}", self.config.display())))?;
        let mut overrides = Vec::new();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| config_failure(format!("--set expects KEY=VALUE, got {s:?}")))?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        if let Some(seed) = self.seed {
            overrides.push(("seed".into(), seed.to_string()));
        }
        if let Some(t) = self.t_end {
            overrides.push(("time.T".into(), t.to_string()));
        }
        if let Some(dt) = &self.dt {
            let v = if dt == "auto" { "\"auto\"".to_string() } else { dt.clone() };
            overrides.push(("time.dt".into(), v));
        }
        overrides.extend_from_slice(extra);
        let mut cfg = SimConfig::from_toml_with_overrides(&text, &overrides)?;
        if let Some(out) = &self.out {
            cfg.output.directory = Some(out.to_string_lossy().into_owned());
        }
        Ok(cfg)
    }

    /// Prints the configuration and reports whether the command should stop here.
    fn maybe_print(&self, cfg: &SimConfig) -> bool {
        if self.print_config {
            print!("{}", cfg.to_toml());
        }
        self.print_config
    }
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let cfg = args.config.load(&[])?;
    if args.config.maybe_print(&cfg) {
        return Ok(());
    }
    let out = run_simulation(&cfg)?;
    let last = out.records.last().expect("at least the initial record");
    println!("steps      {}", out.records.len() - 1);
    println!("dt         {:e}", out.dt);
    println!("t_final    {}", last.t);
    println!("free_energy {:e}", last.free_energy(cfg.physics.kappa));
    println!("dissipation {:e}", last.dissipation);
    println!("min_c      {:?}", last.min_c);
    println!("energy_residual {:e}", out.energy_residual);
    if let Some(d) = &cfg.output.directory {
        println!("output     {}", Path::new(d).display());
    }
    match out.stop {
        StopReason::Completed => Ok(()),
        StopReason::Monitor { step } => Err(Failure {
            code: EXIT_MONITOR,
            message: format!("monitor stop at step {step}: {:?}", out.hits),
        }),
    }
}

fn ensemble(args: &EnsembleArgs) -> Result<(), Failure> {
    let extra: Vec<(String, String)> = args
        .trajectories
        .map(|n| vec![("ensemble.N".to_string(), n.to_string())])
        .unwrap_or_default();
    let cfg = args.config.load(&extra)?;
    if args.config.maybe_print(&cfg) {
        return Ok(());
    }
    let stats = run_ensemble(&cfg)?;
    stats.write_csv(std::io::stdout().lock())?;
    eprintln!(
        "{} trajectories, {} failed, {} monitor stops; energy residual {:e} +- {:e}",
        stats.n_requested,
        stats.failures.len(),
        stats.monitor_stops(),
        stats.energy_residual.mean,
        stats.energy_residual.stderr
    );
    if let Some(f) = stats.failures.first() {
        return Err(Failure {
            code: EXIT_SOLVER,
            message: format!("trajectory {} failed: {}", f.stream, f.message),
        });
    }
    if stats.monitor_stops() > 0 {
        return Err(Failure {
            code: EXIT_MONITOR,
            message: format!("{} trajectories stopped by a monitor", stats.monitor_stops()),
        });
    }
    Ok(())
}

fn verify_noise(args: &VerifyArgs) -> Result<(), Failure> {
    let cfg = args.config.load(&[])?;
    if args.config.maybe_print(&cfg) {
        return Ok(());
    }
    let model = NoiseModel::new(cfg.build_grid()?, cfg.noise.spec())?;
    let r = verify_assumptions(&model, args.samples, cfg.seed)?;
    println!("constant  sampled        bound");
    for (name, hat, ell) in [
        ("ell1", r.ell1_hat, r.ell1),
        ("ell2", r.ell2_hat, r.ell2),
        ("ell3", r.ell3_hat, r.ell3),
        ("ell4", r.ell4_hat, r.ell4),
    ] {
        println!("{name:<9} {hat:<14.6e} {ell:.6e}");
    }
    println!("samples   {}", r.n_samples);
    if r.pass {
        println!("PASS");
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_SOLVER,
            message: "sampled ratio exceeds its bound".into(),
        })
    }
}

fn mms(args: &MmsArgs) -> Result<(), Failure> {
    if args.grids.len() < 2 {
        return Err(config_failure("--grids needs at least two sizes".into()));
    }
    if args.grids.windows(2).any(|w| w[1] != 2 * w[0]) {
        return Err(config_failure("--grids must double from one size to the next".into()));
    }
    let report = run_suite(&MmsProblem::ALL, &args.grids)?;
    print!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_SOLVER,
            message: "convergence order below 2".into(),
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Ensemble(a) => ensemble(a),
        Command::VerifyNoise(a) => verify_noise(a),
        Command::Mms(a) => mms(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("npns: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
