use npns::config::SimConfig;
use npns::ensemble::{run_ensemble_with, run_simulation, Simulation, StopReason};
use npns::par::Execution;
use npns::snapshot::{FieldKind, Snapshot};

const SMALL: &str = r#"
seed = 5

[grid]
nx = 12
ny = 10

[time]
T = 0.004

[ensemble]
N = 4
"#;

fn small() -> SimConfig {
    SimConfig::from_toml(SMALL).unwrap()
}

#[test]
fn config_round_trips_through_canonical_toml() {
    let cfg = small();
    let text = cfg.to_toml();
    let back = SimConfig::from_toml(&text).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.to_toml(), text);
}

#[test]
fn overrides_win_over_file_keys() {
    let o = vec![("seed".to_string(), "17".to_string()), ("grid.nx".to_string(), "16".to_string())];
    let cfg = SimConfig::from_toml_with_overrides(SMALL, &o).unwrap();
    assert_eq!(cfg.seed, 17);
    assert_eq!(cfg.build_grid().unwrap().nx(), 16);
    assert_eq!(cfg.build_grid().unwrap().ny(), 10);
}

#[test]
fn trajectories_are_reproducible_per_stream() {
    let sim = Simulation::new(&small()).unwrap();
    let a = sim.run(1, None).unwrap();
    let b = sim.run(1, None).unwrap();
    let c = sim.run(2, None).unwrap();
    assert_eq!(a.records, b.records);
    assert_ne!(a.records, c.records);
    assert_eq!(a.stop, StopReason::Completed);
    assert_eq!(a.records.len(), sim.n_steps() + 1);
}

#[test]
fn mass_is_conserved_along_a_noisy_run() {
    let out = Simulation::new(&small()).unwrap().run(0, None).unwrap();
    let m0 = &out.records[0].masses;
    for r in &out.records {
        for (m, m0) in r.masses.iter().zip(m0) {
            assert!((m - m0).abs() <= 1e-12 * m0.abs());
        }
        assert!(r.min_c.iter().all(|&c| c >= 0.0));
    }
}

#[test]
fn run_writes_csv_and_loadable_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.output.directory = Some(dir.path().to_string_lossy().into_owned());
    cfg.output.snapshot_every = 1000;
    let out = run_simulation(&cfg).unwrap();
    let n = out.records.len() - 1;

    let csv = std::fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
    assert_eq!(csv.lines().count(), out.records.len() + 1);

    let last = |name: &str| Snapshot::load(&dir.path().join(format!("snap_{n:06}_{name}.bin"))).unwrap();
    let g = *out.final_state.ions.grid();
    let psi = last("psi");
    assert_eq!(psi.kind, FieldKind::Potential);
    assert_eq!(psi.to_scalar(g).unwrap().values(), out.final_state.electro.psi.values());
    let u = last("u").to_velocity(g).unwrap();
    assert_eq!(u.ux, out.final_state.fluid.u.ux);
    let c2 = last("c2");
    assert_eq!(c2.kind, FieldKind::Concentration(1));
    assert!(dir.path().join("snap_000000_rho.bin").exists());
}

#[test]
fn ensemble_statistics_do_not_depend_on_execution() {
    let cfg = small();
    let seq = run_ensemble_with(&cfg, Execution::Sequential).unwrap();
    let par = run_ensemble_with(&cfg, Execution::Parallel).unwrap();
    assert_eq!(seq, par);
    assert_eq!(seq.trajectories.len(), 4);
    assert!(seq.failures.is_empty());
    let mut text = Vec::new();
    seq.write_csv(&mut text).unwrap();
    assert!(String::from_utf8(text).unwrap().starts_with("functional,p,mean,stderr,n"));
}

#[test]
fn noise_off_run_has_no_noise_terms() {
    let o = vec![("noise.enabled".to_string(), "false".to_string())];
    let cfg = SimConfig::from_toml_with_overrides(SMALL, &o).unwrap();
    let out = Simulation::new(&cfg).unwrap().run(0, None).unwrap();
    assert!(out.records.iter().all(|r| r.noise_work == 0.0 && r.ito_half_hs == 0.0));
    assert_eq!(out.noise_work_total(), 0.0);
}
