use std::path::Path;
use std::process::{Command, Output};

fn npns(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_npns"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = r#"
[grid]
nx = 8
ny = 8

[time]
T = 0.005
"#;

#[test]
fn run_writes_diagnostics_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let o = npns(&[
        "run",
        &cfg,
        "-o",
        out_dir.to_str().unwrap(),
        "--set",
        "output.snapshot_every=1000",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out_dir.join("diagnostics.csv")).unwrap();
    assert!(csv.starts_with("t,kinetic,gibbs,electric,boundary_energy,dissipation,ito_half_hs"));
    let snap = std::fs::read(out_dir.join("snap_000000_psi.bin")).unwrap();
    assert_eq!(&snap[..4], b"NPNS");
    assert_eq!(snap.len(), 28 + 8 * 64);
}

#[test]
fn print_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = npns(&["run", &cfg, "--print-config", "--seed", "9", "--dt", "1e-4"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("seed = 9") && text.contains("dt = 0.0001"));
    let again = write_config(dir.path(), &text);
    let o2 = npns(&["run", &again, "--print-config"]);
    assert_eq!(String::from_utf8(o2.stdout).unwrap(), text);
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    assert_eq!(npns(&["run", &cfg, "--set", "physics.mu=-1"]).status.code(), Some(2));
    assert_eq!(npns(&["run", &cfg, "--set", "grid.bogus=1"]).status.code(), Some(2));
    assert_eq!(npns(&["run", &cfg, "--set", "novalue"]).status.code(), Some(2));
    let missing = dir.path().join("missing.toml");
    assert_eq!(npns(&["run", missing.to_str().unwrap()]).status.code(), Some(2));
    let bad = write_config(dir.path(), "[grid\nnx = ");
    assert_eq!(npns(&["run", &bad]).status.code(), Some(2));
}

#[test]
fn oversized_step_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = npns(&["run", &cfg, "--dt", "0.05", "--t-end", "0.1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("step rejected"));
}

#[test]
fn monitor_stop_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = npns(&["run", &cfg, "--set", "monitors.thresholds.h1_c=0.5"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn ensemble_prints_moments() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("ens");
    let o = Command::new(env!("CARGO_BIN_EXE_npns"))
        .args(["ensemble", &cfg, "-n", "3", "-o", out_dir.to_str().unwrap()])
        .env("NPNS_THREADS", "2")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("functional,p,mean,stderr,n"));
    assert!(out_dir.join("ensemble.csv").exists());
    assert!(out_dir.join("traj_0002.csv").exists());
    assert_eq!(npns(&["ensemble", &cfg, "-n", "1"]).status.code(), Some(2));
}

#[test]
fn bad_thread_cap_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = Command::new(env!("CARGO_BIN_EXE_npns"))
        .args(["ensemble", &cfg, "-n", "2"])
        .env("NPNS_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_noise_passes_for_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = npns(&["verify-noise", &cfg, "--samples", "200"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
}

#[test]
fn mms_reports_second_order() {
    let o = npns(&["mms", "--grids", "16,32"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(!text.contains("FAILED"));
    assert_eq!(npns(&["mms", "--grids", "16,24"]).status.code(), Some(2));
}
