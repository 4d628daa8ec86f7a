//! Drives the `mzbw` binary end to end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const GAUSSIAN_1D: &str = r#"
[grid]
points = [512]
extent = [40.0]

[state]
family = "gaussian"
center = [0.0]
sigma = 1.0
"#;

fn mzbw(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mzbw"))
        .args(args)
        .current_dir(dir)
        .env_remove("MZBW_OUT")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Runs `command` on `config` into `dir/out_name` and returns the exit code.
fn run(dir: &Path, command: &str, config: &str, out_name: &str, extra: &[&str]) -> i32 {
    let cfg = write_config(dir, &format!("{out_name}.toml"), config);
    let out = dir.join(out_name);
    let mut args = vec![command, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = mzbw(dir, &args);
    if !o.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&o.stderr));
    }
    o.status.code().unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn num(v: &Value, pointer: &str) -> f64 {
    v.pointer(pointer).and_then(Value::as_f64).unwrap_or_else(|| panic!("missing {pointer} in {v}"))
}

#[test]
fn decompose_reports_harmonic_ground_internal_energy() {
    let tmp = TempDir::new().unwrap();
    let cfg = r#"
[grid]
points = [256]
extent = [20.0]
[state]
family = "harmonic-ground"
omega = 1.0
[potential]
kind = "harmonic"
omega = 1.0
"#;
    assert_eq!(run(tmp.path(), "decompose", cfg, "out", &[]), 0);
    let s = json(tmp.path().join("out/summary.json"));
    assert!((num(&s, "/energy/internal") - 0.25).abs() < 1e-10);
    assert!((num(&s, "/energy/potential") - 0.25).abs() < 1e-10);
    assert!((num(&s, "/energy/total") - 0.5).abs() < 1e-10);
    for f in ["rho.mzbw", "phase.mzbw", "momentum.mzbw", "q.mzbw", "q_density.mzbw", "fields.csv"] {
        assert!(tmp.path().join("out").join(f).exists(), "{f}");
    }
    let csv = fs::read_to_string(tmp.path().join("out/fields.csv")).unwrap();
    assert_eq!(csv.lines().count(), 257);
}

#[test]
fn decompose_plane_wave_has_zero_quantum_potential() {
    let tmp = TempDir::new().unwrap();
    let k = 2.0 * std::f64::consts::PI * 5.0 / 10.0;
    let cfg = format!("[grid]\npoints = [64]\nextent = [10.0]\n[state]\nfamily = \"plane-wave\"\nk = [{k}]\n");
    assert_eq!(run(tmp.path(), "decompose", &cfg, "out", &[]), 0);
    let s = json(tmp.path().join("out/summary.json"));
    assert!(num(&s, "/max_abs_q") < 1e-12);
}

#[test]
fn reloaded_state_decomposes_bit_identically() {
    let tmp = TempDir::new().unwrap();
    let evolve = format!("{GAUSSIAN_1D}[evolution]\ndt = 0.01\nsteps = 2\n");
    assert_eq!(run(tmp.path(), "evolve", &evolve, "series", &[]), 0);
    assert_eq!(run(tmp.path(), "decompose", GAUSSIAN_1D, "direct", &[]), 0);
    let reload = "[state]\nfamily = \"file\"\npath = \"series/state_00000.mzbw\"\n";
    assert_eq!(run(tmp.path(), "decompose", reload, "reloaded", &[]), 0);
    for f in ["rho.mzbw", "phase.mzbw", "momentum.mzbw", "q.mzbw", "fields.csv"] {
        let a = fs::read(tmp.path().join("direct").join(f)).unwrap();
        let b = fs::read(tmp.path().join("reloaded").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}

#[test]
fn spin_planar_state_satisfies_constraint() {
    let tmp = TempDir::new().unwrap();
    let cfg = "[grid]\npoints = [64, 64]\nextent = [16.0, 16.0]\n[state]\nfamily = \"gaussian\"\ncenter = [0.5, 0.0]\nsigma = 1.0\nboost = [0.3, 0.0]\n[spinor]\ntheta = 0.0\nphi = 0.0\n";
    assert_eq!(run(tmp.path(), "spin", cfg, "out", &[]), 0);
    let s = json(tmp.path().join("out/summary.json"));
    assert!(num(&s, "/hestenes/div_rho_s_max") < 1e-12);
    assert!(num(&s, "/hestenes/grad_rho_dot_s_max") < 1e-12);
    assert!(num(&s, "/current_consistency_max") < 1e-8);
    assert!((num(&s, "/uniform_spin/2") - 0.5).abs() < 1e-15);
    for f in ["s.mzbw", "j.mzbw", "drift.mzbw", "zbw.mzbw", "total.mzbw"] {
        assert!(tmp.path().join("out").join(f).exists(), "{f}");
    }
}

#[test]
fn spin_violation_in_3d_exits_with_verification_code() {
    let tmp = TempDir::new().unwrap();
    let cfg = "[grid]\npoints = [24, 24, 24]\nextent = [12.0, 12.0, 12.0]\n[state]\nfamily = \"gaussian\"\ncenter = [0.0, 0.0, 0.0]\nsigma = 1.0\n[spinor]\ntheta = 0.0\nphi = 0.0\n";
    assert_eq!(run(tmp.path(), "spin", cfg, "out", &[]), 3);
    let s = json(tmp.path().join("out/summary.json"));
    assert!(num(&s, "/hestenes/grad_rho_dot_s_max") > 1e-3);
    assert_eq!(s.pointer("/hestenes/satisfied"), Some(&Value::Bool(false)));
}

#[test]
fn evolve_follows_spreading_law() {
    let tmp = TempDir::new().unwrap();
    let cfg = format!("{GAUSSIAN_1D}[evolution]\ndt = 0.001\nsteps = 2000\nsnapshot_stride = 500\n");
    assert_eq!(run(tmp.path(), "evolve", &cfg, "out", &[]), 0);
    let csv = fs::read_to_string(tmp.path().join("out/observables.csv")).unwrap();
    let rows: Vec<Vec<f64>> =
        csv.lines().skip(1).map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 5);
    for r in &rows {
        let sigma = (1.0 + r[0] * r[0] / 4.0).sqrt();
        assert!((r[6] / sigma - 1.0).abs() < 1e-6, "t = {}: {}", r[0], r[6]);
        assert!((r[1] - 1.0).abs() < 1e-12);
    }
    let s = json(tmp.path().join("out/summary.json"));
    assert!(num(&s, "/max_norm_drift") < 1e-12);
    assert!(!tmp.path().join("out/residuals.csv").exists());
    assert!(tmp.path().join("out/state_00004.mzbw").exists());
}

#[test]
fn evolve_residuals_are_small_on_fine_snapshots() {
    let tmp = TempDir::new().unwrap();
    let cfg = format!("{GAUSSIAN_1D}[evolution]\ndt = 0.001\nsteps = 200\nsnapshot_stride = 10\nresiduals = true\n");
    assert_eq!(run(tmp.path(), "evolve", &cfg, "out", &[]), 0);
    let csv = fs::read_to_string(tmp.path().join("out/residuals.csv")).unwrap();
    assert_eq!(csv.lines().count() - 1, 19);
    let s = json(tmp.path().join("out/summary.json"));
    assert!(num(&s, "/max_hamilton_jacobi_residual") < 1e-3);
    assert!(num(&s, "/max_continuity_residual") < 1e-3);
}

#[test]
fn evolve_residuals_on_coarse_snapshots_exit_numerical() {
    let tmp = TempDir::new().unwrap();
    let cfg = format!("{GAUSSIAN_1D}[evolution]\ndt = 0.001\nsteps = 2000\nsnapshot_stride = 500\nresiduals = true\n");
    assert_eq!(run(tmp.path(), "evolve", &cfg, "out", &[]), 2);
}

#[test]
fn drift_trajectory_from_written_series() {
    let tmp = TempDir::new().unwrap();
    let evolve = format!("{GAUSSIAN_1D}[evolution]\ndt = 0.001\nsteps = 2000\nsnapshot_stride = 10\n");
    assert_eq!(run(tmp.path(), "evolve", &evolve, "series", &[]), 0);
    let traj = "[trajectories]\nmode = \"drift\"\nseeds = [[1.0], [-0.5], [2.0]]\nstep = 0.005\nrecord_every = 400\nseries = \"series\"\n";
    assert_eq!(run(tmp.path(), "trajectories", traj, "traj", &[]), 0);
    let csv = fs::read_to_string(tmp.path().join("traj/trajectories.csv")).unwrap();
    assert!(csv.starts_with("particle,t,x,y,z,mode,frozen\n"));
    let last = csv.lines().filter(|l| l.starts_with("0,")).last().unwrap();
    let f: Vec<&str> = last.split(',').collect();
    let (t, x): (f64, f64) = (f[1].parse().unwrap(), f[2].parse().unwrap());
    assert!((t - 2.0).abs() < 1e-12);
    assert!((x - 2f64.sqrt()).abs() < 1e-4, "{x}");
    let m = json(tmp.path().join("traj/manifest.json"));
    assert_eq!(m["frozen"], 0);
    assert_eq!(m["mode"], "drift");
}

#[test]
fn paired_total_transport_writes_internal_motion() {
    let tmp = TempDir::new().unwrap();
    let cfg = "seed = 3\n[grid]\npoints = [64, 64]\nextent = [16.0, 16.0]\n[state]\nfamily = \"gaussian\"\ncenter = [0.0, 0.0]\nsigma = 1.0\n[spinor]\ntheta = 0.0\nphi = 0.0\n[trajectories]\nmode = \"total\"\nparticles = 200\nstep = 0.05\nt_end = 2.0\nrecord_every = 10\npaired = true\n";
    assert_eq!(run(tmp.path(), "trajectories", cfg, "out", &[]), 0);
    for f in ["trajectories.csv", "drift.csv", "internal.csv", "manifest.json"] {
        assert!(tmp.path().join("out").join(f).exists(), "{f}");
    }
    // static real Gaussian: no drift, so the internal displacement is the full motion
    let internal = fs::read_to_string(tmp.path().join("out/internal.csv")).unwrap();
    assert!(internal.starts_with("particle,t,X,Y,Z\n"));
    let m = json(tmp.path().join("out/manifest.json"));
    assert_eq!(m["sampling_seed"], 3);
    assert_eq!(m.pointer("/equivariance/pass"), Some(&Value::Bool(true)));
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let tmp = TempDir::new().unwrap();
    let cfg = "[grid]\npoints = [48, 48]\nextent = [12.0, 12.0]\n[state]\nfamily = \"gaussian\"\ncenter = [0.0, 0.0]\nsigma = 1.0\nboost = [0.5, 0.0]\n[spinor]\ntheta = 0.7\nphi = 0.2\n[trajectories]\nmode = \"total\"\nparticles = 300\nstep = 0.02\nt_end = 1.0\n";
    assert_eq!(run(tmp.path(), "trajectories", cfg, "one", &["--threads", "1", "--seed", "8"]), 0);
    assert_eq!(run(tmp.path(), "trajectories", cfg, "four", &["--threads", "4", "--seed", "8"]), 0);
    for f in ["trajectories.csv", "manifest.json"] {
        assert_eq!(fs::read(tmp.path().join("one").join(f)).unwrap(), fs::read(tmp.path().join("four").join(f)).unwrap());
    }
}

#[test]
fn verify_passes_on_both_backends() {
    let tmp = TempDir::new().unwrap();
    for backend in ["spectral", "fd2"] {
        let out = tmp.path().join(backend);
        let o = mzbw(tmp.path(), &["verify", "--backend", backend, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let r = json(out.join("report.json"));
        assert_eq!(r["pass"], true);
        assert_eq!(r["tolerance_table"], "mzbw-tolerances-1");
        let e = &r["entries"][0];
        for key in ["id", "max_abs_error", "tolerance", "pass"] {
            assert!(e.get(key).is_some(), "{key}");
        }
    }
}

#[test]
fn verify_fault_flags_only_the_quantum_potential_identity() {
    let tmp = TempDir::new().unwrap();
    let cfg = "[verify]\nfault = \"flip-quantum-potential-sign\"\n";
    assert_eq!(run(tmp.path(), "verify", cfg, "out", &[]), 3);
    let r = json(tmp.path().join("out/report.json"));
    let failing: Vec<&Value> = r["entries"].as_array().unwrap().iter().filter(|e| e["pass"] == false).collect();
    assert!(!failing.is_empty());
    assert!(failing.iter().all(|e| e["id"] == "quantum-potential-forms"));
}

#[test]
fn environment_overrides_out_flag() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", GAUSSIAN_1D);
    let env_out = tmp.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_mzbw"))
        .args(["decompose", "--config", cfg.to_str().unwrap(), "--out", "from-flag"])
        .current_dir(tmp.path())
        .env("MZBW_OUT", &env_out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(env_out.join("summary.json").exists());
    assert!(!tmp.path().join("from-flag").exists());
}

#[test]
fn usage_and_config_errors_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(mzbw(tmp.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(mzbw(tmp.path(), &["decompose"]).status.code(), Some(1));
    assert_eq!(mzbw(tmp.path(), &["decompose", "--config", "missing.toml"]).status.code(), Some(1));
    assert_eq!(mzbw(tmp.path(), &["verify", "--backend", "fd4"]).status.code(), Some(1));
    let unknown = format!("{GAUSSIAN_1D}colour = \"red\"\n");
    assert_eq!(run(tmp.path(), "decompose", &unknown, "a", &[]), 1);
    let missing_file = "[state]\nfamily = \"file\"\npath = \"nowhere.mzbw\"\n";
    assert_eq!(run(tmp.path(), "decompose", missing_file, "b", &[]), 1);
    // rejected before any output is produced
    assert!(!tmp.path().join("a").exists() && !tmp.path().join("b").exists());
}

#[test]
fn non_finite_input_exits_with_two() {
    let tmp = TempDir::new().unwrap();
    let evolve = format!("{GAUSSIAN_1D}[evolution]\ndt = 0.01\nsteps = 1\n");
    assert_eq!(run(tmp.path(), "evolve", &evolve, "series", &[]), 0);
    let path = tmp.path().join("series/state_00000.mzbw");
    let mut bytes = fs::read(&path).unwrap();
    bytes[56..64].copy_from_slice(&f64::NAN.to_le_bytes());
    fs::write(tmp.path().join("nan.mzbw"), bytes).unwrap();
    let cfg = "[state]\nfamily = \"file\"\npath = \"nan.mzbw\"\n";
    assert_eq!(run(tmp.path(), "decompose", cfg, "out", &[]), 2);
}
