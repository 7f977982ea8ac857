use std::path::Path;
use std::process::{Command, Output};

fn sc_amp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sc-amp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, json).unwrap();
    path.display().to_string()
}

const SMALL: &str = r#"{"l": 8, "rho_inv": 2, "l0": 2, "n": 40, "trials": 3, "t_max": 15}"#;

#[test]
fn validate_on_the_default_config_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = sc_amp(dir.path(), &["validate"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.lines().count() >= 10);
    assert!(stdout.lines().all(|l| l.starts_with("PASS ")), "{stdout}");
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(sc_amp(dir.path(), &["--config", "missing.json", "se"]).status.code(), Some(2));
    let bad = write_config(dir.path(), "bad.json", r#"{"trials": 0}"#);
    assert_eq!(sc_amp(dir.path(), &["--config", &bad, "se"]).status.code(), Some(2));
    let typo = write_config(dir.path(), "typo.json", r#"{"sigmaa": 0.1}"#);
    assert_eq!(sc_amp(dir.path(), &["--config", &typo, "amp"]).status.code(), Some(2));
    // A noisy config cannot produce a noiseless phase diagram.
    let out = sc_amp(dir.path(), &["phase", "--eps", "0.1", "--deltas", "0.1:0.2:0.05"]);
    assert_eq!(out.status.code(), Some(2));
    let out = sc_amp(dir.path(), &["uncoupled", "--deltas", "0.3:0.1:0.1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn phase_writes_one_row_per_delta_and_trial() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "phase.json",
        r#"{"sigma": 0, "l": 6, "rho_inv": 2, "l0": 3, "n": 40, "trials": 2, "t_max": 60, "stop_tol": 1e-9}"#,
    );
    let out = sc_amp(
        dir.path(),
        &["--config", &cfg, "--out", "ph", "phase", "--eps", "0.1", "--deltas", "0.05:0.3:0.025"],
    );
    assert!(matches!(out.status.code(), Some(0)), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("ph/phase.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "eps,delta_nominal,delta,m,trial,final_mse,iterations,success");
    // With N = 40 the eleven grid values map to eleven distinct M.
    assert_eq!(rows.len() - 1, 11 * 2);
    assert!(dir.path().join("ph/phase_fit.csv").exists());
    assert!(dir.path().join("ph/phase.svg").exists());
    assert!(dir.path().join("ph/manifest.json").exists());
}

#[test]
fn identical_runs_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.json", SMALL);
    // Same relative output path from separate working directories, so the
    // recorded config is identical too.
    for run in ["a", "b", "c"] {
        let cwd = dir.path().join(run);
        std::fs::create_dir(&cwd).unwrap();
        let seed = if run == "c" { "6" } else { "5" };
        for cmd in ["amp", "agreement"] {
            let o = sc_amp(&cwd, &["--config", &cfg, "--seed", seed, "--out", "o", cmd]);
            assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        }
    }
    let read = |run: &str, file: &str| std::fs::read(dir.path().join(run).join("o").join(file)).unwrap();
    for file in ["amp.csv", "amp_summary.csv", "agreement.csv", "agreement.svg", "manifest.json"] {
        let a = read("a", file);
        assert!(!a.is_empty());
        assert_eq!(a, read("b", file), "{file} differs");
    }
    assert_ne!(read("a", "amp.csv"), read("c", "amp.csv"));
}

#[test]
fn manifest_records_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.json", SMALL);
    let o = sc_amp(dir.path(), &["--config", &cfg, "--out", "se", "se"]);
    assert_eq!(o.status.code(), Some(0));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("se/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "se");
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["outputs"][0], "se.csv");
    assert!(dir.path().join("se/se.csv").exists());
}

#[test]
fn profile_and_uncoupled_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.json", SMALL);
    let o = sc_amp(dir.path(), &["--config", &cfg, "--out", "p", "profile", "--overlay"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let profile = std::fs::read_to_string(dir.path().join("p/profile.csv")).unwrap();
    assert!(profile.starts_with("t,a,phi,phi_hat\n"));
    let o = sc_amp(dir.path(), &["--config", &cfg, "--out", "u", "uncoupled", "--deltas", "0.2:0.4:0.1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("u/uncoupled.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn config_subcommand_prints_the_effective_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = sc_amp(dir.path(), &["--seed", "99", "config"]);
    assert_eq!(o.status.code(), Some(0));
    let cfg = sc_amp_harness::ExperimentConfig::from_json(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(cfg.master_seed, 99);
}
