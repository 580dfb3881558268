use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nls-star"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("JSON on stdout")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL_SIM: &str = r#"{
  "gamma": 0.5,
  "grid": { "n_edges": 3, "l_max": 15.0, "n_points": 601 },
  "scheme": "conservative",
  "dt": 1e-3,
  "t_start": 0.0,
  "t_end": 0.2,
  "initial": { "kind": "gaussian", "amplitude": 1.0, "width": 1.0, "mass": 1.5 },
  "snapshot_every": 20,
  "seed": 3,
  "noise": 0.01
}"#;

#[test]
fn identity_suite_passes_on_the_default_grid() {
    let o = run(&["check-identities", "--n-edges", "2,3,5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let reports = stdout_json(&o);
    assert_eq!(reports.as_array().unwrap().len(), 3);
    for r in reports.as_array().unwrap() {
        assert!(r["max_defect"].as_f64().unwrap() <= 1e-6);
    }
}

#[test]
fn coarse_grid_is_a_tolerance_failure() {
    let o = run(&["check-identities", "--n-points", "201"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("tolerance failure"));
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["model-ode", "--gamma", "1"])), 2);
    assert_eq!(code(&run(&["no-such-command"])), 2);
    let missing = dir.path().join("missing.json");
    assert_eq!(
        code(&run(&["simulate", "--config", missing.to_str().unwrap()])),
        2
    );
    let unknown = write(
        dir.path(),
        "unknown.json",
        &SMALL_SIM.replace("\"seed\"", "\"sed\": 1, \"seed\""),
    );
    assert_eq!(code(&run(&["simulate", "--config", &unknown])), 2);
    let cfg = write(dir.path(), "sim.json", SMALL_SIM);
    assert_eq!(code(&run(&["simulate", "--config", &cfg, "--dt", "-1"])), 2);
}

#[test]
fn simulate_outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sim.json", SMALL_SIM);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv_a = fs::read(a.join("snapshots.csv")).unwrap();
    assert_eq!(csv_a, fs::read(b.join("snapshots.csv")).unwrap());
    let text = String::from_utf8(csv_a).unwrap();
    assert!(text.starts_with(
        "t,s,mass,energy,grad_norm,sup_norm,vertex_abs,b,lambda,theta,h_l2,h_h1,yh_l2,mod_norm\n"
    ));
    assert_eq!(text.lines().count(), 1 + 11);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("config.json")).unwrap()).unwrap();
    assert_eq!(meta["command"], "simulate");
    assert_eq!(meta["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(meta["config"]["seed"], 3);
    assert!(a.join("status.json").exists());

    let c = dir.path().join("c");
    let o = run(&[
        "simulate",
        "--config",
        &cfg,
        "--seed",
        "4",
        "--out",
        c.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert_ne!(
        fs::read(a.join("snapshots.csv")).unwrap(),
        fs::read(c.join("snapshots.csv")).unwrap()
    );
}

#[test]
fn fit_rate_recovers_an_exact_power_law() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from(
        "t,s,mass,energy,grad_norm,sup_norm,vertex_abs,b,lambda,theta,h_l2,h_h1,yh_l2,mod_norm\n",
    );
    for k in 0..60 {
        let t: f64 = -10f64.powf(-1.0 - 2.0 * k as f64 / 59.0);
        let g = t.abs().powf(-2.0 / 3.0);
        text.push_str(&format!(
            "{t:e},NaN,1,0,{g:e},1,1,NaN,NaN,NaN,NaN,NaN,NaN,NaN\n"
        ));
    }
    let csv = write(dir.path(), "snap.csv", &text);
    let o = run(&[
        "fit-rate",
        "--snapshots",
        &csv,
        "--window",
        "1e-3",
        "1e-1",
        "--expect",
        "-0.6666666666666666",
        "--tol",
        "1e-12",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let fit = stdout_json(&o);
    assert!((fit["fit"]["exponent"].as_f64().unwrap() + 2.0 / 3.0).abs() < 1e-12);
    let o = run(&[
        "fit-rate",
        "--snapshots",
        &csv,
        "--window",
        "1e-3",
        "1e-1",
        "--expect",
        "-1",
        "--tol",
        "0.02",
    ]);
    assert_eq!(code(&o), 1);
    let o = run(&[
        "fit-rate",
        "--snapshots",
        &csv,
        "--window",
        "1e-3",
        "1e-1",
        "--column",
        "nope",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn profile_and_final_data_commands() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("profile");
    let o = run(&[
        "build-profile",
        "--kappa",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = stdout_json(&o);
    assert_eq!(summary["n_profiles"], 2);
    assert!(summary["residual"]["slope"].as_f64().unwrap() >= 1.75);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(meta["profile_hash"].as_str().unwrap().len(), 64);
    assert!(fs::read_to_string(out.join("profile.csv"))
        .unwrap()
        .starts_with("y,P_"));

    let o = run(&["build-profile", "--gamma", "0", "--kappa", "2"]);
    assert_eq!(code(&o), 0);
    assert!(stdout_json(&o)["residual"]["slope"].is_null());

    let o = run(&["final-data", "--s1", "60"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let fd = stdout_json(&o);
    let b1 = fd["final_data"]["b1"].as_f64().unwrap();
    assert!((b1 * 60.0 / 2.0 - 1.0).abs() < 0.2);
    assert_eq!(code(&run(&["final-data", "--gamma", "0.5"])), 2);
}

#[test]
fn model_decompose_and_gn_commands() {
    let o = run(&["model-ode", "--s-start", "10", "--s-end", "100"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout_json(&o)["max_rel_error"].as_f64().unwrap() < 1e-8);

    let o = run(&["decompose", "--h-amplitude", "1e-3", "--seed", "5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let d = stdout_json(&o);
    assert!((d["recovered"]["lambda"].as_f64().unwrap() - 0.01).abs() < 1e-8);

    let o = run(&["gn-test", "--count", "50", "--seed", "9"]);
    assert_eq!(code(&o), 0);
    let g = stdout_json(&o);
    assert!(g["max_ratio_radial"].as_f64().unwrap() <= 1.0 + 1e-6);
    assert!((g["ground_state_ratio"].as_f64().unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn threshold_scan_zero_mass_is_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "scan.json",
        r#"{"grid": {"n_edges": 2, "l_max": 15.0, "n_points": 601}, "mass_fractions": [0.0, 0.5], "horizon": 0.5, "dt": 1e-3}"#,
    );
    let out = dir.path().join("scan");
    let o = run(&[
        "threshold-scan",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = stdout_json(&o);
    assert!(r["rows"]
        .as_array()
        .unwrap()
        .iter()
        .all(|row| row["bounded"] == true));
    assert!(fs::read_to_string(out.join("scan.csv"))
        .unwrap()
        .starts_with("mass_fraction,mass,energy,bounded"));
}
