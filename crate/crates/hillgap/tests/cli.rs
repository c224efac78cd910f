use std::f64::consts::PI;
use std::process::Command;

use serde_json::Value;

fn hillgap(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_hillgap")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn json(args: &[&str]) -> Value {
    let (code, out, err) = hillgap(args);
    assert_eq!(code, 0, "{args:?}: {err}");
    serde_json::from_str(&out).unwrap()
}

#[test]
fn bands_of_mathieu() {
    let v = json(&["bands", "--family", "mathieu", "--gamma", "1", "--range", "-1", "5"]);
    let edges: Vec<f64> = v["edges"].as_array().unwrap().iter().map(|e| e.as_f64().unwrap()).collect();
    for (e, want) in edges.iter().zip([-0.45514, -0.11025, 1.85911]) {
        assert!((e - want).abs() < 1e-5, "{edges:?}");
    }
    assert_eq!(v["bands"].as_array().unwrap().len(), 3);
}

#[test]
fn free_discriminant_value() {
    let v = json(&["discriminant", "--family", "free", "--omega", "pi", "--lambda", "0.5"]);
    let d = v["samples"][0]["d"].as_f64().unwrap();
    assert!((d - 2.0 * (PI * 0.5f64.sqrt()).cos()).abs() < 1e-9);
    assert!((d + 1.2114).abs() < 1e-4);
}

#[test]
fn floquet_reports_structure() {
    let v = json(&["floquet", "--family", "free", "--lambda", "-1,0,1"]);
    let s: Vec<&str> = v.as_array().unwrap().iter().map(|d| d["structure"].as_str().unwrap()).collect();
    assert_eq!(s[0], "hyperbolic");
    assert_eq!(s.len(), 3);
}

#[test]
fn gap_eigs_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gap.json");
    let csv = dir.path().join("scan.csv");
    let (code, _, err) = hillgap(&[
        "gap-eigs", "--family", "mathieu+well", "--pert-params", "-5,2", "--gap-index", "1",
        "--out", out.to_str().unwrap(), "--csv", csv.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["agreement"], Value::Bool(true));
    let n = v["counts"]["shooting"].as_u64().unwrap();
    assert_eq!(v["counts"]["wronskian"].as_u64(), Some(n));
    assert_eq!(v["counts"]["oracle"].as_u64(), Some(n));
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("lambda,m"));
    assert!(dir.path().join("scan_wronskian.csv").exists());
}

#[test]
fn edge_test_and_oracle() {
    let v = json(&["edge-test", "--family", "mathieu+gaussian", "--edge-index", "2"]);
    assert_eq!(v["verdict"], "no_L2_solution");
    let v = json(&["oracle", "--family", "mathieu+well", "--pert-params", "-5,2", "--gap-index", "1"]);
    assert_eq!(v["stable"], Value::Bool(true));
    assert!(v["L"].as_f64().unwrap() > 0.0);
}

#[test]
fn perturb_solve_reports() {
    let v = json(&["perturb-solve", "--family", "mathieu+exp_decay", "--lambda", "0.5", "--kind", "both"]);
    let sols = v["solutions"].as_array().unwrap();
    assert_eq!(sols.len(), 2);
    assert!(sols[0]["residual_sup"].as_f64().unwrap() < 1e-7);
    assert!(sols[0]["X"].as_f64().unwrap() > 0.0);
}

#[test]
fn exit_codes() {
    // precondition: λ inside a band is not a gap
    let (code, _, _) = hillgap(&["gap-eigs", "--family", "mathieu", "--gap", "2", "3"]);
    assert_eq!(code, 1);
    let (code, _, _) = hillgap(&["bands", "--family", "nosuch"]);
    assert_eq!(code, 1);
    let (code, _, _) = hillgap(&["bands", "--bogus"]);
    assert_eq!(code, 1);
    let (code, _, _) = hillgap(&["--help"]);
    assert_eq!(code, 0);
    let (code, _, _) = hillgap(&["verify", "thm9"]);
    assert_eq!(code, 1);
}

#[test]
fn config_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "command = \"bands\"\n[problem]\nbase = \"mathieu\"\ngama = 1.0\n").unwrap();
    let (code, _, err) = hillgap(&["bands", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("line 4"), "{err}");
    let (code, _, err) = hillgap(&["discriminant", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 1, "{err}");
}

#[test]
fn same_config_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        r#"
command = "gap-eigs"
seed = 7

[problem]
base = "mathieu"
params = [1.0]

[[problem.perturbation]]
family = "well"
params = [-5.0, 2.0]

[gap]
index = 2
"#,
    )
    .unwrap();
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_hillgap"))
            .args(["gap-eigs", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .env("HILLGAP_THREADS", threads)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out).unwrap()
    };
    let a = run("a.json", "1");
    let b = run("b.json", "4");
    assert_eq!(a, b);
}

#[test]
fn bad_thread_count_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_hillgap"))
        .args(["discriminant", "--lambda", "0"])
        .env("HILLGAP_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_suites_print_tables() {
    let (code, out, err) = hillgap(&["verify", "thm3"]);
    assert_eq!(code, 0, "{out}{err}");
    assert!(out.contains("[PASS] 6."));
    let (code, out, err) = hillgap(&["verify", "thm2", "--family", "mathieu+well"]);
    assert_eq!(code, 0, "{out}{err}");
    assert!(out.contains("2/2 passed"), "{out}");
}
