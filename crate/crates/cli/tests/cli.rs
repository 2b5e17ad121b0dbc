use std::path::Path;
use std::process::{Command, Output};

use netbridge_cli::commands::{parse_input, Input};
use netbridge_cli::config::Config;
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netbridge"))
        .args(args)
        .env("NETBRIDGE_THREADS", "1")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn stdout_value(out: &Output, key: &str) -> f64 {
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text
        .lines()
        .find(|l| l.starts_with(key))
        .unwrap_or_else(|| panic!("no `{key}` in {text}"));
    line.rsplit(' ').next().unwrap().parse().unwrap()
}

fn error_doc(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap()
}

const PUSHFORWARD: &str = r#"{
    "kernels": {"only": [[0.7, 0.3], [0.4, 0.6]]},
    "initials": [[0.9, 0.1]],
    "marginals": {"mu0": [0.9, 0.1], "muN": [0.601, 0.399]},
    "horizon": 2
}"#;

#[test]
fn verify_on_the_bundled_instance() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["verify", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    assert!(stdout_value(&out, "max deviation") < 1e-6);
}

#[test]
fn prior_pushforward_has_zero_objective() {
    // [0.9, 0.1] A^2 = [0.601, 0.399]
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.json", PUSHFORWARD);
    let out = run(&["single", "--config", &cfg, "--out-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout_value(&out, "objective").abs() < 1e-9);
    let flows = std::fs::read_to_string(dir.path().join("flows.csv")).unwrap();
    assert!(flows.starts_with("t,k,vertex,label,mass\n0,0,0,0,"));
    assert_eq!(flows.lines().count(), 1 + 3 * 2);
}

#[test]
fn manifest_reparses_to_the_same_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.json", PUSHFORWARD);
    let out_dir = dir.path().join("out");
    assert!(run(&["single", "--config", &cfg, "--tol", "1e-11", "--out-dir", out_dir.to_str().unwrap()])
        .status
        .success());
    let manifest = std::fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    let Input::Manifest(m) = parse_input(&manifest).unwrap() else {
        panic!("manifest not recognised");
    };
    assert_eq!(m.config, Config::from_json(PUSHFORWARD).unwrap());
    assert_eq!(m.options.tol, 1e-11);
    assert_eq!(m.subcommand, "single");
    assert!(m.outputs.contains(&"flows.json".to_string()));

    let again = dir.path().join("again");
    let man = out_dir.join("manifest.json");
    assert!(run(&["single", "--config", man.to_str().unwrap(), "--out-dir", again.to_str().unwrap()])
        .status
        .success());
    for f in ["flows.json", "flows.csv", "kernels.json"] {
        assert_eq!(
            std::fs::read(out_dir.join(f)).unwrap(),
            std::fs::read(again.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn exit_codes_and_error_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();

    let broken = write(dir.path(), "broken.json", "{ not json");
    let out = run(&["single", "--config", &broken, "--out-dir", d]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_doc(&out)["error"], "invalid_input");

    let infeasible = write(
        dir.path(),
        "inf.json",
        r#"{"kernels": {"x": [[1.0, 0.0], [0.0, 1.0]]}, "marginals": {"mu0": [1.0, 0.0], "muN": [0.0, 1.0]}, "horizon": 2}"#,
    );
    let out = run(&["single", "--config", &infeasible, "--out-dir", d]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_doc(&out)["error"], "infeasible");

    let slow = write(
        dir.path(),
        "slow.json",
        r#"{"kernels": {"x": [[0.5, 0.5], [0.01, 0.99]]}, "marginals": {"mu0": [0.99, 0.01], "muN": [0.01, 0.99]}, "horizon": 1}"#,
    );
    let out = run(&["single", "--config", &slow, "--max-iter", "2", "--tol", "1e-15", "--out-dir", d]);
    assert_eq!(out.status.code(), Some(3));
    let doc = error_doc(&out);
    assert_eq!(doc["error"], "not_converged");
    assert_eq!(doc["iterations"], 2);

    let out = run(&["multi", "--config", &slow, "--out-dir", d]);
    assert_eq!(out.status.code(), Some(2), "initials are required");

    let out = run(&["single", "--out-dir", d]);
    assert_eq!(out.status.code(), Some(2), "config is required");
}

#[test]
fn bad_thread_count_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_netbridge"))
        .args(["verify", "--out-dir", std::env::temp_dir().join("nb-threads").to_str().unwrap()])
        .env("NETBRIDGE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

const PARKING: &str = r#"{
    "edges": [["a", "a"], ["a", "b"], ["b", "a"], ["b", "b"]],
    "kernels": {"x": [[0.6, 0.3], [0.2, 0.7]]},
    "creation": [0.05, 0.05],
    "marginals": {"mu0": {"a": 0.5, "b": 0.5}, "muN": [0.3, 0.4]},
    "horizon": 3
}"#;

#[test]
fn unbalanced_outputs_and_strict_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "u.json", PARKING);
    let out_dir = dir.path().join("u");
    let out = run(&["unbalanced", "--config", &cfg, "--out-dir", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout_value(&out, "max row-sum defect") < 1e-9);
    let parking = std::fs::read_to_string(out_dir.join("parking.csv")).unwrap();
    let rows: Vec<Vec<f64>> = parking
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    assert!((rows[0][1] - 0.0).abs() < 1e-15);
    assert!((rows[3][1] - 0.3).abs() < 1e-8);
    for t in 0..3 {
        let net = rows[t][1] - rows[t + 1][1];
        assert!((net - (rows[t][2] - rows[t][3])).abs() < 1e-10);
    }
    let kernels: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("kernels.json")).unwrap()).unwrap();
    assert_eq!(kernels["labels"], serde_json::json!(["a", "b", "parking"]));

    let strict = dir.path().join("s");
    let out = run(&["unbalanced", "--strict-eq23", "--config", &cfg, "--out-dir", strict.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(stdout_value(&out, "printed creation-row formula: max row-sum defect") > 1e-6);
}

#[test]
fn multi_and_sample_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "m.json",
        r#"{
            "kernels": {"cars": [[0.8, 0.2], [0.3, 0.7]], "trucks": [[0.5, 0.5], [0.5, 0.5]]},
            "initials": {"cars": [0.5, 0.5], "trucks": [0.9, 0.1]},
            "weights": {"cars": 0.6, "trucks": 0.4},
            "marginals": {"mu0": [0.6, 0.4], "muN": [0.3, 0.7]},
            "horizon": 3
        }"#,
    );
    let m = dir.path().join("m");
    let out = run(&["multi", "--config", &cfg, "--out-dir", m.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let masses = stdout_value(&out, "mass cars") + stdout_value(&out, "mass trucks");
    assert!((masses - 1.0).abs() < 1e-12);

    let s = dir.path().join("s");
    let out = run(&["sample", "--config", &cfg, "--population", "500", "--seed", "7", "--out-dir", s.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(stdout_value(&out, "rate") >= 0.0);
    let samples = std::fs::read_to_string(s.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 1 + 500 * 4);
}
