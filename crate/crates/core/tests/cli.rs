use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::{tempdir, TempDir};
use vlasov_darwin::io::{read_ensemble_csv, read_trace_csv};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn rvd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rvd"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &TempDir, name: &str, value: &Value) -> String {
    let path = dir.path().join(name);
    std::fs::write(&path, value.to_string()).unwrap();
    path.to_str().unwrap().to_owned()
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn schema_valid(name: &str, instance: &Value) -> bool {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("schemas/{name}.schema.json"));
    jsonschema::validator_for(&json_file(&path))
        .unwrap()
        .is_valid(instance)
}

fn small_spec(seed: u64) -> Value {
    json!({ "family": "gaussian-ball", "n": 24, "radius": 1.0, "seed": seed })
}

#[test]
fn help_succeeds_and_bad_usage_is_config_error() {
    assert_eq!(code(&rvd(&["--help"])), 0);
    assert_eq!(code(&rvd(&[])), 2);
    assert_eq!(code(&rvd(&["frobnicate"])), 2);
    assert_eq!(code(&rvd(&["simulate"])), 2);
}

#[test]
fn gen_is_reproducible_and_seed_overrides_config() {
    let tmp = tempdir().unwrap();
    let cfg = write_config(&tmp, "gen.json", &small_spec(1));
    let run = |sub: &str, extra: &[&str]| {
        let out = tmp.path().join(sub);
        let mut args = vec!["gen", "--config", &cfg, "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        assert_eq!(code(&rvd(&args)), 0);
        std::fs::read_to_string(out.join("ensemble.csv")).unwrap()
    };
    let (a, b) = (run("a", &[]), run("b", &[]));
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 25);
    let c = run("c", &["--seed", "2"]);
    assert_ne!(a, c);
    let direct = write_config(&tmp, "gen2.json", &small_spec(2));
    let out = tmp.path().join("d");
    assert_eq!(
        code(&rvd(&[
            "gen",
            "--config",
            &direct,
            "--out",
            out.to_str().unwrap()
        ])),
        0
    );
    assert_eq!(
        std::fs::read_to_string(out.join("ensemble.csv")).unwrap(),
        c
    );
}

#[test]
fn simulate_matches_golden_run() {
    let tmp = tempdir().unwrap();
    let cfg = fixtures().join("golden_simulate.json");
    let out = tmp.path().join("traj");
    let status = rvd(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&status), 0, "{}", stderr(&status));
    let meta = json_file(&out.join("meta.json"));
    assert_eq!(meta, json_file(&fixtures().join("golden_meta.json")));
    assert!(schema_valid("trajectory_meta", &meta));
    let fin = read_ensemble_csv(&out.join("t_2.csv"), 0.5).unwrap();
    let golden = read_ensemble_csv(&fixtures().join("golden_final.csv"), 0.5).unwrap();
    for (p, q) in fin.particles().iter().zip(golden.particles()) {
        assert!(p.phase().sub(&q.phase()).norm_sq().sqrt() <= 1e-12);
        assert_eq!(p.w, q.w);
    }
}

#[test]
fn thread_count_does_not_change_output() {
    let tmp = tempdir().unwrap();
    let cfg = fixtures().join("golden_simulate.json");
    let files = |threads: &str| {
        let out = tmp.path().join(format!("t{threads}"));
        let args = [
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--threads",
            threads,
        ];
        assert_eq!(code(&rvd(&args)), 0);
        (0..3)
            .map(|k| std::fs::read(out.join(format!("t_{k}.csv"))).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(files("1"), files("4"));
}

#[test]
fn zero_end_time_writes_only_the_initial_snapshot() {
    let tmp = tempdir().unwrap();
    let cfg = write_config(
        &tmp,
        "sim.json",
        &json!({ "initial": small_spec(3), "dt": 0.1, "t_end": 0.0, "eps": 0.2 }),
    );
    let out = tmp.path().join("traj");
    assert_eq!(
        code(&rvd(&[
            "simulate",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap()
        ])),
        0
    );
    let mut names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, vec!["meta.json", "t_0.csv"]);
}

#[test]
fn missing_input_is_io_error_naming_the_path() {
    let tmp = tempdir().unwrap();
    let cfg = write_config(
        &tmp,
        "sim.json",
        &json!({ "input": "nowhere.csv", "dt": 0.1, "t_end": 0.2, "eps": 0.2 }),
    );
    let out = rvd(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("nowhere.csv"), "{}", stderr(&out));
    let missing = tmp.path().join("absent.json");
    assert_eq!(
        code(&rvd(&["simulate", "--config", missing.to_str().unwrap()])),
        4
    );
}

#[test]
fn invalid_config_is_exit_two() {
    let tmp = tempdir().unwrap();
    for bad in [
        json!({ "initial": small_spec(1), "dt": 0.1, "t_end": 0.2, "eps": 0.2, "bogus": 1 }),
        json!({ "initial": small_spec(1), "dt": 0.3, "t_end": 1.0, "eps": 0.2 }),
        json!({ "initial": small_spec(1), "dt": 0.1, "t_end": 0.2, "eps": 0.0 }),
        json!({ "dt": 0.1, "t_end": 0.2, "eps": 0.2 }),
    ] {
        let cfg = write_config(&tmp, "bad.json", &bad);
        let out = rvd(&[
            "simulate",
            "--config",
            &cfg,
            "--out",
            tmp.path().to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 2, "{bad}: {}", stderr(&out));
    }
    std::fs::write(tmp.path().join("broken.json"), "{ not json").unwrap();
    let broken = tmp.path().join("broken.json");
    assert_eq!(
        code(&rvd(&["fields", "--config", broken.to_str().unwrap()])),
        2
    );
}

#[test]
fn field_non_convergence_is_exit_three() {
    let tmp = tempdir().unwrap();
    let cfg = write_config(
        &tmp,
        "fields.json",
        &json!({ "initial": small_spec(1), "eps": 0.05, "tol": 1e-14, "max_iter": 1 }),
    );
    let out = rvd(&[
        "fields",
        "--config",
        &cfg,
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    let sim = write_config(
        &tmp,
        "sim.json",
        &json!({ "initial": small_spec(1), "dt": 0.1, "t_end": 0.2, "eps": 0.05, "fp_max_iter": 1 }),
    );
    let out = rvd(&[
        "simulate",
        "--config",
        &sim,
        "--out",
        tmp.path().join("s").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn fields_writes_potential_with_valid_sidecar() {
    let tmp = tempdir().unwrap();
    let cfg = write_config(
        &tmp,
        "fields.json",
        &json!({ "initial": small_spec(1), "eps": 0.2, "tol": 1e-12, "max_iter": 500, "enforce_bound": true }),
    );
    let out = tmp.path().join("f");
    assert_eq!(
        code(&rvd(&[
            "fields",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap()
        ])),
        0
    );
    assert!(schema_valid(
        "potential_meta",
        &json_file(&out.join("potential.json"))
    ));
    let text = std::fs::read_to_string(out.join("potential.csv")).unwrap();
    assert_eq!(text.lines().count(), 25);
}

#[test]
fn w2_matches_exhaustive_oracle() {
    let (a, b) = (fixtures().join("pair_a.csv"), fixtures().join("pair_b.csv"));
    let tmp = tempdir().unwrap();
    let out = rvd(&[
        "w2",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    let expected = json_file(&fixtures().join("pair_expected.json"));
    let cost = summary["cost"].as_f64().unwrap();
    assert!((cost - expected["cost"].as_f64().unwrap()).abs() <= 1e-14);
    assert!(schema_valid(
        "plan_summary",
        &json_file(&tmp.path().join("plan.json"))
    ));
    let sigma: Vec<u64> = std::fs::read_to_string(tmp.path().join("plan.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    let want: Vec<u64> = expected["assignment"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(sigma, want);
}

#[test]
fn w2_identical_files_and_size_mismatch() {
    let a = fixtures().join("pair_a.csv");
    let out = rvd(&["w2", a.to_str().unwrap(), a.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["cost"], json!(0.0));
    let big = fixtures().join("golden_final.csv");
    assert_eq!(
        code(&rvd(&["w2", a.to_str().unwrap(), big.to_str().unwrap()])),
        2
    );
    let tmp = tempdir().unwrap();
    let cfg = write_config(
        &tmp,
        "w2.json",
        &json!({ "a": a.to_str().unwrap(), "b": a.to_str().unwrap() }),
    );
    assert_eq!(code(&rvd(&["w2", "--config", &cfg])), 0);
}

fn uniqueness(tmp: &TempDir, perturbation: Value, extra: Value) -> (Output, PathBuf) {
    let mut cfg = json!({
        "initial": small_spec(5),
        "dt": 0.05,
        "t_end": 0.2,
        "eps": 0.3,
        "perturbation": perturbation,
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let path = write_config(tmp, "u.json", &cfg);
    let out = tmp.path().join("u");
    (
        rvd(&[
            "uniqueness",
            "--config",
            &path,
            "--out",
            out.to_str().unwrap(),
        ]),
        out,
    )
}

#[test]
fn zero_perturbation_trace_is_all_zero() {
    let tmp = tempdir().unwrap();
    let (status, out) = uniqueness(&tmp, json!({ "kind": "none" }), json!({}));
    assert_eq!(code(&status), 0, "{}", stderr(&status));
    let rows = read_trace_csv(&out.join("trace.csv")).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows
        .iter()
        .all(|r| r.q == 0.0 && r.w2 == 0.0 && r.regime_valid));
    assert!(schema_valid(
        "trace_meta",
        &json_file(&out.join("trace.json"))
    ));
}

#[test]
fn regime_violation_is_flag_not_failure() {
    let tmp = tempdir().unwrap();
    let (status, out) = uniqueness(&tmp, json!({ "kind": "jitter", "delta": 0.5 }), json!({}));
    assert_eq!(code(&status), 0, "{}", stderr(&status));
    let rows = read_trace_csv(&out.join("trace.csv")).unwrap();
    assert!(rows.iter().all(|r| !r.regime_valid));
}

#[test]
fn dt_halving_writes_three_row_order_table() {
    let tmp = tempdir().unwrap();
    let (status, out) = uniqueness(
        &tmp,
        json!({ "kind": "dt-halving" }),
        json!({ "levels": 3 }),
    );
    assert_eq!(code(&status), 0, "{}", stderr(&status));
    let table = json_file(&out.join("order_table.json"));
    assert!(schema_valid("order_table", &table));
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows[1]["ratio"].as_f64().unwrap() >= 8.0, "{table}");
}

#[test]
fn verify_identity_and_unknown_suite() {
    let tmp = tempdir().unwrap();
    let out = rvd(&["verify", "identity", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json_file(&tmp.path().join("verify_identity.json"));
    assert_eq!(report["pass"], json!(true));
    assert!(schema_valid("verify_report", &report));
    assert_eq!(code(&rvd(&["verify", "astrology"])), 2);
    assert_eq!(code(&rvd(&["verify"])), 2);
}

#[test]
fn verify_kernels_from_config() {
    let tmp = tempdir().unwrap();
    let cfg = write_config(
        &tmp,
        "v.json",
        &json!({ "suite": "kernels", "seed": 42, "samples": 5000 }),
    );
    let out = rvd(&["verify", "--config", &cfg]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["suite"], json!("kernels"));
    assert_eq!(report["pass"], json!(true));
}
