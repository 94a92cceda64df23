use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use vlasov_darwin::cli::suites::Suite;
use vlasov_darwin::cli::{
    cmd_verify, load_config, FieldsConfig, OrderTable, SimulateConfig, UniquenessConfig,
    VerifyConfig, W2Config,
};
use vlasov_darwin::dynamics::FlowConfig;
use vlasov_darwin::fields::solve_vector_potential;
use vlasov_darwin::io::{PotentialMeta, TraceMeta, TrajectoryMeta};
use vlasov_darwin::kernels::Softening;
use vlasov_darwin::sampling::{sample, Family, InitialSpec};
use vlasov_darwin::stability::{dt_halving_study, PerturbSpec};
use vlasov_darwin::transport::w2_exact;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = root().join("schemas").join(format!("{name}.schema.json"));
    let value: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    jsonschema::validator_for(&value).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn assert_valid(name: &str, instance: &Value) {
    let v = schema(name);
    let errors: Vec<String> = v.iter_errors(instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}\n{instance}");
}

fn config(name: &str) -> Value {
    let text = std::fs::read_to_string(root().join("configs").join(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn write_tmp(dir: &Path, value: &Value) -> PathBuf {
    let path = dir.join("cfg.json");
    std::fs::write(&path, value.to_string()).unwrap();
    path
}

fn small() -> vlasov_darwin::ensemble::Ensemble {
    sample(&InitialSpec::reference(Family::GaussianBall, 16, 3)).unwrap()
}

#[test]
fn every_schema_compiles() {
    let mut n = 0;
    for entry in std::fs::read_dir(root().join("schemas")).unwrap() {
        let path = entry.unwrap().path();
        let value: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert!(
            jsonschema::validator_for(&value).is_ok(),
            "{}",
            path.display()
        );
        assert_eq!(
            value["additionalProperties"],
            json!(false),
            "{}",
            path.display()
        );
        n += 1;
    }
    assert_eq!(n, 12);
}

#[test]
fn shipped_configs_validate_and_load() {
    let dir = root().join("configs");
    for (file, name) in [
        ("gen_reference.json", "gen_config"),
        ("simulate_reference.json", "simulate_config"),
        ("fields_reference.json", "fields_config"),
        ("uniqueness_jitter.json", "uniqueness_config"),
        ("uniqueness_dt_halving.json", "uniqueness_config"),
        ("verify_kernels.json", "verify_config"),
    ] {
        assert_valid(name, &config(file));
        let path = dir.join(file);
        match name {
            "gen_config" => {
                load_config::<InitialSpec>(&path, None)
                    .unwrap()
                    .validate()
                    .unwrap();
            }
            "simulate_config" => {
                load_config::<SimulateConfig>(&path, None)
                    .unwrap()
                    .flow()
                    .unwrap();
            }
            "fields_config" => {
                load_config::<FieldsConfig>(&path, None).unwrap();
            }
            "uniqueness_config" => {
                load_config::<UniquenessConfig>(&path, None)
                    .unwrap()
                    .prepare(&dir)
                    .unwrap();
            }
            _ => {
                load_config::<VerifyConfig>(&path, None).unwrap();
            }
        }
    }
    assert_valid("w2_config", &json!({ "a": "a.csv", "b": "b.csv" }));
}

#[test]
fn invalid_simulate_configs_rejected_by_schema_and_loader() {
    let tmp = tempfile::tempdir().unwrap();
    let base = config("simulate_reference.json");
    let mutate = |f: &dyn Fn(&mut Value)| {
        let mut v = base.clone();
        f(&mut v);
        v
    };
    let cases = [
        mutate(&|v| v["extra"] = json!(1)),
        mutate(&|v| {
            v.as_object_mut().unwrap().remove("dt");
        }),
        mutate(&|v| v["dt"] = json!(-0.1)),
        mutate(&|v| v["eps"] = json!(0.0)),
        mutate(&|v| v["record_every"] = json!(0)),
        mutate(&|v| v["initial"]["family"] = json!("spiral")),
        mutate(&|v| v["initial"]["n"] = json!(0)),
    ];
    let validator = schema("simulate_config");
    for case in cases {
        assert!(!validator.is_valid(&case), "{case}");
        let path = write_tmp(tmp.path(), &case);
        let loaded = load_config::<SimulateConfig>(&path, None).and_then(|c| {
            c.flow()?;
            c.initial.map(|s| s.validate()).transpose()
        });
        assert!(loaded.is_err(), "{case}");
    }
    let both = mutate(&|v| v["input"] = json!("e.csv"));
    assert!(!validator.is_valid(&both));
    let neither = mutate(&|v| {
        v.as_object_mut().unwrap().remove("initial");
    });
    assert!(!validator.is_valid(&neither));
}

#[test]
fn invalid_verify_and_w2_configs_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let v = schema("verify_config");
    for case in [
        json!({ "suite": "astrology" }),
        json!({ "samples": 0 }),
        json!({ "x": 1 }),
    ] {
        assert!(!v.is_valid(&case), "{case}");
        if case.get("samples").is_none() {
            let path = write_tmp(tmp.path(), &case);
            assert!(load_config::<VerifyConfig>(&path, None).is_err(), "{case}");
        }
    }
    let w = schema("w2_config");
    for case in [
        json!({ "a": "x.csv" }),
        json!({ "a": "x", "b": "y", "c": "z" }),
    ] {
        assert!(!w.is_valid(&case));
        let path = write_tmp(tmp.path(), &case);
        assert!(load_config::<W2Config>(&path, None).is_err());
    }
}

#[test]
fn emitted_metadata_validates() {
    let e = small();
    let eps = Softening::new(0.3).unwrap();
    let state = solve_vector_potential(&e, eps, 1e-12, 500).unwrap();
    assert_valid(
        "potential_meta",
        &serde_json::to_value(PotentialMeta::from(&state)).unwrap(),
    );

    let traj_meta = TrajectoryMeta {
        dt: 0.1,
        t_end: 0.2,
        eps,
        fp_tol: 1e-10,
        seed: 4,
        times: vec![0.0, 0.1, 0.2],
    };
    assert_valid(
        "trajectory_meta",
        &serde_json::to_value(&traj_meta).unwrap(),
    );

    let other = sample(&InitialSpec::reference(Family::UniformBall, 16, 4)).unwrap();
    let plan = w2_exact(&e, &other).unwrap();
    assert_valid(
        "plan_summary",
        &serde_json::to_value(plan.summary()).unwrap(),
    );

    for perturbation in [
        PerturbSpec::None,
        PerturbSpec::Jitter { delta: 1e-3 },
        PerturbSpec::DtHalving,
        PerturbSpec::FpTolTightening,
    ] {
        let meta = TraceMeta {
            gronwall_c: 0.5,
            bound_satisfied: true,
            perturbation,
        };
        assert_valid("trace_meta", &serde_json::to_value(meta).unwrap());
    }

    let rows = dt_halving_study(&e, &FlowConfig::new(0.1, 0.2, eps), 3).unwrap();
    assert_valid(
        "order_table",
        &serde_json::to_value(OrderTable { rows }).unwrap(),
    );
}

#[test]
fn verify_reports_validate() {
    for (suite, samples) in [
        (Suite::Kernels, Some(2000)),
        (Suite::Identity, None),
        (Suite::Transport, None),
    ] {
        let cfg = VerifyConfig {
            suite: Some(suite),
            seed: 1,
            samples,
        };
        let (report, pass) = cmd_verify(suite, &cfg).unwrap();
        assert!(pass, "{report}");
        assert_valid("verify_report", &report);
    }
}
