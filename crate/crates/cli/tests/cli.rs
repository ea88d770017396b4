use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stochinv"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn scratch(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("stochinv-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn check(config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin().args(extra).arg("check").arg("--config").arg(config).arg("--out").arg(out).output().unwrap()
}

fn report(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn invariant_cir_passes() {
    let d = scratch("inv");
    let out = d.join("r.json");
    let o = check(&config("cir_invariant.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["verdict"], "pass");
    assert_eq!(r["config_digest"].as_str().unwrap().len(), 64);
    assert!(d.join("r.json.timings.json").exists());
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn violating_cir_fails_at_the_origin() {
    let d = scratch("viol");
    let out = d.join("r.json");
    let o = check(&config("cir_violating.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(1));
    let r = report(&out);
    assert_eq!(r["verdict"], "fail");
    assert_eq!(r["checks"][0]["details"]["offending_points"], serde_json::json!([[0.0]]));
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn config_errors_exit_64_and_name_the_field() {
    let d = scratch("bad");
    let cfg = d.join("bad.json");
    std::fs::write(
        &cfg,
        r#"{"model":{"kind":"cir","params":{"a":1}},"set":{"kind":"orthant","params":{"dim":1}},"checks":[{"name":"frobnicate"}]}"#,
    )
    .unwrap();
    let o = check(&cfg, &d.join("r.json"), &[]);
    assert_eq!(o.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checks[0].name"));
    assert!(!d.join("r.json").exists());

    std::fs::write(
        &cfg,
        r#"{"model":{"kind":"expr","params":{"dim":1,"drift":["x2"],"sigma":[["1"]]}},"set":{"kind":"orthant","params":{"dim":1}},"checks":[{"name":"check_set"}]}"#,
    )
    .unwrap();
    let o = check(&cfg, &d.join("r.json"), &[]);
    assert_eq!(o.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.params.drift[0]"));
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn tolerance_flags_are_recorded_as_overrides() {
    let d = scratch("tol");
    let out = d.join("r.json");
    let o = check(&config("cir_invariant.json"), &out, &["--tol-ineq", "1e-6"]);
    assert_eq!(o.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["tolerances"]["tol_ineq"]["source"], "override");
    assert_eq!(r["tolerances"]["tol_eq"]["source"], "default");
    assert_eq!(r["checks"][0]["metrics"]["max_corrected_drift"]["tol"], 1e-6);
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn simulate_writes_trajectory_csv() {
    let d = scratch("csv");
    let cfg = d.join("sim.json");
    let csv = d.join("paths.csv");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"model":{{"kind":"cir","params":{{"a":0.3}}}},"set":{{"kind":"orthant","params":{{"dim":1}}}},
               "checks":[{{"name":"simulate","params":{{"x0":[0.5],"h":0.1,"horizon":1.0,"n_paths":3}}}}],
               "output":{{"csv":{:?}}}}}"#,
            csv.to_str().unwrap()
        ),
    )
    .unwrap();
    let o = check(&cfg, &d.join("r.json"), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("t,path,x1\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 11);
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn verify_ops_exit_codes() {
    let o = bin().arg("verify-ops").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["suites"].as_array().unwrap().len(), 5);

    let o = bin().args(["verify-ops", "--suite", "powers_stormer", "--perturb", "powers_stormer"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));

    let o = bin().args(["verify-ops", "--suite", ""]).output().unwrap();
    assert_eq!(o.status.code(), Some(64));
}
