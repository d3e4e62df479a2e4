use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nullscatter_cli::Scenario;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nullscatter"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn out_dir(tag: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(tag);
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn run(args: &[&str], file: &Path, out: &Path) -> Output {
    bin().args(args).arg("--scenario").arg(file).arg("--out").arg(out).output().unwrap()
}

fn write_scenario(tag: &str, body: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-scenarios");
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join(format!("{tag}.json"));
    std::fs::write(&p, body).unwrap();
    p
}

fn read_report(dir: &Path, stem: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json"))).unwrap()).unwrap()
}

#[test]
fn unknown_family_is_a_config_error() {
    let file = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/unknown_family.json");
    let o = run(&["scatter-map"], &file, &out_dir("unknown"));
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warp_drive"));
}

#[test]
fn wrong_subcommand_is_a_config_error() {
    let o = run(&["trace"], &scenario("example_scatter_map.json"), &out_dir("wrong"));
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn bad_override_is_a_config_error() {
    let file = scenario("example_scatter_map.json");
    let o = run(&["scatter-map", "--tol-override", "warp=1"], &file, &out_dir("bad-override"));
    assert_eq!(o.status.code(), Some(4));
    let o = run(&["scatter-map", "--tol-override", "rtol"], &file, &out_dir("bad-override"));
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn missing_file_is_a_config_error() {
    let o = run(&["trace"], Path::new("/nonexistent/scenario.json"), &out_dir("missing"));
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn failed_invariant_exits_two() {
    let body = r#"{
        "name": "dilation_expected_to_hold",
        "metric": {"family": "disk_cylinder_cartesian"},
        "chart": {"kind": "disk_cartesian"},
        "experiment": {"kind": "verify-gauge", "fan": {"count": 6},
            "checks": [{"check": "ssharp-invariance", "gauge": {"kind": "dilation", "factor": 1.1}}]}
    }"#;
    let out = out_dir("violation");
    let o = run(&["verify-gauge"], &write_scenario("violation", body), &out);
    assert_eq!(o.status.code(), Some(2));
    let r = read_report(&out, "dilation_expected_to_hold.verify-gauge");
    assert_eq!(r["status"], "invariant_violation");
    assert_eq!(r["result"]["checks"][0]["met"], false);
}

#[test]
fn expected_failure_is_a_pass() {
    let body = r#"{
        "name": "dilation_control",
        "metric": {"family": "disk_cylinder_cartesian"},
        "chart": {"kind": "disk_cartesian"},
        "experiment": {"kind": "verify-gauge", "fan": {"count": 6},
            "checks": [{"check": "ssharp-invariance", "gauge": {"kind": "dilation", "factor": 1.1}, "expect": "fail"}]}
    }"#;
    let o = run(&["verify-gauge"], &write_scenario("control", body), &out_dir("control"));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn ray_that_does_not_exit_is_a_domain_failure() {
    let body = r#"{
        "name": "short_trace",
        "metric": {"family": "disk_cylinder_cartesian"},
        "chart": {"kind": "disk_cartesian"},
        "experiment": {"kind": "trace", "x": [0.0, 0.0, 0.0], "v": [1.0, 1.0, 0.0], "length": 0.2}
    }"#;
    let o = run(&["trace"], &write_scenario("short", body), &out_dir("short"));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn non_null_trace_direction_is_rejected() {
    let body = r#"{
        "name": "timelike_trace",
        "metric": {"family": "disk_cylinder_cartesian"},
        "chart": {"kind": "disk_cartesian"},
        "experiment": {"kind": "trace", "x": [0.0, 0.0, 0.0], "v": [1.0, 0.5, 0.0]}
    }"#;
    let o = run(&["trace"], &write_scenario("timelike", body), &out_dir("timelike"));
    assert_eq!(o.status.code(), Some(4));
}

fn without_timestamp(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timestamp");
    v
}

#[test]
fn reports_are_deterministic() {
    let file = scenario("example_gauge_normal_factor.json");
    let stem = "example_gauge_normal_factor.verify-gauge";
    let (a, b) = (out_dir("det-a"), out_dir("det-b"));
    assert_eq!(run(&["verify-gauge", "--threads", "2"], &file, &a).status.code(), Some(0));
    assert_eq!(run(&["verify-gauge", "--threads", "3"], &file, &b).status.code(), Some(0));
    assert_eq!(without_timestamp(read_report(&a, stem)), without_timestamp(read_report(&b, stem)));
}

#[test]
fn seed_flag_resamples_the_fan() {
    let file = scenario("example_scatter_map.json");
    let (a, b) = (out_dir("seed-a"), out_dir("seed-b"));
    assert_eq!(run(&["scatter-map"], &file, &a).status.code(), Some(0));
    assert_eq!(run(&["scatter-map", "--seed", "99"], &file, &b).status.code(), Some(0));
    let csv_a = std::fs::read_to_string(a.join("example_scatter_map.scatter-map.csv")).unwrap();
    let csv_b = std::fs::read_to_string(b.join("example_scatter_map.scatter-map.csv")).unwrap();
    assert_ne!(csv_a, csv_b);
    assert_eq!(read_report(&b, "example_scatter_map.scatter-map")["seed"], 99);
}

#[test]
fn overrides_appear_in_the_report() {
    let out = out_dir("override");
    let o = run(&["scatter-map", "--tol-override", "rtol=1e-11"], &scenario("example_scatter_map.json"), &out);
    assert_eq!(o.status.code(), Some(0));
    let r = read_report(&out, "example_scatter_map.scatter-map");
    assert_eq!(r["resolved_controls"]["flow"]["rtol"], 1e-11);
    assert_eq!(r["scenario"]["tolerances"]["rtol"], 1e-11);
}

#[test]
fn trace_writes_csv() {
    let out = out_dir("trace");
    let o = run(&["trace"], &scenario("c10_integrator_budget.json"), &out);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("c10_integrator_budget.trace.csv")).unwrap();
    assert!(csv.lines().count() > 2);
}

#[test]
fn identical_pair_has_zero_jet_difference() {
    let out = out_dir("identity");
    let o = run(&["normalize-jets"], &scenario("example_normalize_identity.json"), &out);
    assert_eq!(o.status.code(), Some(0));
    let r = read_report(&out, "example_normalize_identity.normalize-jets");
    assert_eq!(r["result"]["max_jet_diff"], 0.0);
}

#[test]
fn shipped_scenarios_round_trip() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        let s = Scenario::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(Scenario::parse(&s.to_json()).unwrap(), s, "{}", p.display());
    }
}
