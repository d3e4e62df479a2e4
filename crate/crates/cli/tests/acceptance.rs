//! Runs every shipped scenario through the binary and checks the ten
//! acceptance criteria against the reports, one PASS/FAIL line each.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use serde_json::Value;

struct Run {
    exit: i32,
    seconds: f64,
    report: Option<Value>,
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn run_scenario(path: &Path, out: &Path) -> (String, Run) {
    let text = std::fs::read_to_string(path).unwrap();
    let doc: Value = serde_json::from_str(&text).unwrap();
    let name = doc["name"].as_str().unwrap().to_string();
    let command = doc["experiment"]["kind"].as_str().unwrap().to_string();
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_nullscatter"))
        .args([command.as_str(), "--scenario"])
        .arg(path)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let report = std::fs::read_to_string(out.join(format!("{name}.{command}.json")))
        .ok()
        .map(|t| serde_json::from_str(&t).unwrap());
    if !status.status.success() {
        eprintln!("{name}: {}", String::from_utf8_lossy(&status.stderr));
    }
    (name, Run { exit: status.status.code().unwrap_or(-1), seconds, report })
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

fn max_of<'a>(it: impl Iterator<Item = &'a Value>) -> f64 {
    it.map(f).fold(0.0, f64::max)
}

type Runs = BTreeMap<String, Run>;
type Verdict = (bool, String);

fn result<'a>(runs: &'a BTreeMap<String, Run>, name: &str) -> Option<&'a Value> {
    let r = runs.get(name)?;
    (r.exit == 0).then_some(())?;
    r.report.as_ref().map(|v| &v["result"])
}

fn gauge_checks(res: &Value) -> &Vec<Value> {
    res["checks"].as_array().unwrap()
}

fn c1(runs: &BTreeMap<String, Run>) -> Verdict {
    let Some(res) = result(runs, "c01_conformal_ssharp") else { return (false, "run failed".into()) };
    let (checks, controls): (Vec<&Value>, Vec<&Value>) = gauge_checks(res).iter().partition(|c| c["expect"] == "pass");
    let worst = max_of(checks.iter().map(|c| &c["report"]["max_discrepancy"]));
    let rays: usize = checks.iter().map(|c| c["report"]["rays"].as_array().map_or(0, |r| r.len())).min().unwrap_or(0);
    let detected = controls.iter().all(|c| c["met"] == true);
    let secs = runs["c01_conformal_ssharp"].seconds;
    let ok = checks.len() == 2 && rays == 200 && worst <= 2e-6 && detected && secs <= 10.0;
    (ok, format!("max discrepancy {worst:.2e} over {rays} rays, negative control detected: {detected}, {secs:.2} s"))
}

fn c2(runs: &BTreeMap<String, Run>) -> Verdict {
    let Some(res) = result(runs, "c02_s_transform_rule") else { return (false, "run failed".into()) };
    let rays = gauge_checks(res)[0]["report"]["rays"].as_array().unwrap();
    let worst = rays
        .iter()
        .map(|r| ((f(&r["factor_measured"]) - f(&r["factor_expected"])) / f(&r["factor_expected"])).abs())
        .fold(0.0, f64::max);
    let all_ok = rays.iter().all(|r| r["status"] == "ok");
    (all_ok && rays.len() == 200 && worst <= 1e-6, format!("worst relative factor error {worst:.2e} over {} rays", rays.len()))
}

fn c3(runs: &BTreeMap<String, Run>) -> Verdict {
    let Some(res) = result(runs, "c03_reparameterization") else { return (false, "run failed".into()) };
    let checks = gauge_checks(res);
    let chords: usize = checks.iter().map(|c| c["report"]["chords"].as_array().unwrap().len()).min().unwrap_or(0);
    let sup = max_of(checks.iter().map(|c| &c["report"]["sup_distance"]));
    (checks.len() == 2 && chords == 20 && sup <= 1e-7, format!("sup trace distance {sup:.2e} over {chords} chords per factor"))
}

fn c4(runs: &BTreeMap<String, Run>) -> Verdict {
    let Some(res) = result(runs, "c04_escape_time") else { return (false, "run failed".into()) };
    let dirs = res["recoveries"][0]["recovery"]["directions"].as_array().unwrap();
    let worst = dirs.iter().map(|d| (f(&d["q_scattering"]) - 1.0).abs()).fold(0.0, f64::max);
    let returned = res["control"]["returned"].as_u64().unwrap_or(u64::MAX);
    (
        !dirs.is_empty() && worst <= 0.01 && returned == 0,
        format!("|2/A - 1| <= {worst:.2e} on {} directions, control returns {returned}", dirs.len()),
    )
}

fn c5(runs: &BTreeMap<String, Run>) -> Verdict {
    let Some(res) = result(runs, "c05_sff_recovery") else { return (false, "run failed".into()) };
    let recs = res["recoveries"].as_array().unwrap();
    let mut per_metric: BTreeMap<String, usize> = BTreeMap::new();
    for r in recs {
        *per_metric.entry(r["metric"].as_str().unwrap().to_string()).or_default() += 1;
    }
    let worst = max_of(recs.iter().map(|r| &r["recovery"]["max_rel_err"]));
    let ok = per_metric.len() == 2 && per_metric.values().all(|&n| n == 5) && worst <= 0.01;
    (ok, format!("max relative error {worst:.2e}, points per metric {:?}", per_metric.values().collect::<Vec<_>>()))
}

fn c6(runs: &BTreeMap<String, Run>) -> Verdict {
    let Some(res) = result(runs, "c06_lightcone_roundtrip") else { return (false, "run failed".into()) };
    let rt = &res["roundtrip"];
    let trials = rt["runs"].as_array().unwrap();
    let dims: std::collections::BTreeSet<u64> = trials.iter().map(|t| t["dim"].as_u64().unwrap()).collect();
    let identifiable = trials.iter().all(|t| t["c_identifiable"] == true);
    let (c, fe, id) = (f(&rt["max_c_err"]), f(&rt["max_f_err"]), f(&rt["max_identity_defect"]));
    let ok = trials.len() == 100 && dims.len() == 2 && identifiable && c <= 1e-8 && fe <= 1e-6 && id <= 1e-8;
    (ok, format!("{} trials, c err {c:.2e}, f err {fe:.2e}, identity defect {id:.2e}", trials.len()))
}

fn jet_pairs<'a>(runs: &'a BTreeMap<String, Run>, name: &str) -> Option<&'a Vec<Value>> {
    result(runs, name).map(|r| r["pairs"].as_array().unwrap())
}

fn c7(runs: &BTreeMap<String, Run>) -> Verdict {
    let Some(pairs) = jet_pairs(runs, "c07_jet_pipeline") else { return (false, "run failed".into()) };
    let mut ok = pairs.len() == 10;
    let mut worst_ratio: f64 = 0.0;
    for p in pairs {
        let orders = p["comparison"]["orders"].as_array().unwrap();
        ok &= orders.len() == 5;
        for o in orders {
            let k = o["k"].as_f64().unwrap();
            let tol = 1e-6 * 10f64.powf(k / 2.0);
            worst_ratio = worst_ratio.max(f(&o["max_diff"]) / tol);
        }
    }
    let secs = runs["c07_jet_pipeline"].seconds;
    ok &= worst_ratio <= 1.0 && secs <= 60.0;
    (ok, format!("{} pairs, worst diff/tolerance {worst_ratio:.2e}, {secs:.2} s", pairs.len()))
}

fn c8(runs: &BTreeMap<String, Run>) -> Verdict {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for name in ["c07_jet_pipeline", "c08_psi_structure"] {
        let Some(pairs) = jet_pairs(runs, name) else { return (false, format!("{name} failed")) };
        count += pairs.len();
        worst = worst.max(max_of(pairs.iter().map(|p| &p["psi_normal_defect"])));
    }
    (count == 20 && worst <= 1e-10, format!("first-order coefficients of psi - Id <= {worst:.2e} over {count} runs"))
}

fn c9(runs: &BTreeMap<String, Run>) -> Verdict {
    let Some(res) = result(runs, "c09_sensitivity") else { return (false, "run failed".into()) };
    let reports = res["reports"].as_array().unwrap();
    let mut ok = reports.len() == 2;
    let mut parts = Vec::new();
    for r in reports {
        let k = f(&r["k"]);
        let slope = f(&r["slope"]);
        let decades = f(&r["decades"]);
        let floor = f(&r["noise_floor"]);
        let control = f(&r["control_max"]);
        ok &= r["monotone"] == true && slope >= k - 0.3 && decades >= 2.0 - 1e-9 && control <= 10.0 * floor;
        parts.push(format!("k={k} slope {slope:.2} over {decades:.2} decades, control {control:.1e} (floor {floor:.1e})"));
    }
    (ok, parts.join("; "))
}

fn c10(runs: &BTreeMap<String, Run>) -> Verdict {
    let mut worst_h: f64 = 0.0;
    let mut gated = 0;
    let mut broken = Vec::new();
    for (name, r) in runs {
        match &r.report {
            Some(rep) if r.exit == 0 => {
                if let Some(h) = rep["max_abs_h"].as_f64() {
                    worst_h = worst_h.max(h);
                    gated += 1;
                }
            }
            _ => broken.push(name.clone()),
        }
    }
    let rev = result(runs, "c10_integrator_budget").map_or(f64::INFINITY, |r| f(&r["reversibility_error"]));
    let ok = broken.is_empty() && worst_h <= 1e-9 && rev <= 1e-7;
    (
        ok,
        format!("max |H| {worst_h:.2e} over {gated} integrating scenarios, reversibility {rev:.2e}, failed runs {broken:?}"),
    )
}

fn main() {
    let out = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&out);
    let mut files: Vec<PathBuf> = std::fs::read_dir(scenarios_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    let runs: BTreeMap<String, Run> = files.iter().map(|p| run_scenario(p, &out)).collect();

    let criteria: [fn(&Runs) -> Verdict; 10] = [c1, c2, c3, c4, c5, c6, c7, c8, c9, c10];
    let mut failed = Vec::new();
    for (i, check) in criteria.iter().enumerate() {
        let (ok, detail) = check(&runs);
        println!("criterion {}: {} ({detail})", i + 1, if ok { "PASS" } else { "FAIL" });
        if !ok {
            failed.push(i + 1);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
