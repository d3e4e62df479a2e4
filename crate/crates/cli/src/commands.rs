//! One function per subcommand.

use nalgebra::{DMatrix, DVector};
use nullscatter::chart::BoundaryChart;
use nullscatter::gauge::{self, FanRay, GaugeReport, TOL_GAUGE};
use nullscatter::geodesic::{self, FlowControls, PhasePoint, TrajectoryStatus};
use nullscatter::jetlab::{self, LightConeSample};
use nullscatter::linalg;
use nullscatter::metric::{families, MetricField};
use nullscatter::pseries::TruncatedSeries;
use nullscatter::scatter;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::scenario::{
    poly, CheckSpec, EscapeControl, Expectation, Experiment, LightconeData, LightconeRoundtrip, MetricSpec, PairSource,
    Scenario,
};
use crate::{CliError, Outcome, Status};

/// Default bound on the reparameterized trace distance.
const TOL_REPARAM: f64 = 1e-7;

pub fn run(s: &Scenario) -> Result<Outcome, CliError> {
    match &s.experiment {
        Experiment::Trace { x, v, to_boundary, length, reversibility } => {
            trace(s, x, v, *to_boundary, *length, *reversibility)
        }
        Experiment::ScatterMap { fan, covector } => scatter_map(s, fan, *covector),
        Experiment::VerifyGauge { fan, checks } => verify_gauge(s, fan, checks),
        Experiment::RecoverSff { points, options, tolerance, control } => {
            recover_sff(s, points, &options.resolve(s.tolerances.controls()), *tolerance, control.as_ref())
        }
        Experiment::NormalizeJets { pairs, options, compare_order, jet_tol, psi_tol } => {
            normalize_jets(s, pairs, options, *compare_order, *jet_tol, *psi_tol)
        }
        Experiment::LightconeFit { roundtrip, data } => lightcone(s, roundtrip.as_ref(), data.as_ref()),
        Experiment::Sensitivity { point, h, orders, options } => sensitivity(s, point, h, orders, options),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("result serializes")
}

fn vector(v: &[f64], dim: usize, what: &str) -> Result<DVector<f64>, CliError> {
    if v.len() != dim {
        return Err(CliError::Config(format!("{what} needs {dim} components, got {}", v.len())));
    }
    Ok(DVector::from_column_slice(v))
}

fn quota_exceeded(failures: usize, total: usize, quota: f64) -> bool {
    total > 0 && failures as f64 > quota * total as f64
}

fn trace(s: &Scenario, x: &[f64], v: &[f64], to_boundary: bool, length: Option<f64>, reversibility: bool) -> Result<Outcome, CliError> {
    let m = s.metric()?;
    let c = s.tolerances.controls();
    let x = vector(x, m.dim(), "trace start point")?;
    let v = vector(v, m.dim(), "trace direction")?;
    let q = linalg::bilinear(&m.eval(&x), &v, &v);
    if q.abs() > c.tol_null * v.norm_squared().max(1.0) {
        return Err(CliError::Config(format!("trace direction is not null: g(v, v) = {q:e}")));
    }
    let mut flow = c.flow.clone();
    if let Some(l) = length {
        flow.max_length = l;
    }
    let start = PhasePoint::new(x.clone(), m.flat(&x, &v));
    let tr = if to_boundary {
        geodesic::flow_to_boundary(&m, &s.chart()?, &start, &flow)?
    } else {
        geodesic::flow(&m, &start, &flow)?
    };
    let end = tr.exit.as_ref().map(|h| h.point.clone()).unwrap_or_else(|| tr.last().clone());
    let mut max_abs_h = tr.max_abs_h;
    let mut reversibility_error = None;
    if reversibility {
        let back_flow = FlowControls { max_length: end.s, ..flow.clone() };
        let back = geodesic::flow_with_stops(&m, &end.reversed(), &back_flow, &[end.s])?;
        let p = back
            .samples
            .iter()
            .find(|p| p.s == end.s)
            .ok_or_else(|| CliError::Config("reverse flow did not reach the stop".into()))?;
        max_abs_h = max_abs_h.max(back.max_abs_h);
        reversibility_error = Some((&p.x - &x).amax().max((&p.xi + &start.xi).amax()));
    }
    let status = if to_boundary && tr.status != TrajectoryStatus::Exited { Status::DomainFailure } else { Status::Pass };
    let result = json!({
        "metric": m.name(),
        "trajectory_status": tr.status,
        "samples": tr.samples.len(),
        "accepted_steps": tr.accepted,
        "rejected_steps": tr.rejected,
        "s_end": end.s,
        "end_x": end.x.as_slice(),
        "end_xi": end.xi.as_slice(),
        "exit": tr.exit.as_ref().map(|h| json!({"s_exit": h.s_exit, "dfds": h.dfds, "grazing": h.grazing})),
        "max_abs_h": max_abs_h,
        "reversibility_error": reversibility_error,
    });
    Ok(Outcome { status, result, max_abs_h: Some(max_abs_h), tables: vec![("csv".into(), tr.to_csv(&m)?)] })
}

fn fan(m: &MetricField, chart: &BoundaryChart, spec: &gauge::FanSpec) -> Result<Vec<FanRay>, CliError> {
    Ok(gauge::sample_fan(m, chart, spec)?)
}

fn scatter_map(s: &Scenario, spec: &gauge::FanSpec, covector: bool) -> Result<Outcome, CliError> {
    let m = s.metric()?;
    let chart = s.chart()?;
    let c = s.tolerances.controls();
    let rays = fan(&m, &chart, spec)?;
    let records = if covector {
        let inputs: Vec<(DVector<f64>, DVector<f64>)> = rays
            .iter()
            .map(|r| {
                let comps = gauge::covector_components(&chart, &r.x, m.flat(&r.x, &r.v).as_slice());
                Ok((r.x.clone(), gauge::tangential_covector(&m, &chart, &r.x, &comps)?))
            })
            .collect::<Result<_, nullscatter::Error>>()?;
        scatter::ssharp_fan(&m, &chart, &inputs, &c)
    } else {
        let inputs: Vec<(DVector<f64>, DVector<f64>)> = rays.iter().map(|r| (r.x.clone(), r.v.clone())).collect();
        scatter::scatter_fan(&m, &chart, &inputs, &c)
    };
    let csv = scatter::scatter_csv(&chart, &records)?;
    let failures: Vec<Value> = records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().err().map(|e| json!({"index": i, "error": e.to_string()})))
        .collect();
    let ok: Vec<_> = records.iter().filter_map(|r| r.as_ref().ok()).collect();
    let max_abs_h = ok.iter().map(|r| r.max_abs_h).fold(0.0, f64::max);
    let status = if quota_exceeded(failures.len(), records.len(), s.tolerances.failure_quota()) {
        Status::DomainFailure
    } else {
        Status::Pass
    };
    let result = json!({
        "metric": m.name(),
        "relation": if covector { "S_sharp" } else { "S" },
        "rays": records.len(),
        "grazing": ok.iter().filter(|r| r.grazing).count(),
        "failures": failures,
        "max_abs_h": max_abs_h,
    });
    Ok(Outcome { status, result, max_abs_h: Some(max_abs_h), tables: vec![("csv".into(), csv)] })
}

/// Rays of a gauge report that ended in a domain failure rather than a mismatch.
fn domain_failures(r: &GaugeReport) -> usize {
    r.rays.iter().filter(|ray| ray.status != "ok").count()
}

fn verify_gauge(s: &Scenario, spec: &gauge::FanSpec, checks: &[CheckSpec]) -> Result<Outcome, CliError> {
    let m = s.metric()?;
    let chart = s.chart()?;
    let c = s.tolerances.controls();
    let d = m.dim();
    let rays = fan(&m, &chart, spec)?;
    let quota = s.tolerances.failure_quota();
    let mut results = Vec::new();
    let mut all_met = true;
    let mut domain = false;
    let mut max_abs_h: f64 = 0.0;
    for check in checks {
        let (expect, passed, body, failed_rays, h) = match check {
            CheckSpec::SsharpInvariance { gauge: g, expect, tolerance } => {
                let r = gauge::check_ssharp_invariance(&m, &g.build(d)?, &chart, &rays, &c, tolerance.unwrap_or(TOL_GAUGE))?;
                (*expect, r.pass, to_value(&r), domain_failures(&r), r.max_abs_h)
            }
            CheckSpec::SInvariance { gauge: g, expect, tolerance } => {
                let r = gauge::check_s_invariance(&m, &g.build(d)?, &chart, &rays, &c, tolerance.unwrap_or(TOL_GAUGE))?;
                (*expect, r.pass, to_value(&r), domain_failures(&r), r.max_abs_h)
            }
            CheckSpec::STransformRule { mu, expect, tolerance } => {
                let r = gauge::check_s_transform_rule(&m, &poly(mu, d)?, &chart, &rays, &c, tolerance.unwrap_or(1e-6))?;
                (*expect, r.pass, to_value(&r), domain_failures(&r), r.max_abs_h)
            }
            CheckSpec::TwoPair { gauge: g, mu, expect, tolerance } => {
                let (a, b) = gauge::check_two_pair(
                    &m,
                    &g.build(d)?,
                    &poly(mu, d)?,
                    &chart,
                    &rays,
                    &c,
                    tolerance.unwrap_or(TOL_GAUGE),
                )?;
                let body = json!({"first": a, "second": b});
                (*expect, a.pass && b.pass, body, domain_failures(&a) + domain_failures(&b), a.max_abs_h.max(b.max_abs_h))
            }
            CheckSpec::Reparameterization { mu, chords, expect, tolerance } => {
                let mu = poly(mu, d)?;
                let tol = tolerance.unwrap_or(TOL_REPARAM);
                if *chords > rays.len() {
                    return Err(CliError::Config(format!("{chords} chords requested from a fan of {}", rays.len())));
                }
                let reports = rays[..*chords]
                    .par_iter()
                    .map(|r| {
                        let (v, _) = scatter::null_lift(&m, &chart, &r.x, &r.v, &c)?;
                        let start = PhasePoint::new(r.x.clone(), m.flat(&r.x, &v));
                        gauge::reparameterization_check(&m, &mu, Some(&chart), &start, &c.flow, tol)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let sup = reports.iter().map(|r| r.sup_distance).fold(0.0, f64::max);
                let h = reports.iter().map(|r| r.max_abs_h).fold(0.0, f64::max);
                let pass = reports.iter().all(|r| r.pass);
                let body = json!({"check": "reparameterization", "chords": reports, "sup_distance": sup, "tolerance": tol, "pass": pass});
                (*expect, pass, body, 0, h)
            }
        };
        let met = passed == (expect == Expectation::Pass);
        // domain failures only matter for checks that are expected to hold
        if expect == Expectation::Pass && quota_exceeded(failed_rays, rays.len(), quota) {
            domain = true;
        }
        all_met &= met;
        max_abs_h = max_abs_h.max(h);
        results.push(json!({"expect": expect, "met": met, "report": body}));
    }
    let status = if domain {
        Status::DomainFailure
    } else if all_met {
        Status::Pass
    } else {
        Status::InvariantViolation
    };
    let result = json!({"metric": m.name(), "fan_size": rays.len(), "checks": results, "max_abs_h": max_abs_h});
    Ok(Outcome { status, result, max_abs_h: Some(max_abs_h), tables: vec![] })
}

fn recover_sff(
    s: &Scenario,
    points: &[Vec<f64>],
    opts: &jetlab::SffOptions,
    tolerance: f64,
    control: Option<&EscapeControl>,
) -> Result<Outcome, CliError> {
    let chart = s.chart()?;
    let mut metrics = vec![s.metric()?];
    if let Some(second) = &s.second_metric {
        metrics.push(second.build()?);
    }
    let mut recoveries = Vec::new();
    let mut max_rel_err: f64 = 0.0;
    let mut max_abs_h: f64 = 0.0;
    for m in &metrics {
        for p in points {
            let x = chart.point(p)?;
            let r = jetlab::recover_sff(m, &chart, &x, opts)?;
            max_rel_err = max_rel_err.max(r.max_rel_err);
            max_abs_h = max_abs_h.max(r.max_abs_h);
            recoveries.push(json!({"metric": m.name(), "params": p, "recovery": r}));
        }
    }
    let mut control_ok = true;
    let control_body = match control {
        None => Value::Null,
        Some(ctl) => {
            let m = ctl.metric.build()?;
            let x = ctl.chart.point(&ctl.point)?;
            let eps = scatter::geometric_grid(opts.eps_min, opts.eps_max, opts.per_decade);
            let samples = scatter::escape_time(&m, &ctl.chart, &x, &ctl.theta, &eps, &opts.controls)?;
            let returned = samples.iter().filter(|e| e.tau.is_some()).count();
            max_abs_h = samples.iter().map(|e| e.max_abs_h).fold(max_abs_h, f64::max);
            control_ok = returned == 0;
            json!({"metric": m.name(), "samples": samples.len(), "returned": returned, "cap": opts.controls.flow.max_length, "pass": control_ok})
        }
    };
    let pass = max_rel_err <= tolerance && control_ok;
    let result = json!({
        "tolerance": tolerance,
        "max_rel_err": max_rel_err,
        "recoveries": recoveries,
        "control": control_body,
        "max_abs_h": max_abs_h,
        "pass": pass,
    });
    let status = if pass { Status::Pass } else { Status::InvariantViolation };
    Ok(Outcome { status, result, max_abs_h: Some(max_abs_h), tables: vec![] })
}

fn normalize_jets(
    s: &Scenario,
    pairs: &PairSource,
    options: &jetlab::NormalizeOptions,
    order: usize,
    jet_tol: f64,
    psi_tol: f64,
) -> Result<Outcome, CliError> {
    type Prepared = (String, MetricField, MetricField, TruncatedSeries);
    let prepared: Vec<Prepared> = match pairs {
        PairSource::Synthetic { count, amplitude } => {
            let n = match &s.metric {
                Some(MetricSpec::Minkowski { n }) => *n,
                _ => return Err(CliError::Config("synthetic pairs are built around a minkowski metric".into())),
            };
            (0..*count as u64)
                .into_par_iter()
                .map(|i| {
                    let seed = s.seed.wrapping_add(i);
                    let p = jetlab::synthetic_pair(n, seed, *amplitude)?;
                    Ok((format!("seed-{seed}"), p.g, p.g_hat, TruncatedSeries::constant(n, 1, 1.0)))
                })
                .collect::<Result<_, nullscatter::Error>>()?
        }
        PairSource::Given { mu0 } => {
            let g = s.metric()?;
            let g_hat = s
                .second_metric
                .as_ref()
                .ok_or_else(|| CliError::Config("normalize-jets needs second_metric".into()))?
                .build()?;
            let n = g.dim() - 1;
            vec![(g_hat.name().to_string(), g, g_hat, poly(mu0, n)?)]
        }
    };
    if order > options.normal_order {
        return Err(CliError::Config(format!("compare_order {order} exceeds normal_order {}", options.normal_order)));
    }
    let runs = prepared
        .par_iter()
        .map(|(label, g, g_hat, mu0)| {
            let r = jetlab::normalize_pair(g, g_hat, mu0, options)?;
            let cmp = jetlab::jet_compare(&r.jet, &r.reference, order, jet_tol)?;
            Ok((label.clone(), r, cmp))
        })
        .collect::<Result<Vec<_>, nullscatter::Error>>()?;
    let mut pass = true;
    let mut entries = Vec::new();
    for (label, r, cmp) in &runs {
        let psi_ok = r.psi_normal_defect <= psi_tol;
        pass &= cmp.pass && psi_ok;
        entries.push(json!({
            "pair": label,
            "comparison": cmp,
            "psi_normal_defect": r.psi_normal_defect,
            "psi_ok": psi_ok,
            "normal_block_residual": r.jet.normal_block_residual,
            "iterations": r.iterations,
            "degree": r.degree,
            "jet": r.jet,
            "reference": r.reference,
        }));
    }
    let max_diff = runs
        .iter()
        .flat_map(|(_, _, c)| c.orders.iter().map(|o| o.max_diff))
        .fold(0.0, f64::max);
    let max_psi = runs.iter().map(|(_, r, _)| r.psi_normal_defect).fold(0.0, f64::max);
    let result = json!({
        "compare_order": order,
        "jet_tol": jet_tol,
        "psi_tol": psi_tol,
        "pairs": entries,
        "max_jet_diff": max_diff,
        "max_psi_normal_defect": max_psi,
        "pass": pass,
    });
    let status = if pass { Status::Pass } else { Status::InvariantViolation };
    Ok(Outcome { status, result, max_abs_h: None, tables: vec![] })
}

fn random_symmetric(rng: &mut ChaCha8Rng, d: usize, amp: f64) -> DMatrix<f64> {
    let mut f = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v = rng.gen_range(-amp..amp);
            f[(i, j)] = v;
            f[(j, i)] = v;
        }
    }
    f
}

fn lightcone(s: &Scenario, roundtrip: Option<&LightconeRoundtrip>, data: Option<&LightconeData>) -> Result<Outcome, CliError> {
    if roundtrip.is_none() && data.is_none() {
        return Err(CliError::Config("lightcone-fit needs roundtrip or data".into()));
    }
    let mut pass = true;
    let mut result = serde_json::Map::new();
    if let Some(rt) = roundtrip {
        if rt.dims.is_empty() || rt.dims.iter().any(|&d| d < 3) {
            return Err(CliError::Config("lightcone dims must be at least 3".into()));
        }
        let trials = (0..rt.trials as u64)
            .into_par_iter()
            .map(|i| {
                let d = rt.dims[i as usize % rt.dims.len()];
                let g0 = families::eta(d);
                let mut rng = ChaCha8Rng::seed_from_u64(s.seed.wrapping_add(i));
                let c = rng.gen_range(-rt.c_range..rt.c_range);
                let mut f = random_symmetric(&mut rng, d, rt.f_amplitude);
                f[(0, 0)] = 0.0;
                let h = &g0 * c + &f;
                let mut vs = jetlab::null_samples(&g0, rt.null_samples, &mut rng)?;
                if rt.include_timelike {
                    vs.push(DVector::from_fn(d, |k, _| if k == 0 { 1.0 } else { 0.0 }));
                }
                let samples: Vec<LightConeSample> = vs
                    .iter()
                    .map(|v| LightConeSample { v: v.iter().copied().collect(), q: linalg::bilinear(&h, v, v) })
                    .collect();
                let fit = jetlab::lightcone_fit(&g0, &samples)?;
                let c_err = if fit.c_identifiable { (fit.c - c).abs() } else { f64::NAN };
                let f_err = (fit.f_matrix() - &f).amax();
                let identity = jetlab::cone_identity_defect(&(fit.h_full_matrix() - fit.f_matrix()));
                let ok = (!fit.c_identifiable || c_err <= rt.tol_c) && f_err <= rt.tol_f && identity <= rt.tol_identity;
                Ok(json!({
                    "trial": i, "dim": d, "c_true": c, "c_fit": fit.c, "c_identifiable": fit.c_identifiable,
                    "c_err": if c_err.is_nan() { Value::Null } else { json!(c_err) },
                    "f_err": f_err, "identity_defect": identity, "residual": fit.residual, "pass": ok,
                }))
            })
            .collect::<Result<Vec<Value>, nullscatter::Error>>()?;
        let worst = |key: &str| trials.iter().filter_map(|t| t[key].as_f64()).fold(0.0, f64::max);
        let rt_pass = trials.iter().all(|t| t["pass"] == json!(true));
        pass &= rt_pass;
        result.insert(
            "roundtrip".into(),
            json!({
                "trials": trials.len(),
                "max_c_err": worst("c_err"),
                "max_f_err": worst("f_err"),
                "max_identity_defect": worst("identity_defect"),
                "pass": rt_pass,
                "runs": trials,
            }),
        );
    }
    if let Some(dt) = data {
        let d = dt.g0.len();
        if dt.g0.iter().any(|r| r.len() != d) {
            return Err(CliError::Config("g0 must be square".into()));
        }
        let g0 = DMatrix::from_fn(d, d, |i, j| dt.g0[i][j]);
        let fit = jetlab::lightcone_fit(&g0, &dt.samples)?;
        result.insert("fit".into(), to_value(&fit));
    }
    result.insert("pass".into(), json!(pass));
    let status = if pass { Status::Pass } else { Status::InvariantViolation };
    Ok(Outcome { status, result: Value::Object(result), max_abs_h: None, tables: vec![] })
}

fn sensitivity(
    s: &Scenario,
    point: &[f64],
    h: &[Vec<f64>],
    orders: &[u32],
    options: &crate::scenario::SensitivityOptionsSpec,
) -> Result<Outcome, CliError> {
    let m = s.metric()?;
    let chart = s.chart()?;
    let d = m.dim();
    let x = vector(point, d, "sensitivity base point")?;
    if h.len() != d || h.iter().any(|r| r.len() != d) {
        return Err(CliError::Config(format!("h must be {d}x{d}")));
    }
    let hm = DMatrix::from_fn(d, d, |i, j| h[i][j]);
    let mut csv = String::from("k,eps,discrepancy,control,rejected\n");
    let mut reports = Vec::new();
    let mut pass = true;
    let mut conclusive = true;
    let mut rejected = 0;
    let mut total = 0;
    for &k in orders {
        let opts = options.resolve(k, &s.tolerances);
        let r = jetlab::sensitivity_experiment(&m, &hm, &chart, &x, &opts)?;
        for p in &r.points {
            let f = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
            csv.push_str(&format!(
                "{k},{:e},{},{},{}\n",
                p.eps,
                f(p.discrepancy),
                f(p.control),
                p.rejected.as_deref().unwrap_or("").replace(',', ";")
            ));
            total += 1;
            rejected += p.rejected.is_some() as usize;
        }
        pass &= r.pass;
        conclusive &= r.conclusive;
        reports.push(r);
    }
    let status = if !conclusive || quota_exceeded(rejected, total, s.tolerances.failure_quota().max(0.25)) {
        Status::DomainFailure
    } else if pass {
        Status::Pass
    } else {
        Status::InvariantViolation
    };
    let max_abs_h = reports.iter().map(|r| r.max_abs_h).fold(0.0, f64::max);
    let result = json!({"metric": m.name(), "point": point, "reports": reports, "max_abs_h": max_abs_h, "pass": pass});
    Ok(Outcome { status, result, max_abs_h: Some(max_abs_h), tables: vec![("csv".into(), csv)] })
}
