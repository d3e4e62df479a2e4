//! How strongly the scattering relation sees a perturbation `F^k h` that
//! vanishes to order `k` at the boundary, as rays approach grazing.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::BoundaryChart;
use crate::error::{Error, Result};
use crate::geodesic::FlowControls;
use crate::metric::{families, MetricField};
use crate::scatter::{self, ScatterControls, ScatterRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensitivityOptions {
    pub k: u32,
    pub eps_min: f64,
    pub eps_max: f64,
    pub per_decade: usize,
    /// Spatial direction of the grazing rays in the boundary frame.
    pub theta: Vec<f64>,
    /// The control metric is `(1 + control_factor · F^k) g`.
    pub control_factor: f64,
    /// Discrepancies below `noise_factor × floor` count as noise.
    pub noise_factor: f64,
    pub slope_margin: f64,
    pub controls: ScatterControls,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        let flow = FlowControls { rtol: 1e-12, atol: 1e-14, ..FlowControls::default() };
        Self {
            k: 1,
            eps_min: 5e-3,
            eps_max: 0.5,
            per_decade: 4,
            theta: vec![1.0],
            control_factor: 0.5,
            noise_factor: 10.0,
            slope_margin: 0.3,
            controls: ScatterControls { flow, ..ScatterControls::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitivityPoint {
    pub eps: f64,
    pub discrepancy: Option<f64>,
    pub control: Option<f64>,
    pub rejected: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub k: u32,
    pub points: Vec<SensitivityPoint>,
    pub noise_floor: f64,
    /// Log-log slope of the discrepancy against `ε` above the noise floor.
    pub slope: Option<f64>,
    /// Decades of `ε` covered by the points above the floor.
    pub decades: f64,
    pub monotone: bool,
    pub conclusive: bool,
    pub control_max: f64,
    pub control_at_floor: bool,
    /// Largest `|H|` over all integrated rays.
    pub max_abs_h: f64,
    pub pass: bool,
}

fn record_distance(a: &ScatterRecord, b: &ScatterRecord) -> f64 {
    let d = |u: &[f64], w: &[f64]| u.iter().zip(w).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    d(&a.exit_x, &b.exit_x).max(d(&a.exit, &b.exit))
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (num, den) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx).powi(2)));
    num / den
}

/// Compares `S` of `g` and of `g + F^k h` along `v′_ε = e₀ + √(1−ε²) θ` at the
/// boundary point `x`; the control is the conformal `(1 + c F^k) g`, which has
/// the same scattering relation.
pub fn sensitivity_experiment(
    g: &MetricField,
    h: &DMatrix<f64>,
    chart: &BoundaryChart,
    x: &DVector<f64>,
    opts: &SensitivityOptions,
) -> Result<SensitivityReport> {
    if opts.k == 0 {
        return Err(Error::InvalidInput("vanishing order k must be at least 1".into()));
    }
    if !(opts.eps_min > 0.0 && opts.eps_max < 1.0 && opts.eps_min < opts.eps_max) {
        return Err(Error::InvalidInput("ε range must satisfy 0 < eps_min < eps_max < 1".into()));
    }
    let base: Vec<f64> = g.series().map(|s| s.base.iter().copied().collect()).unwrap_or_else(|| vec![0.0; g.dim()]);
    let weight = chart.defining_series(opts.k.max(2) * 2).powi(opts.k).shifted(&base);
    let perturbed = families::perturbed(g, &weight, h)?;
    let control = families::conformal(g, &weight.scale(opts.control_factor).add_constant(1.0))?;

    let (frame, _) = scatter::boundary_frame(g, chart, x)?;
    let dir = scatter::null_direction(&frame, &opts.theta)? - &frame[0];
    let loose = ScatterControls {
        flow: FlowControls { rtol: opts.controls.flow.rtol * 100.0, atol: opts.controls.flow.atol * 100.0, ..opts.controls.flow.clone() },
        ..opts.controls.clone()
    };
    let eps = scatter::geometric_grid(opts.eps_min, opts.eps_max, opts.per_decade);
    let rows: Vec<(SensitivityPoint, f64, f64)> = eps
        .par_iter()
        .map(|&e| {
            let vt = &frame[0] + &dir * (1.0 - e * e).sqrt();
            let run = || -> Result<(f64, f64, f64, f64)> {
                let s0 = scatter::scattering_s(g, chart, x, &vt, &opts.controls)?;
                let s1 = scatter::scattering_s(&perturbed, chart, x, &vt, &opts.controls)?;
                let s2 = scatter::scattering_s(&control, chart, x, &vt, &opts.controls)?;
                let s3 = scatter::scattering_s(g, chart, x, &vt, &loose)?;
                let h = [&s0, &s1, &s2, &s3].iter().map(|r| r.max_abs_h).fold(0.0, f64::max);
                Ok((record_distance(&s0, &s1), record_distance(&s0, &s2), record_distance(&s0, &s3), h))
            };
            match run() {
                Ok((d, c, noise, h)) => {
                    (SensitivityPoint { eps: e, discrepancy: Some(d), control: Some(c), rejected: None }, noise, h)
                }
                Err(err) => (
                    SensitivityPoint { eps: e, discrepancy: None, control: None, rejected: Some(err.to_string()) },
                    0.0,
                    0.0,
                ),
            }
        })
        .collect();
    // exit points are resolved no better than the event tolerance
    let noise_floor = rows.iter().map(|r| r.1).fold(opts.controls.flow.tol_event, f64::max);
    let max_abs_h = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let points: Vec<SensitivityPoint> = rows.into_iter().map(|r| r.0).collect();

    let threshold = opts.noise_factor * noise_floor;
    let above: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| p.discrepancy.filter(|d| *d > threshold).map(|d| (p.eps, d)))
        .collect();
    let conclusive = above.len() >= 4;
    let monotone = above.windows(2).all(|w| w[1].1 >= 0.99 * w[0].1);
    let logs: Vec<(f64, f64)> = above.iter().map(|(e, d)| (e.ln(), d.ln())).collect();
    let slope = conclusive.then(|| least_squares_slope(&logs));
    let decades = match (above.first(), above.last()) {
        (Some(a), Some(b)) => (b.0 / a.0).log10(),
        _ => 0.0,
    };
    let control_max = points.iter().filter_map(|p| p.control).fold(0.0, f64::max);
    let control_at_floor = control_max <= threshold;
    let pass = conclusive
        && monotone
        && control_at_floor
        && slope.is_some_and(|s| s >= opts.k as f64 - opts.slope_margin);
    Ok(SensitivityReport {
        k: opts.k,
        points,
        noise_floor,
        slope,
        decades,
        monotone,
        conclusive,
        control_max,
        control_at_floor,
        max_abs_h,
        pass,
    })
}
