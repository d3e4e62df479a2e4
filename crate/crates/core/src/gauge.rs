//! Gauge transformations `(ψ, μ)`: boundary-fixing diffeomorphisms and
//! positive conformal factors acting by `ĝ ↦ μ(ψ(x)) · Dψᵀ ĝ(ψ(x)) Dψ`, and
//! numerical checks of the invariance laws of the scattering relations.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::BoundaryChart;
use crate::error::{Error, Result};
use crate::geodesic::{self, FlowControls, PhasePoint};
use crate::linalg;
use crate::metric::{families, MetricField, MetricFn, MetricSeries};
use crate::pseries::{SeriesMatrix, TruncatedSeries};
use crate::scatter::{self, ScatterControls, ScatterRecord};

/// Default tolerance of gauge comparisons (two flows are compared).
pub const TOL_GAUGE: f64 = 2e-6;
/// Degree cap of truncated pullback series.
pub const PULLBACK_SERIES_DEGREE: u32 = 8;
/// Composed polynomial degrees above this are not expanded exactly.
const MAX_EXACT_DEGREE: u32 = 12;

type MapFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type JacFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;
type ScalarFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;

/// Polynomial form of a transform: components of `ψ` and the source-side
/// factor `x ↦ μ(ψ(x))`, all in chart coordinates.
#[derive(Clone, Debug)]
pub struct GaugeSeries {
    pub psi: Vec<TruncatedSeries>,
    pub mu_src: TruncatedSeries,
}

/// A pair `(ψ, μ)`. The factor is stored source-side, `μ_src = μ ∘ ψ`, so that
/// composition never needs `ψ⁻¹`.
#[derive(Clone)]
pub struct GaugeTransform {
    name: String,
    dim: usize,
    psi: Arc<MapFn>,
    jac: Arc<JacFn>,
    mu_src: Arc<ScalarFn>,
    series: Option<GaugeSeries>,
}

impl std::fmt::Debug for GaugeTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GaugeTransform").field("name", &self.name).field("dim", &self.dim).finish()
    }
}

fn poly_eval(ps: &[TruncatedSeries], x: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(ps.len(), ps.iter().map(|p| p.eval(x.as_slice())))
}

fn poly_jacobian(ps: &[TruncatedSeries], x: &DVector<f64>) -> DMatrix<f64> {
    let d = x.len();
    let mut j = DMatrix::zeros(ps.len(), d);
    for (i, p) in ps.iter().enumerate() {
        let (_, g) = p.eval_with_gradient(x.as_slice());
        for (k, gk) in g.iter().enumerate() {
            j[(i, k)] = *gk;
        }
    }
    j
}

fn exact_degree(s: &TruncatedSeries) -> u32 {
    s.actual_degree().unwrap_or(0)
}

/// Exact `f ∘ args` for polynomials (caps raised as needed).
fn compose_exact(fs: &[TruncatedSeries], args: &[TruncatedSeries]) -> Result<Vec<TruncatedSeries>> {
    let df = fs.iter().map(exact_degree).max().unwrap_or(0);
    let da = args.iter().map(exact_degree).max().unwrap_or(0).max(1);
    let cap = (df * da).max(1);
    let fs: Vec<_> = fs.iter().map(|f| f.with_degree(df.max(f.max_total_degree())).into_exact()).collect();
    let args: Vec<_> = args.iter().map(|a| a.with_degree(cap).into_exact()).collect();
    TruncatedSeries::compose_many(&fs, &args)
}

impl GaugeTransform {
    /// Transform from polynomial `ψ` (components in chart coordinates) and a
    /// target-side polynomial factor `μ`.
    pub fn polynomial(name: impl Into<String>, psi: Vec<TruncatedSeries>, mu: &TruncatedSeries) -> Result<Self> {
        let dim = psi.len();
        if psi.iter().any(|p| p.num_vars() != dim) || mu.num_vars() != dim {
            return Err(Error::ShapeMismatch("gauge polynomials must have one variable per coordinate".into()));
        }
        let mu_src = compose_exact(std::slice::from_ref(mu), &psi)?.pop().expect("one output");
        Ok(Self::from_series(name, GaugeSeries { psi, mu_src }))
    }

    /// Transform from polynomial `ψ` and a source-side factor `x ↦ μ(ψ(x))`.
    pub fn from_series(name: impl Into<String>, series: GaugeSeries) -> Self {
        let dim = series.psi.len();
        let (p1, p2, m) = (series.psi.clone(), series.psi.clone(), series.mu_src.clone());
        Self {
            name: name.into(),
            dim,
            psi: Arc::new(move |x| poly_eval(&p1, x)),
            jac: Arc::new(move |x| poly_jacobian(&p2, x)),
            mu_src: Arc::new(move |x| m.eval(x.as_slice())),
            series: Some(series),
        }
    }

    /// Transform from routines; `mu_src` is `x ↦ μ(ψ(x))`.
    pub fn from_fns(name: impl Into<String>, dim: usize, psi: Arc<MapFn>, jac: Arc<JacFn>, mu_src: Arc<ScalarFn>) -> Self {
        Self { name: name.into(), dim, psi, jac, mu_src, series: None }
    }

    pub fn identity(dim: usize) -> Self {
        let id: Vec<_> = (0..dim).map(|i| TruncatedSeries::variable(dim, 1, i)).collect();
        Self::from_series("identity", GaugeSeries { psi: id, mu_src: TruncatedSeries::constant(dim, 1, 1.0) })
    }

    /// `(Id, μ)`.
    pub fn conformal(mu: &TruncatedSeries) -> Result<Self> {
        let dim = mu.num_vars();
        let cap = exact_degree(mu).max(1);
        let id: Vec<_> = (0..dim).map(|i| TruncatedSeries::variable(dim, cap, i)).collect();
        Ok(Self::from_series("conformal", GaugeSeries { psi: id, mu_src: mu.with_degree(cap).into_exact() }))
    }

    /// `(ψ, 1)`.
    pub fn diffeomorphism(psi: Vec<TruncatedSeries>) -> Result<Self> {
        let dim = psi.len();
        let one = TruncatedSeries::constant(dim, 1, 1.0);
        Self::polynomial("diffeomorphism", psi, &one)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn series(&self) -> Option<&GaugeSeries> {
        self.series.as_ref()
    }

    pub fn psi(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.psi)(x)
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.jac)(x)
    }

    /// `μ(ψ(x))`.
    pub fn mu_src(&self, x: &DVector<f64>) -> f64 {
        (self.mu_src)(x)
    }

    /// `self` applied after `inner`: `ψ = ψ_self ∘ ψ_inner`,
    /// `μ_src(x) = μ_inner,src(x) · μ_self,src(ψ_inner(x))`, so that pulling back
    /// by the result equals pulling back by `self` and then by `inner`.
    pub fn after(&self, inner: &GaugeTransform) -> Result<Self> {
        if self.dim != inner.dim {
            return Err(Error::ShapeMismatch("composed transforms differ in dimension".into()));
        }
        let name = format!("{}∘{}", self.name, inner.name);
        if let (Some(a), Some(b)) = (&self.series, &inner.series) {
            let mut fs = a.psi.clone();
            fs.push(a.mu_src.clone());
            let mut composed = compose_exact(&fs, &b.psi)?;
            let outer_mu = composed.pop().expect("mu component");
            let cap = exact_degree(&outer_mu) + exact_degree(&b.mu_src);
            let mu_src = &b.mu_src.with_degree(cap) * &outer_mu.with_degree(cap);
            return Ok(Self::from_series(name, GaugeSeries { psi: composed, mu_src: mu_src.into_exact() }));
        }
        let (o, i) = (self.clone(), inner.clone());
        let (o2, i2) = (self.clone(), inner.clone());
        let (o3, i3) = (self.clone(), inner.clone());
        Ok(Self::from_fns(
            name,
            self.dim,
            Arc::new(move |x| o.psi(&i.psi(x))),
            Arc::new(move |x| o2.jacobian(&i2.psi(x)) * i2.jacobian(x)),
            Arc::new(move |x| i3.mu_src(x) * o3.mu_src(&i3.psi(x))),
        ))
    }

    /// Checks `ψ(z) = z` on boundary samples, `μ > 0` and `det Dψ ≠ 0` on
    /// interior samples.
    pub fn validate(&self, chart: &BoundaryChart, boundary: &[DVector<f64>], interior: &[DVector<f64>]) -> GaugeValidity {
        let fixes = boundary.iter().map(|z| (self.psi(z) - z).amax()).fold(0.0, f64::max);
        let all: Vec<&DVector<f64>> = boundary.iter().chain(interior).collect();
        let mu_min = all.iter().map(|x| self.mu_src(x)).fold(f64::INFINITY, f64::min);
        let det_min = all.iter().map(|x| self.jacobian(x).determinant().abs()).fold(f64::INFINITY, f64::min);
        let _ = chart;
        GaugeValidity {
            boundary_defect: fixes,
            mu_min,
            jacobian_det_min: det_min,
            valid: fixes <= 1e-12 && mu_min > 0.0 && det_min > 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaugeValidity {
    pub boundary_defect: f64,
    pub mu_min: f64,
    pub jacobian_det_min: f64,
    pub valid: bool,
}

/// `x ↦ μ(ψ(x)) · Dψᵀ ĝ(ψ(x)) Dψ`.
pub fn pullback_metric(t: &GaugeTransform, m: &MetricField) -> Result<MetricField> {
    pullback_metric_with(t, m, PULLBACK_SERIES_DEGREE)
}

/// As [`pullback_metric`]; when the composed polynomial would exceed a
/// moderate degree the series is truncated at `series_degree` around the
/// origin and marked inexact.
pub fn pullback_metric_with(t: &GaugeTransform, m: &MetricField, series_degree: u32) -> Result<MetricField> {
    if t.dim != m.dim() {
        return Err(Error::ShapeMismatch(format!("transform dim {} vs metric dim {}", t.dim, m.dim())));
    }
    let tt = t.clone();
    let mm = m.clone();
    let eval: Arc<MetricFn> = Arc::new(move |x: &DVector<f64>| {
        let j = tt.jacobian(x);
        let g = mm.eval(&tt.psi(x));
        let p = j.transpose() * g * &j * tt.mu_src(x);
        (&p + p.transpose()) * 0.5
    });
    let name = format!("{}*{}", t.name, m.name());
    let series = match (&t.series, m.series()) {
        (Some(ts), Some(ms)) if ms.exact => Some(pullback_series(ts, ms, series_degree)?),
        _ => None,
    };
    let witness = m.signature_witness().clone();
    let j = t.jacobian(&witness);
    if !(j.determinant().abs() > 1e-12) {
        return Err(Error::SingularInput(format!("Jacobian of {} is singular at the witness", t.name)));
    }
    // the pulled-back metric is certified where the base one is seen from
    let metric = MetricField::new(name, m.dim(), eval, None, witness);
    let metric = match metric {
        Ok(mf) => mf,
        Err(Error::Signature(_)) => {
            let w = DVector::zeros(m.dim());
            MetricField::new(format!("{}*{}", t.name, m.name()), m.dim(), metric_eval(t, m), None, w)?
        }
        Err(e) => return Err(e),
    };
    Ok(match series {
        Some(s) => metric.with_series(s),
        None => metric,
    })
}

fn metric_eval(t: &GaugeTransform, m: &MetricField) -> Arc<MetricFn> {
    let (tt, mm) = (t.clone(), m.clone());
    Arc::new(move |x: &DVector<f64>| {
        let j = tt.jacobian(x);
        let p = j.transpose() * mm.eval(&tt.psi(x)) * &j * tt.mu_src(x);
        (&p + p.transpose()) * 0.5
    })
}

fn pullback_series(ts: &GaugeSeries, ms: &MetricSeries, series_degree: u32) -> Result<MetricSeries> {
    let dim = ts.psi.len();
    let dg = ms.comps.entries().iter().map(exact_degree).max().unwrap_or(0);
    let dp = ts.psi.iter().map(exact_degree).max().unwrap_or(0).max(1);
    let dm = exact_degree(&ts.mu_src);
    let full = dg * dp + 2 * (dp - 1) + dm;
    let (cap, exact) = if full <= MAX_EXACT_DEGREE { (full.max(1), true) } else { (series_degree, false) };
    let offsets: Vec<TruncatedSeries> = ts
        .psi
        .iter()
        .enumerate()
        .map(|(i, p)| p.with_degree(cap).into_exact().add_constant(-ms.base[i]))
        .collect();
    let fs: Vec<TruncatedSeries> = ms
        .comps
        .entries()
        .iter()
        .map(|c| c.with_degree(dg.max(c.max_total_degree())).into_exact())
        .collect();
    let composed = TruncatedSeries::compose_many(&fs, &offsets)?;
    let g_psi = SeriesMatrix::from_fn(dim, dim, |i, j| composed[i * dim + j].clone());
    let jac = SeriesMatrix::from_fn(dim, dim, |i, k| {
        ts.psi[i].with_degree(cap + 1).into_exact().partial(k).expect("index in range").with_degree(cap)
    });
    let mu = ts.mu_src.with_degree(cap.max(ts.mu_src.max_total_degree())).into_exact().with_degree(cap);
    let comps = jac.transpose().checked_mul(&g_psi)?.checked_mul(&jac)?.scale_series(&mu)?;
    let comps = comps.map(|s| if exact { s.clone().into_exact() } else { s.clone() });
    Ok(MetricSeries { base: DVector::zeros(dim), comps, exact })
}

/// Per-ray outcome of a gauge comparison.
#[derive(Clone, Debug, Serialize)]
pub struct RayReport {
    pub index: usize,
    pub entry_x: Vec<f64>,
    pub status: String,
    pub exit_point_diff: f64,
    pub fiber_diff: f64,
    pub discrepancy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factor_expected: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factor_measured: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GaugeReport {
    pub check: String,
    pub metric: String,
    pub transform: String,
    pub tolerance: f64,
    pub rays: Vec<RayReport>,
    pub max_discrepancy: f64,
    pub mean_discrepancy: f64,
    pub max_abs_h: f64,
    pub counterexamples: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validity: Option<GaugeValidity>,
    pub pass: bool,
}

impl GaugeReport {
    fn assemble(
        check: &str,
        metric: &str,
        transform: &str,
        tolerance: f64,
        rays: Vec<RayReport>,
        max_abs_h: f64,
        validity: Option<GaugeValidity>,
    ) -> Self {
        let ok: Vec<f64> = rays.iter().filter(|r| r.status == "ok").map(|r| r.discrepancy).collect();
        let max_discrepancy = ok.iter().copied().fold(0.0, f64::max);
        let mean_discrepancy = if ok.is_empty() { 0.0 } else { ok.iter().sum::<f64>() / ok.len() as f64 };
        let counterexamples: Vec<usize> = rays
            .iter()
            .filter(|r| r.status != "ok" || !(r.discrepancy <= tolerance))
            .map(|r| r.index)
            .collect();
        let pass = counterexamples.is_empty();
        Self {
            check: check.into(),
            metric: metric.into(),
            transform: transform.into(),
            tolerance,
            rays,
            max_discrepancy,
            mean_discrepancy,
            max_abs_h,
            counterexamples,
            validity,
            pass,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn outcome_status(a: &Result<ScatterRecord>, b: &Result<ScatterRecord>) -> Option<String> {
    match (a, b) {
        (Ok(_), Ok(_)) => None,
        (Err(Error::Trapped { .. }), Ok(_)) => Some("trapped_first_only".into()),
        (Ok(_), Err(Error::Trapped { .. })) => Some("trapped_second_only".into()),
        (Err(Error::Trapped { .. }), Err(Error::Trapped { .. })) => Some("trapped_both".into()),
        (Err(e), _) | (_, Err(e)) => Some(format!("error: {e}")),
    }
}

/// A boundary covector with the given components on the parameter basis,
/// extended to `T*M` so that it annihilates the `g`-normal.
pub fn tangential_covector(m: &MetricField, chart: &BoundaryChart, x: &DVector<f64>, comps: &[f64]) -> Result<DVector<f64>> {
    let b = DMatrix::from_columns(&chart.tangent_basis(x));
    let gram = b.transpose() * &b;
    let inv = gram.try_inverse().ok_or_else(|| Error::SingularInput("degenerate tangent basis".into()))?;
    let zeta = &b * (inv * DVector::from_column_slice(comps));
    let df = chart.grad(x);
    let ginv = m.inverse(x)?;
    let lambda = linalg::bilinear(&ginv, &zeta, &df) / linalg::bilinear(&ginv, &df, &df);
    Ok(zeta - df * lambda)
}

/// Components `ξ(∂_α z)` of a covector on the parameter basis.
pub fn covector_components(chart: &BoundaryChart, x: &DVector<f64>, xi: &[f64]) -> Vec<f64> {
    let xi = DVector::from_column_slice(xi);
    chart.tangent_basis(x).iter().map(|e| e.dot(&xi)).collect()
}

/// One boundary sample of a fan: point and tangential vector with `v⁰ = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FanRay {
    pub x: DVector<f64>,
    pub v: DVector<f64>,
}

/// Parameters of a random fan of causal boundary directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FanSpec {
    pub count: usize,
    pub seed: u64,
    /// Range of the boundary time parameter.
    pub t_range: [f64; 2],
    /// Range of the remaining boundary parameters (angle on the disk).
    pub param_range: [f64; 2],
    /// Bound on the spatial speed `|a|` of `v′ = e₀ + a·e` in a unit frame.
    pub max_speed: f64,
}

impl Default for FanSpec {
    fn default() -> Self {
        Self { count: 200, seed: 1, t_range: [-1.0, 1.0], param_range: [0.0, std::f64::consts::TAU], max_speed: 0.95 }
    }
}

/// Random timelike tangential directions (in the metric `m`), normalized to `v⁰ = 1`.
pub fn sample_fan(m: &MetricField, chart: &BoundaryChart, spec: &FanSpec) -> Result<Vec<FanRay>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let nb = chart.boundary_dim();
    (0..spec.count)
        .map(|_| {
            let mut p = vec![rng.gen_range(spec.t_range[0]..=spec.t_range[1])];
            for _ in 1..nb {
                p.push(rng.gen_range(spec.param_range[0]..=spec.param_range[1]));
            }
            let x = chart.point(&p)?;
            let (frame, _) = scatter::boundary_frame(m, chart, &x)?;
            // uniform direction on the spatial unit sphere times a speed
            let dir: Vec<f64> = (1..nb).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-12);
            let speed = rng.gen_range(0.0..=spec.max_speed);
            let mut v = frame[0].clone();
            for (d, e) in dir.iter().zip(&frame[1..]) {
                v += e * (speed * d / norm);
            }
            let v0 = v[0];
            Ok(FanRay { x, v: v / v0 })
        })
        .collect()
}

/// Compares `S♯` for `m` and for `t*m` on the fan, using the same covectors
/// `ξ′ = v′♭` (lowered with `m`) in both metrics.
pub fn check_ssharp_invariance(
    m: &MetricField,
    t: &GaugeTransform,
    chart: &BoundaryChart,
    fan: &[FanRay],
    c: &ScatterControls,
    tol: f64,
) -> Result<GaugeReport> {
    let pulled = pullback_metric(t, m)?;
    let rays: Vec<(RayReport, f64)> = fan
        .par_iter()
        .enumerate()
        .map(|(i, ray)| -> Result<(RayReport, f64)> {
            let comps = covector_components(chart, &ray.x, m.flat(&ray.x, &ray.v).as_slice());
            let xa = tangential_covector(m, chart, &ray.x, &comps)?;
            let xb = tangential_covector(&pulled, chart, &ray.x, &comps)?;
            let a = scatter::scattering_ssharp(m, chart, &ray.x, &xa, c);
            let b = scatter::scattering_ssharp(&pulled, chart, &ray.x, &xb, c);
            Ok(compare_records(i, &ray.x, &a, &b, chart, true, None))
        })
        .collect::<Result<_>>()?;
    let validity = Some(t.validate(chart, &boundary_samples(chart, fan), &[]));
    let h = rays.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(GaugeReport::assemble(
        "ssharp_invariance",
        m.name(),
        t.name(),
        tol,
        rays.into_iter().map(|r| r.0).collect(),
        h,
        validity,
    ))
}

/// Compares `S` for `m` and for `t*m` on the fan.
pub fn check_s_invariance(
    m: &MetricField,
    t: &GaugeTransform,
    chart: &BoundaryChart,
    fan: &[FanRay],
    c: &ScatterControls,
    tol: f64,
) -> Result<GaugeReport> {
    let pulled = pullback_metric(t, m)?;
    let rays: Vec<(RayReport, f64)> = fan
        .par_iter()
        .enumerate()
        .map(|(i, ray)| {
            let a = scatter::scattering_s(m, chart, &ray.x, &ray.v, c);
            let b = scatter::scattering_s(&pulled, chart, &ray.x, &ray.v, c);
            compare_records(i, &ray.x, &a, &b, chart, false, None)
        })
        .collect();
    let validity = Some(t.validate(chart, &boundary_samples(chart, fan), &[]));
    let h = rays.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(GaugeReport::assemble("s_invariance", m.name(), t.name(), tol, rays.into_iter().map(|r| r.0).collect(), h, validity))
}

/// Checks `S_{μg}(x, v′) = (y, μ(x)/μ(y) · w′)` with `(y, w′) = S_g(x, v′)`.
pub fn check_s_transform_rule(
    m: &MetricField,
    mu: &TruncatedSeries,
    chart: &BoundaryChart,
    fan: &[FanRay],
    c: &ScatterControls,
    tol: f64,
) -> Result<GaugeReport> {
    let scaled = families::conformal(m, mu)?;
    let rays: Vec<(RayReport, f64)> = fan
        .par_iter()
        .enumerate()
        .map(|(i, ray)| {
            let a = scatter::scattering_s(m, chart, &ray.x, &ray.v, c);
            let b = scatter::scattering_s(&scaled, chart, &ray.x, &ray.v, c);
            let factor = a.as_ref().ok().map(|r| mu.eval(ray.x.as_slice()) / mu.eval(&r.exit_x));
            compare_records(i, &ray.x, &a, &b, chart, false, factor)
        })
        .collect();
    let h = rays.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(GaugeReport::assemble(
        "s_transform_rule",
        m.name(),
        "conformal",
        tol,
        rays.into_iter().map(|r| r.0).collect(),
        h,
        None,
    ))
}

/// Two-pair check: `S_{g̃} = S_g` for `g̃ = t*g`, and then `S_{μg̃} = S_{μg}`.
pub fn check_two_pair(
    m: &MetricField,
    t: &GaugeTransform,
    mu: &TruncatedSeries,
    chart: &BoundaryChart,
    fan: &[FanRay],
    c: &ScatterControls,
    tol: f64,
) -> Result<(GaugeReport, GaugeReport)> {
    let first = check_s_invariance(m, t, chart, fan, c, tol)?;
    let tilde = pullback_metric(t, m)?;
    let cf = GaugeTransform::conformal(mu)?;
    let a_metric = pullback_metric(&cf, m)?;
    let b_metric = pullback_metric(&cf, &tilde)?;
    let rays: Vec<(RayReport, f64)> = fan
        .par_iter()
        .enumerate()
        .map(|(i, ray)| {
            let a = scatter::scattering_s(&a_metric, chart, &ray.x, &ray.v, c);
            let b = scatter::scattering_s(&b_metric, chart, &ray.x, &ray.v, c);
            compare_records(i, &ray.x, &a, &b, chart, false, None)
        })
        .collect();
    let h = rays.iter().map(|r| r.1).fold(0.0, f64::max);
    let second = GaugeReport::assemble(
        "two_pair_conformal",
        m.name(),
        t.name(),
        tol,
        rays.into_iter().map(|r| r.0).collect(),
        h,
        None,
    );
    Ok((first, second))
}

fn boundary_samples(chart: &BoundaryChart, fan: &[FanRay]) -> Vec<DVector<f64>> {
    let _ = chart;
    fan.iter().map(|r| r.x.clone()).collect()
}

fn compare_records(
    index: usize,
    x: &DVector<f64>,
    a: &Result<ScatterRecord>,
    b: &Result<ScatterRecord>,
    chart: &BoundaryChart,
    covector: bool,
    factor: Option<f64>,
) -> (RayReport, f64) {
    let mut rep = RayReport {
        index,
        entry_x: x.iter().copied().collect(),
        status: "ok".into(),
        exit_point_diff: f64::NAN,
        fiber_diff: f64::NAN,
        discrepancy: f64::INFINITY,
        factor_expected: factor,
        factor_measured: None,
    };
    if let Some(s) = outcome_status(a, b) {
        rep.status = s;
        return (rep, 0.0);
    }
    let (a, b) = (a.as_ref().expect("checked"), b.as_ref().expect("checked"));
    let y = DVector::from_vec(a.exit_x.clone());
    // fibers compared on the parameter basis, scaled by the same input normalization
    let (fa, fb) = if covector {
        (covector_components(chart, &y, &a.exit), covector_components(chart, &y, &b.exit))
    } else {
        let yb = DVector::from_vec(b.exit_x.clone());
        (
            chart.tangent_components(&y, &DVector::from_vec(a.exit.clone())).unwrap_or_default(),
            chart.tangent_components(&yb, &DVector::from_vec(b.exit.clone())).unwrap_or_default(),
        )
    };
    let scale = a.fiber_scale.abs().max(1e-300);
    rep.exit_point_diff = diff(&a.exit_x, &b.exit_x);
    match factor {
        None => {
            rep.fiber_diff = diff(&fa, &fb) / scale;
            rep.discrepancy = rep.exit_point_diff.max(rep.fiber_diff);
        }
        Some(k) => {
            let na: f64 = fa.iter().map(|v| v * v).sum::<f64>();
            let measured = fa.iter().zip(&fb).map(|(p, q)| p * q).sum::<f64>() / na;
            rep.factor_measured = Some(measured);
            let predicted: Vec<f64> = fa.iter().map(|v| v * k).collect();
            let norm = predicted.iter().map(|v| v * v).sum::<f64>().sqrt();
            rep.fiber_diff = diff(&predicted, &fb) / norm;
            rep.discrepancy = rep.fiber_diff.max(rep.exit_point_diff);
        }
    }
    (rep, a.max_abs_h.max(b.max_abs_h))
}

#[derive(Clone, Debug, Serialize)]
pub struct ReparamReport {
    pub mu: String,
    pub samples: usize,
    /// `sup |x_{μg}(s̃(s)) − x_g(s)|` over the samples.
    pub sup_distance: f64,
    /// `sup |ξ_{μg}(s̃(s)) − ξ_g(s)|`.
    pub sup_covector_distance: f64,
    pub s_end: f64,
    pub s_tilde_end: f64,
    pub max_abs_h: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Flows `H` (with the quadrature `ds̃/ds = μ(x(s))` carried along) and the
/// Hamiltonian of `μ·g`, and compares the traces at matching parameters.
pub fn reparameterization_check(
    m: &MetricField,
    mu: &TruncatedSeries,
    chart: Option<&BoundaryChart>,
    start: &PhasePoint,
    c: &FlowControls,
    tol: f64,
) -> Result<ReparamReport> {
    let d = m.dim();
    let base = geodesic::hamiltonian_rhs(m);
    let aug = |y: &DVector<f64>| -> Result<DVector<f64>> {
        let core = base(&y.rows(0, 2 * d).into_owned())?;
        let mut out = DVector::zeros(2 * d + 1);
        out.rows_mut(0, 2 * d).copy_from(&core);
        out[2 * d] = mu.eval(&y.as_slice()[..d]);
        Ok(out)
    };
    let mut y0 = DVector::zeros(2 * d + 1);
    y0.rows_mut(0, d).copy_from(&start.x);
    y0.rows_mut(d, d).copy_from(&start.xi);
    let mut max_h: f64 = 0.0;
    let mut check = |s: f64, y: &DVector<f64>| -> Result<()> {
        let h = m.hamiltonian(&y.rows(0, d).into_owned(), &y.rows(d, d).into_owned())?.abs();
        max_h = max_h.max(h);
        if h > c.tol_h * start.xi.amax().powi(2).max(1.0) {
            return Err(Error::ConstraintDrift { value: h, tol: c.tol_h, s });
        }
        Ok(())
    };
    let ev_fn = |y: &DVector<f64>| chart.map_or(1.0, |ch| ch.f(&y.rows(0, d).into_owned()));
    let event: Option<&dyn Fn(&DVector<f64>) -> f64> = chart.map(|_| &ev_fn as &dyn Fn(&DVector<f64>) -> f64);
    let run = geodesic::integrate(&aug, &y0, 0.0, c, c.s_band, event, &[], &mut check)?;

    let scaled = families::conformal(m, mu)?;
    let stops: Vec<f64> = run.y.iter().map(|y| y[2 * d]).skip(1).collect();
    let s_tilde_end = *stops.last().unwrap_or(&0.0);
    let c2 = FlowControls { max_length: s_tilde_end * (1.0 + 1e-9) + 1e-9, ..c.clone() };
    let other = geodesic::flow_with_stops(&scaled, &PhasePoint::new(start.x.clone(), start.xi.clone()), &c2, &stops)?;
    max_h = max_h.max(other.max_abs_h);

    let mut sup_x: f64 = 0.0;
    let mut sup_xi: f64 = 0.0;
    let mut j = 0;
    for y in &run.y {
        let target = y[2 * d];
        while j < other.samples.len() && other.samples[j].s < target {
            j += 1;
        }
        let p = other
            .samples
            .get(j)
            .filter(|p| p.s == target)
            .ok_or_else(|| Error::InvalidInput(format!("reparameterized flow missed s̃ = {target}")))?;
        sup_x = sup_x.max((&p.x - y.rows(0, d)).amax());
        sup_xi = sup_xi.max((&p.xi - y.rows(d, d)).amax());
    }
    Ok(ReparamReport {
        mu: format!("{:?}", mu.terms()),
        samples: run.y.len(),
        sup_distance: sup_x,
        sup_covector_distance: sup_xi,
        s_end: *run.s.last().unwrap_or(&0.0),
        s_tilde_end,
        max_abs_h: max_h,
        tolerance: tol,
        pass: sup_x <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::TensorKind;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    fn disk() -> BoundaryChart {
        BoundaryChart::DiskCartesian { exterior: false }
    }

    fn poly(nv: usize, terms: &[(&[u32], f64)]) -> TruncatedSeries {
        let k = terms.iter().map(|(e, _)| e.iter().sum::<u32>()).max().unwrap_or(0).max(1);
        TruncatedSeries::from_terms(nv, k, terms.iter().map(|(e, c)| (e.to_vec(), *c))).unwrap()
    }

    fn samples() -> Vec<DVector<f64>> {
        (0..10).map(|i| v(&[0.1 * i as f64, 0.3 - 0.05 * i as f64, 0.02 * i as f64])).collect()
    }

    #[test]
    fn identity_pullback() {
        let m = families::disk_cylinder_cartesian();
        let p = pullback_metric(&GaugeTransform::identity(3), &m).unwrap();
        for x in samples() {
            assert!((p.eval(&x) - m.eval(&x)).amax() < 1e-15);
        }
    }

    #[test]
    fn constant_factor_halves_hamiltonian() {
        let m = families::minkowski(2);
        let p = pullback_metric(&GaugeTransform::conformal(&poly(3, &[(&[0, 0, 0], 2.0)])).unwrap(), &m).unwrap();
        let xi = v(&[0.3, -0.7, 0.2]);
        for x in samples() {
            assert!((p.eval(&x) - m.eval(&x) * 2.0).amax() < 1e-15);
            assert!((p.hamiltonian(&x, &xi).unwrap() - 0.5 * m.hamiltonian(&x, &xi).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn bump_pullback_closed_form() {
        // ψ(x) = x + (xⁿ)² b on the half-space
        let b = [0.3, -0.2, 0.5];
        let psi: Vec<_> = (0..3).map(|i| &TruncatedSeries::variable(3, 2, i) + &poly(3, &[(&[0, 0, 2], b[i])])).collect();
        let t = GaugeTransform::diffeomorphism(psi).unwrap();
        let m = families::minkowski(2);
        let p = pullback_metric(&t, &m).unwrap();
        assert!(p.series().unwrap().exact);
        for x in samples() {
            let mut j: DMatrix<f64> = DMatrix::identity(3, 3);
            for i in 0..3 {
                j[(i, 2)] += 2.0 * x[2] * b[i];
            }
            let expected = j.transpose() * families::eta(3) * &j;
            assert!((p.eval(&x) - &expected).amax() < 1e-10);
            let s = p.series().unwrap();
            assert!((s.comps.eval(x.as_slice()) - expected).amax() < 1e-10);
        }
        let boundary: Vec<_> = (0..5).map(|i| v(&[0.2 * i as f64, -0.1 * i as f64, 0.0])).collect();
        assert!(t.validate(&BoundaryChart::HalfSpace { n: 2 }, &boundary, &samples()).valid);
    }

    #[test]
    fn composition_is_sequential_pullback() {
        let m = families::perturbed_minkowski(2, 1, &DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0, 0.0]))
            .unwrap();
        let psi1: Vec<_> = (0..3).map(|i| &TruncatedSeries::variable(3, 2, i) + &poly(3, &[(&[1, 0, 1], 0.1 * (i as f64 + 1.0))])).collect();
        let t1 = GaugeTransform::polynomial("t1", psi1, &poly(3, &[(&[0, 0, 0], 1.0), (&[0, 0, 1], 0.2)])).unwrap();
        let psi2: Vec<_> = (0..3).map(|i| &TruncatedSeries::variable(3, 2, i) + &poly(3, &[(&[0, 1, 1], -0.05 * i as f64)])).collect();
        let t2 = GaugeTransform::polynomial("t2", psi2, &poly(3, &[(&[0, 0, 0], 1.0), (&[1, 0, 0], 0.1)])).unwrap();
        let seq = pullback_metric(&t1, &pullback_metric(&t2, &m).unwrap()).unwrap();
        let comp = pullback_metric(&t2.after(&t1).unwrap(), &m).unwrap();
        for x in samples() {
            assert!((seq.eval(&x) - comp.eval(&x)).amax() < 1e-10);
        }
    }

    #[test]
    fn null_cone_is_conformally_invariant() {
        let m = families::minkowski(2);
        let mu = poly(3, &[(&[0, 0, 0], 1.5), (&[1, 0, 0], 0.2), (&[0, 1, 1], 0.3)]);
        let p = families::conformal(&m, &mu).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = v(&[rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)]);
            let u = v(&[1.0, rng.gen_range(-1.5..1.5), 0.0]);
            assert_eq!(
                m.causal_classify(&x, &u, TensorKind::Vector).unwrap(),
                p.causal_classify(&x, &u, TensorKind::Vector).unwrap()
            );
        }
    }

    fn small_fan(m: &MetricField) -> Vec<FanRay> {
        sample_fan(m, &disk(), &FanSpec { count: 12, seed: 3, ..Default::default() }).unwrap()
    }

    #[test]
    fn ssharp_invariance_conformal_and_diffeo() {
        let m = families::disk_cylinder_cartesian();
        let c = ScatterControls::default();
        let mu = GaugeTransform::conformal(&poly(3, &[(&[0, 0, 0], 1.0), (&[0, 0, 1], 0.3)])).unwrap();
        let r = check_ssharp_invariance(&m, &mu, &disk(), &small_fan(&m), &c, TOL_GAUGE).unwrap();
        assert!(r.pass, "{}", r.max_discrepancy);

        // ψ = x + F² b with F = (1 − x² − y²)/2 fixes the circle
        let f = poly(3, &[(&[0, 0, 0], 0.5), (&[0, 2, 0], -0.5), (&[0, 0, 2], -0.5)]);
        let f2 = (&f.with_degree(4) * &f.with_degree(4)).into_exact();
        let b = [0.2, 0.1, -0.15];
        let psi: Vec<_> = (0..3).map(|i| &TruncatedSeries::variable(3, 4, i) + &f2.scale(b[i])).collect();
        let t = GaugeTransform::diffeomorphism(psi).unwrap();
        let r = check_ssharp_invariance(&m, &t, &disk(), &small_fan(&m), &c, TOL_GAUGE).unwrap();
        assert!(r.validity.as_ref().unwrap().valid);
        assert!(r.pass, "{}", r.max_discrepancy);
        let r = check_s_invariance(&m, &t, &disk(), &small_fan(&m), &c, TOL_GAUGE).unwrap();
        assert!(r.pass, "{}", r.max_discrepancy);
    }

    #[test]
    fn dilation_is_detected() {
        let m = families::disk_cylinder_cartesian();
        let psi = vec![
            TruncatedSeries::variable(3, 1, 0),
            TruncatedSeries::variable(3, 1, 1).scale(1.1),
            TruncatedSeries::variable(3, 1, 2).scale(1.1),
        ];
        let t = GaugeTransform::diffeomorphism(psi).unwrap();
        let r = check_ssharp_invariance(&m, &t, &disk(), &small_fan(&m), &ScatterControls::default(), TOL_GAUGE).unwrap();
        assert!(!r.validity.as_ref().unwrap().valid);
        assert!(!r.pass);
        assert!(r.max_discrepancy > 1e-3);
    }

    #[test]
    fn transform_rule_factors() {
        let m = families::disk_cylinder_cartesian();
        let c = ScatterControls::default();
        for mu in [poly(3, &[(&[0, 0, 0], 3.0)]), poly(3, &[(&[0, 0, 0], 1.0), (&[1, 0, 0], 0.2)])] {
            let r = check_s_transform_rule(&m, &mu, &disk(), &small_fan(&m), &c, 1e-6).unwrap();
            assert!(r.pass, "{}", r.max_discrepancy);
        }
        // diameter chord: t goes 0 → 2, factor 1/1.4
        let mu = poly(3, &[(&[0, 0, 0], 1.0), (&[1, 0, 0], 0.2)]);
        let fan = [FanRay { x: v(&[0.0, 1.0, 0.0]), v: v(&[1.0, 0.0, 0.0]) }];
        let r = check_s_transform_rule(&m, &mu, &disk(), &fan, &c, 1e-6).unwrap();
        assert!((r.rays[0].factor_expected.unwrap() - 1.0 / 1.4).abs() < 1e-9);
        assert!((r.rays[0].factor_measured.unwrap() - 1.0 / 1.4).abs() < 1e-8);

        // μ = 1 on the boundary: S is preserved
        let mu = poly(3, &[(&[0, 0, 0], 1.25), (&[0, 2, 0], -0.25), (&[0, 0, 2], -0.25)]);
        let t = GaugeTransform::conformal(&mu).unwrap();
        let r = check_s_invariance(&m, &t, &disk(), &small_fan(&m), &c, TOL_GAUGE).unwrap();
        assert!(r.pass, "{}", r.max_discrepancy);
    }

    #[test]
    fn two_pair() {
        let m = families::disk_cylinder_cartesian();
        let f = poly(3, &[(&[0, 0, 0], 0.5), (&[0, 2, 0], -0.5), (&[0, 0, 2], -0.5)]);
        let f2 = (&f.with_degree(4) * &f.with_degree(4)).into_exact();
        let psi: Vec<_> = (0..3).map(|i| &TruncatedSeries::variable(3, 4, i) + &f2.scale(0.1 * (i as f64 + 1.0))).collect();
        let t = GaugeTransform::diffeomorphism(psi).unwrap();
        let mu = poly(3, &[(&[0, 0, 0], 1.0), (&[0, 1, 0], 0.2)]);
        let (a, b) = check_two_pair(&m, &t, &mu, &disk(), &small_fan(&m), &ScatterControls::default(), TOL_GAUGE).unwrap();
        assert!(a.pass && b.pass, "{} {}", a.max_discrepancy, b.max_discrepancy);
    }

    #[test]
    fn reparameterization() {
        let m = families::disk_cylinder_cartesian();
        let start = PhasePoint::new(v(&[0.0, 1.0, 0.0]), v(&[-1.0, -0.8, 0.6]));
        let c = FlowControls::default();
        let one = poly(3, &[(&[0, 0, 0], 1.0)]);
        let r = reparameterization_check(&m, &one, Some(&disk()), &start, &c, 1e-7).unwrap();
        assert!(r.pass && r.sup_distance < 1e-14);
        let two = poly(3, &[(&[0, 0, 0], 2.0)]);
        let r = reparameterization_check(&m, &two, Some(&disk()), &start, &c, 1e-7).unwrap();
        assert!(r.pass, "{}", r.sup_distance);
        assert!((r.s_tilde_end - 2.0 * r.s_end).abs() < 1e-12);
        let lin = poly(3, &[(&[0, 0, 0], 1.0), (&[1, 0, 0], 0.2)]);
        let r = reparameterization_check(&m, &lin, Some(&disk()), &start, &c, 1e-7).unwrap();
        assert!(r.pass, "{}", r.sup_distance);
        // quadrature oracle: s̃ = s + 0.1 s² along t = s
        assert!((r.s_tilde_end - (r.s_end + 0.1 * r.s_end * r.s_end)).abs() < 1e-9);
    }
}
