//! Scenario files: one JSON document describing a metric, a chart, an
//! experiment and tolerance overrides.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use nullscatter::chart::BoundaryChart;
use nullscatter::gauge::{FanSpec, GaugeTransform};
use nullscatter::geodesic::FlowControls;
use nullscatter::jetlab::{NormalizeOptions, SensitivityOptions, SffOptions};
use nullscatter::metric::{families, MetricField};
use nullscatter::pseries::TruncatedSeries;
use nullscatter::scatter::ScatterControls;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// One polynomial term `c · x^e`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub c: f64,
    pub e: Vec<u32>,
}

pub type Poly = Vec<Term>;

/// Builds a polynomial in `dim` chart coordinates.
pub fn poly(p: &Poly, dim: usize) -> Result<TruncatedSeries, CliError> {
    for t in p {
        if t.e.len() != dim {
            return Err(CliError::Config(format!("polynomial term {:?} needs {dim} exponents", t.e)));
        }
    }
    let deg = p.iter().map(|t| t.e.iter().sum::<u32>()).max().unwrap_or(0).max(families::SERIES_DEGREE);
    let s = TruncatedSeries::from_terms(dim, deg, p.iter().map(|t| (t.e.clone(), t.c)))
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(s.into_exact())
}

fn matrix(rows: &[Vec<f64>], dim: usize, what: &str) -> Result<DMatrix<f64>, CliError> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(CliError::Config(format!("{what} must be a {dim}x{dim} matrix")));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSpec {
    Minkowski { n: usize },
    DiskCylinderCartesian,
    DiskCylinderPolar,
    Conformal { base: Box<MetricSpec>, mu: Poly },
    Perturbed { base: Box<MetricSpec>, weight: Poly, h: Vec<Vec<f64>> },
    PerturbedMinkowski { n: usize, k: u32, h: Vec<Vec<f64>> },
    BlockForm { n: usize, tangential: Vec<Vec<Poly>> },
    Polynomial { components: Vec<Vec<Poly>>, witness: Vec<f64> },
    Pullback { base: Box<MetricSpec>, gauge: GaugeSpec },
}

impl MetricSpec {
    pub fn build(&self) -> Result<MetricField, CliError> {
        Ok(match self {
            Self::Minkowski { n } => families::minkowski(*n),
            Self::DiskCylinderCartesian => families::disk_cylinder_cartesian(),
            Self::DiskCylinderPolar => families::disk_cylinder_polar(),
            Self::Conformal { base, mu } => {
                let b = base.build()?;
                families::conformal(&b, &poly(mu, b.dim())?)?
            }
            Self::Perturbed { base, weight, h } => {
                let b = base.build()?;
                families::perturbed(&b, &poly(weight, b.dim())?, &matrix(h, b.dim(), "h")?)?
            }
            Self::PerturbedMinkowski { n, k, h } => families::perturbed_minkowski(*n, *k, &matrix(h, n + 1, "h")?)?,
            Self::BlockForm { n, tangential } => {
                if tangential.len() != *n || tangential.iter().any(|r| r.len() != *n) {
                    return Err(CliError::Config(format!("tangential block must be {n}x{n}")));
                }
                let entries: Vec<Vec<TruncatedSeries>> = tangential
                    .iter()
                    .map(|r| r.iter().map(|p| poly(p, n + 1)).collect())
                    .collect::<Result<_, _>>()?;
                let deg = entries.iter().flatten().map(|s| s.max_total_degree()).max().unwrap_or(families::SERIES_DEGREE);
                let block = nullscatter::pseries::SeriesMatrix::from_fn(*n, *n, |i, j| {
                    entries[i][j].with_degree(deg).into_exact()
                });
                families::block_form(&block)?
            }
            Self::Polynomial { components, witness } => {
                let d = witness.len();
                if components.len() != d || components.iter().any(|r| r.len() != d) {
                    return Err(CliError::Config(format!("components must be {d}x{d}")));
                }
                let entries: Vec<Vec<TruncatedSeries>> =
                    components.iter().map(|r| r.iter().map(|p| poly(p, d)).collect()).collect::<Result<_, _>>()?;
                let deg = entries.iter().flatten().map(|s| s.max_total_degree()).max().unwrap_or(families::SERIES_DEGREE);
                let comps = nullscatter::pseries::SeriesMatrix::from_fn(d, d, |i, j| entries[i][j].with_degree(deg).into_exact());
                families::polynomial("polynomial", comps, DVector::from_vec(witness.clone()))?
            }
            Self::Pullback { base, gauge } => {
                let b = base.build()?;
                nullscatter::gauge::pullback_metric(&gauge.build(b.dim())?, &b)?
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GaugeSpec {
    Identity,
    /// `(Id, μ)`.
    Conformal { mu: Poly },
    /// `(ψ, 1)`.
    Diffeomorphism { psi: Vec<Poly> },
    /// `(ψ, μ)` with `μ` a function of the target point.
    Polynomial { psi: Vec<Poly>, mu: Poly },
    /// `(t, x) ↦ (t, factor · x)`; not boundary fixing (used as a negative control).
    /// Scaling `t` too would only rescale flat metrics by a constant.
    Dilation { factor: f64 },
    /// `outer ∘ inner`.
    Composite { inner: Box<GaugeSpec>, outer: Box<GaugeSpec> },
}

impl GaugeSpec {
    pub fn build(&self, dim: usize) -> Result<GaugeTransform, CliError> {
        let polys = |ps: &[Poly]| -> Result<Vec<TruncatedSeries>, CliError> {
            if ps.len() != dim {
                return Err(CliError::Config(format!("ψ needs {dim} components")));
            }
            let s: Vec<TruncatedSeries> = ps.iter().map(|p| poly(p, dim)).collect::<Result<_, _>>()?;
            let deg = s.iter().map(|x| x.max_total_degree()).max().unwrap_or(1);
            Ok(s.into_iter().map(|x| x.with_degree(deg).into_exact()).collect())
        };
        Ok(match self {
            Self::Identity => GaugeTransform::identity(dim),
            Self::Conformal { mu } => GaugeTransform::conformal(&poly(mu, dim)?)?,
            Self::Diffeomorphism { psi } => GaugeTransform::diffeomorphism(polys(psi)?)?,
            Self::Polynomial { psi, mu } => GaugeTransform::polynomial("polynomial", polys(psi)?, &poly(mu, dim)?)?,
            Self::Dilation { factor } => {
                let psi = (0..dim)
                    .map(|i| TruncatedSeries::variable(dim, 1, i).scale(if i == 0 { 1.0 } else { *factor }).into_exact())
                    .collect();
                GaugeTransform::diffeomorphism(psi)?.with_name(format!("dilation({factor})"))
            }
            Self::Composite { inner, outer } => outer.build(dim)?.after(&inner.build(dim)?)?,
        })
    }
}

/// Optional tolerance overrides; unset entries keep the library defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rtol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_init: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_length: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_band: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_event: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_graze: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_null: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_tangent: Option<f64>,
    /// Fraction of rays allowed to end in a domain failure.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure_quota: Option<f64>,
}

impl Tolerances {
    /// Applies `key=value`; unknown keys are configuration errors.
    pub fn set(&mut self, key: &str, value: f64) -> Result<(), CliError> {
        let mut v = serde_json::to_value(&*self).expect("tolerances serialize");
        v.as_object_mut().expect("object").insert(key.to_string(), serde_json::json!(value));
        *self = serde_json::from_value(v).map_err(|e| CliError::Config(format!("tolerance override {key}: {e}")))?;
        Ok(())
    }

    pub fn controls(&self) -> ScatterControls {
        let d = ScatterControls::default();
        let f = &d.flow;
        let flow = FlowControls {
            rtol: self.rtol.unwrap_or(f.rtol),
            atol: self.atol.unwrap_or(f.atol),
            h_init: self.h_init.unwrap_or(f.h_init),
            h_max: self.h_max.unwrap_or(f.h_max),
            h_min: self.h_min.unwrap_or(f.h_min),
            max_length: self.max_length.unwrap_or(f.max_length),
            tol_h: self.tol_h.unwrap_or(f.tol_h),
            s_band: self.s_band.unwrap_or(f.s_band),
            tol_event: self.tol_event.unwrap_or(f.tol_event),
            tol_graze: self.tol_graze.unwrap_or(f.tol_graze),
            ..f.clone()
        };
        ScatterControls {
            flow,
            tol_null: self.tol_null.unwrap_or(d.tol_null),
            tol_tangent: self.tol_tangent.unwrap_or(d.tol_tangent),
            keep_trace: false,
        }
    }

    pub fn failure_quota(&self) -> f64 {
        self.failure_quota.unwrap_or(0.05)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    #[default]
    Pass,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CheckSpec {
    SsharpInvariance {
        gauge: GaugeSpec,
        #[serde(default)]
        expect: Expectation,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tolerance: Option<f64>,
    },
    SInvariance {
        gauge: GaugeSpec,
        #[serde(default)]
        expect: Expectation,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tolerance: Option<f64>,
    },
    STransformRule {
        mu: Poly,
        #[serde(default)]
        expect: Expectation,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tolerance: Option<f64>,
    },
    TwoPair {
        gauge: GaugeSpec,
        mu: Poly,
        #[serde(default)]
        expect: Expectation,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tolerance: Option<f64>,
    },
    Reparameterization {
        mu: Poly,
        chords: usize,
        #[serde(default)]
        expect: Expectation,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tolerance: Option<f64>,
    },
}

/// Flat-boundary style control: escape rays that must not return.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscapeControl {
    pub metric: MetricSpec,
    pub chart: BoundaryChart,
    /// Boundary parameters of the base point.
    pub point: Vec<f64>,
    pub theta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum PairSource {
    /// Random block-form `g` near the scenario's Minkowski metric and
    /// `ĝ = μ̄ ψ̄*g`; pair `i` uses seed `seed + i`.
    Synthetic { count: usize, amplitude: f64 },
    /// `metric` and `second_metric` with boundary factor `μ₀` (boundary variables).
    Given { mu0: Poly },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightconeData {
    pub g0: Vec<Vec<f64>>,
    pub samples: Vec<nullscatter::jetlab::LightConeSample>,
}

fn default_true() -> bool {
    true
}

fn default_jet_tol() -> f64 {
    1e-6
}

fn default_compare_order() -> usize {
    4
}

fn default_psi_tol() -> f64 {
    1e-10
}

fn default_sff_tol() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    Trace {
        x: Vec<f64>,
        v: Vec<f64>,
        #[serde(default = "default_true")]
        to_boundary: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        length: Option<f64>,
        #[serde(default)]
        reversibility: bool,
    },
    ScatterMap {
        #[serde(default)]
        fan: FanSpec,
        #[serde(default)]
        covector: bool,
    },
    VerifyGauge {
        #[serde(default)]
        fan: FanSpec,
        checks: Vec<CheckSpec>,
    },
    RecoverSff {
        points: Vec<Vec<f64>>,
        #[serde(default)]
        options: SffOptionsSpec,
        #[serde(default = "default_sff_tol")]
        tolerance: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        control: Option<EscapeControl>,
    },
    NormalizeJets {
        pairs: PairSource,
        #[serde(default)]
        options: NormalizeOptions,
        #[serde(default = "default_compare_order")]
        compare_order: usize,
        #[serde(default = "default_jet_tol")]
        jet_tol: f64,
        #[serde(default = "default_psi_tol")]
        psi_tol: f64,
    },
    LightconeFit {
        #[serde(default)]
        roundtrip: Option<LightconeRoundtrip>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data: Option<LightconeData>,
    },
    Sensitivity {
        point: Vec<f64>,
        h: Vec<Vec<f64>>,
        orders: Vec<u32>,
        #[serde(default)]
        options: SensitivityOptionsSpec,
    },
}

impl Experiment {
    pub fn command(&self) -> &'static str {
        match self {
            Self::Trace { .. } => "trace",
            Self::ScatterMap { .. } => "scatter-map",
            Self::VerifyGauge { .. } => "verify-gauge",
            Self::RecoverSff { .. } => "recover-sff",
            Self::NormalizeJets { .. } => "normalize-jets",
            Self::LightconeFit { .. } => "lightcone-fit",
            Self::Sensitivity { .. } => "sensitivity",
        }
    }
}

/// Random `(c, f)` round trips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LightconeRoundtrip {
    pub trials: usize,
    pub dims: Vec<usize>,
    pub null_samples: usize,
    /// Adds `e₀` to the samples so that `c` is identifiable.
    pub include_timelike: bool,
    pub c_range: f64,
    pub f_amplitude: f64,
    pub tol_c: f64,
    pub tol_f: f64,
    pub tol_identity: f64,
}

impl Default for LightconeRoundtrip {
    fn default() -> Self {
        Self {
            trials: 100,
            dims: vec![3, 4],
            null_samples: 40,
            include_timelike: true,
            c_range: 5.0,
            f_amplitude: 1.0,
            tol_c: 1e-8,
            tol_f: 1e-6,
            tol_identity: 1e-8,
        }
    }
}

/// Escape-fit settings; the integrator controls come from the tolerances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SffOptionsSpec {
    pub eps_min: f64,
    pub eps_max: f64,
    pub per_decade: usize,
    pub directions: usize,
}

impl Default for SffOptionsSpec {
    fn default() -> Self {
        let d = SffOptions::default();
        Self { eps_min: d.eps_min, eps_max: d.eps_max, per_decade: d.per_decade, directions: d.directions }
    }
}

impl SffOptionsSpec {
    pub fn resolve(&self, controls: ScatterControls) -> SffOptions {
        SffOptions {
            eps_min: self.eps_min,
            eps_max: self.eps_max,
            per_decade: self.per_decade,
            directions: self.directions,
            controls,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityOptionsSpec {
    pub eps_min: f64,
    pub eps_max: f64,
    pub per_decade: usize,
    pub theta: Vec<f64>,
    pub control_factor: f64,
    pub noise_factor: f64,
    pub slope_margin: f64,
}

impl Default for SensitivityOptionsSpec {
    fn default() -> Self {
        let d = SensitivityOptions::default();
        Self {
            eps_min: d.eps_min,
            eps_max: d.eps_max,
            per_decade: d.per_decade,
            theta: d.theta,
            control_factor: d.control_factor,
            noise_factor: d.noise_factor,
            slope_margin: d.slope_margin,
        }
    }
}

impl SensitivityOptionsSpec {
    /// Unset integrator tolerances default to the tighter values this
    /// experiment needs to see small discrepancies.
    pub fn resolve(&self, k: u32, tol: &Tolerances) -> SensitivityOptions {
        let d = SensitivityOptions::default();
        let mut controls = tol.controls();
        controls.flow.rtol = tol.rtol.unwrap_or(d.controls.flow.rtol);
        controls.flow.atol = tol.atol.unwrap_or(d.controls.flow.atol);
        SensitivityOptions {
            k,
            eps_min: self.eps_min,
            eps_max: self.eps_max,
            per_decade: self.per_decade,
            theta: self.theta.clone(),
            control_factor: self.control_factor,
            noise_factor: self.noise_factor,
            slope_margin: self.slope_margin,
            controls,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

fn default_seed() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_metric: Option<MetricSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chart: Option<BoundaryChart>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputSpec,
    pub experiment: Experiment,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("scenario: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let s = Self::parse(&text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Checks that every referenced family and transform can be built.
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(m) = &self.metric {
            let built = m.build()?;
            if let Some(c) = &self.chart {
                if c.dim() != built.dim() {
                    return Err(CliError::Config(format!("chart dim {} vs metric dim {}", c.dim(), built.dim())));
                }
            }
        }
        if let Some(m) = &self.second_metric {
            m.build()?;
        }
        Ok(())
    }

    /// Replaces every seed with `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        match &mut self.experiment {
            Experiment::ScatterMap { fan, .. } | Experiment::VerifyGauge { fan, .. } => fan.seed = seed,
            _ => {}
        }
    }

    pub fn metric(&self) -> Result<MetricField, CliError> {
        self.metric
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("{} needs a metric", self.experiment.command())))?
            .build()
    }

    pub fn chart(&self) -> Result<BoundaryChart, CliError> {
        self.chart
            .ok_or_else(|| CliError::Config(format!("{} needs a boundary chart", self.experiment.command())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "name": "sample",
        "metric": {"family": "conformal", "base": {"family": "disk_cylinder_cartesian"},
                   "mu": [{"c": 1.0, "e": [0, 0, 0]}, {"c": 0.3, "e": [0, 0, 1]}]},
        "chart": {"kind": "disk_cartesian"},
        "tolerances": {"rtol": 1e-11},
        "experiment": {"kind": "verify-gauge", "fan": {"count": 5},
                       "checks": [{"check": "ssharp-invariance", "gauge": {"kind": "dilation", "factor": 1.1}, "expect": "fail"}]}
    }"#;

    #[test]
    fn round_trip() {
        let s = Scenario::parse(SAMPLE).unwrap();
        s.validate().unwrap();
        assert_eq!(Scenario::parse(&s.to_json()).unwrap(), s);
        assert_eq!(s.experiment.command(), "verify-gauge");
        assert_eq!(s.seed, 1);
    }

    #[test]
    fn unknown_family_is_a_config_error() {
        let bad = SAMPLE.replace("disk_cylinder_cartesian", "warp_drive");
        assert!(matches!(Scenario::parse(&bad), Err(CliError::Config(_))));
    }

    #[test]
    fn tolerance_overrides() {
        let mut t = Tolerances::default();
        t.set("rtol", 1e-12).unwrap();
        assert_eq!(t.controls().flow.rtol, 1e-12);
        assert!(t.set("not_a_tolerance", 1.0).is_err());
    }

    #[test]
    fn polynomial_arity_is_checked() {
        let p = vec![Term { c: 1.0, e: vec![0, 1] }];
        assert!(poly(&p, 3).is_err());
        assert_eq!(poly(&p, 2).unwrap().eval(&[0.0, 2.0]), 2.0);
    }
}
