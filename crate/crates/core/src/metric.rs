//! Lorentzian metric fields, their derivatives, Christoffel symbols and the
//! null-geodesic Hamiltonian `H(x, ξ) = ½ g^{ij}(x) ξ_i ξ_j`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::pseries::{SeriesMatrix, TruncatedSeries};

/// Causal-classification band around zero.
pub const TOL_NULL: f64 = 1e-9;
/// Smallest admissible `|det g|`.
pub const TOL_DET: f64 = 1e-14;

pub type MetricFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// Per-component Taylor representation of a metric at `base`; the series
/// variables are the offsets `x - base`.
#[derive(Clone, Debug)]
pub struct MetricSeries {
    pub base: DVector<f64>,
    pub comps: SeriesMatrix,
    /// The series is the metric itself (a polynomial), not just a truncation.
    pub exact: bool,
}

impl MetricSeries {
    pub fn degree(&self) -> u32 {
        self.comps.get(0, 0).max_total_degree()
    }

    /// Series centered at `point` with degree cap `degree`.
    ///
    /// Exact polynomial series are shifted exactly. Truncated series can only
    /// be used at (numerically) their own base point.
    pub fn recentered(&self, point: &DVector<f64>, degree: u32) -> Result<SeriesMatrix> {
        let offset = point - &self.base;
        if self.exact {
            let c: Vec<f64> = offset.iter().copied().collect();
            let cap = degree.max(self.degree());
            return Ok(self
                .comps
                .map(|s| s.with_degree(cap).into_exact().shifted(&c).with_degree(degree)));
        }
        if offset.amax() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "truncated metric series at {:?} cannot be used at {:?}",
                self.base.as_slice(),
                point.as_slice()
            )));
        }
        if degree > self.degree() {
            return Err(Error::InvalidInput(format!(
                "metric series has degree {} but degree {degree} was requested",
                self.degree()
            )));
        }
        Ok(self.comps.with_degree(degree))
    }
}

/// A Lorentzian metric on a coordinate chart.
#[derive(Clone)]
pub struct MetricField {
    name: String,
    dim: usize,
    eval: Arc<MetricFn>,
    series: Option<Arc<MetricSeries>>,
    witness: DVector<f64>,
}

impl fmt::Debug for MetricField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricField")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("series", &self.series.as_ref().map(|s| (s.degree(), s.exact)))
            .field("signature_witness", &self.witness.as_slice())
            .finish()
    }
}

/// Christoffel symbols `Γ^i_{jk}`, stored densely.
#[derive(Clone, Debug, PartialEq)]
pub struct ChristoffelTensor {
    dim: usize,
    data: Vec<f64>,
}

impl ChristoffelTensor {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![0.0; dim * dim * dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `Γ^i_{jk}`.
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.dim + j) * self.dim + k]
    }

    fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.dim + j) * self.dim + k] = v;
    }

    /// `Γ^i_{jk} u^j w^k` for every `i`.
    pub fn contract(&self, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim, |i, _| {
            let mut acc = 0.0;
            for j in 0..self.dim {
                for k in 0..self.dim {
                    acc += self.get(i, j, k) * u[j] * w[k];
                }
            }
            acc
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CausalCharacter {
    Timelike,
    Lightlike,
    Spacelike,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    Vector,
    Covector,
}

impl MetricField {
    /// Wraps an evaluator; checks symmetry and Lorentzian signature at `witness`.
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        eval: Arc<MetricFn>,
        series: Option<MetricSeries>,
        witness: DVector<f64>,
    ) -> Result<Self> {
        let m = Self {
            name: name.into(),
            dim,
            eval,
            series: series.map(Arc::new),
            witness,
        };
        let g = m.eval(&m.witness);
        if g.nrows() != dim || g.ncols() != dim {
            return Err(Error::ShapeMismatch(format!("metric returned {}x{} for dim {dim}", g.nrows(), g.ncols())));
        }
        if linalg::symmetry_defect(&g) > 1e-12 * g.amax().max(1.0) {
            return Err(Error::InvalidInput(format!("metric {} is not symmetric", m.name)));
        }
        if !linalg::is_lorentzian(&g) {
            return Err(Error::Signature(format!(
                "metric {} is not Lorentzian at witness {:?}",
                m.name,
                m.witness.as_slice()
            )));
        }
        Ok(m)
    }

    /// Metric given exactly by polynomial components centered at `base`.
    pub fn from_polynomial(
        name: impl Into<String>,
        base: DVector<f64>,
        comps: SeriesMatrix,
        witness: DVector<f64>,
    ) -> Result<Self> {
        let dim = comps.nrows();
        let series = MetricSeries { base: base.clone(), comps: comps.clone(), exact: true };
        let eval: Arc<MetricFn> = Arc::new(move |x: &DVector<f64>| {
            let y: Vec<f64> = (x - &base).iter().copied().collect();
            let g = comps.eval(&y);
            (&g + g.transpose()) * 0.5
        });
        Self::new(name, dim, eval, Some(series), witness)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn series(&self) -> Option<&MetricSeries> {
        self.series.as_deref()
    }

    pub fn signature_witness(&self) -> &DVector<f64> {
        &self.witness
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_series(mut self, series: MetricSeries) -> Self {
        self.series = Some(Arc::new(series));
        self
    }

    pub fn evaluator(&self) -> Arc<MetricFn> {
        self.eval.clone()
    }

    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.eval)(x)
    }

    /// `g^{ij}(x)`.
    pub fn inverse(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let g = self.eval(x);
        let det = g.determinant();
        if !(det.abs() > TOL_DET) {
            return Err(Error::DegenerateMetric { point: x.iter().copied().collect(), det });
        }
        g.try_inverse()
            .ok_or_else(|| Error::DegenerateMetric { point: x.iter().copied().collect(), det })
    }

    /// `∂_k g` for `k = 0..dim`: exact from the series when it represents the
    /// metric, central differences otherwise.
    pub fn derivatives(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        match self.series.as_deref() {
            Some(s) if s.exact => {
                let y: Vec<f64> = (x - &s.base).iter().copied().collect();
                let mut d = vec![DMatrix::zeros(self.dim, self.dim); self.dim];
                for i in 0..self.dim {
                    for j in i..self.dim {
                        let (_, grad) = s.comps.get(i, j).eval_with_gradient(&y);
                        for (k, gk) in grad.iter().enumerate() {
                            d[k][(i, j)] = *gk;
                            d[k][(j, i)] = *gk;
                        }
                    }
                }
                d
            }
            _ => self.fd_derivatives(x),
        }
    }

    fn fd_derivatives(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let h = (1e-5 * x.norm()).max(1e-5);
        (0..self.dim)
            .map(|k| {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                (self.eval(&xp) - self.eval(&xm)) / (2.0 * h)
            })
            .collect()
    }

    /// `Γ^i_{jk} = ½ g^{il}(∂_j g_{lk} + ∂_k g_{lj} − ∂_l g_{jk})`.
    pub fn christoffel(&self, x: &DVector<f64>) -> Result<ChristoffelTensor> {
        let ginv = self.inverse(x)?;
        let d = self.derivatives(x);
        let n = self.dim;
        let mut gamma = ChristoffelTensor::zeros(n);
        for j in 0..n {
            for k in j..n {
                // lowered symbol Γ_{l jk}
                let lowered: Vec<f64> = (0..n)
                    .map(|l| 0.5 * (d[j][(l, k)] + d[k][(l, j)] - d[l][(j, k)]))
                    .collect();
                for i in 0..n {
                    let v: f64 = (0..n).map(|l| ginv[(i, l)] * lowered[l]).sum();
                    gamma.set(i, j, k, v);
                    gamma.set(i, k, j, v);
                }
            }
        }
        Ok(gamma)
    }

    pub fn hamiltonian(&self, x: &DVector<f64>, xi: &DVector<f64>) -> Result<f64> {
        let ginv = self.inverse(x)?;
        Ok(0.5 * linalg::bilinear(&ginv, xi, xi))
    }

    /// Index lowering `v ↦ g v`.
    pub fn flat(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        self.eval(x) * v
    }

    /// Index raising `ξ ↦ g⁻¹ ξ`.
    pub fn sharp(&self, x: &DVector<f64>, xi: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.inverse(x)? * xi)
    }

    pub fn causal_classify(&self, x: &DVector<f64>, v: &DVector<f64>, kind: TensorKind) -> Result<CausalCharacter> {
        let q = match kind {
            TensorKind::Vector => linalg::bilinear(&self.eval(x), v, v),
            TensorKind::Covector => linalg::bilinear(&self.inverse(x)?, v, v),
        };
        Ok(classify_value(q, TOL_NULL))
    }
}

pub fn classify_value(q: f64, tol_null: f64) -> CausalCharacter {
    if q.abs() <= tol_null {
        CausalCharacter::Lightlike
    } else if q < 0.0 {
        CausalCharacter::Timelike
    } else {
        CausalCharacter::Spacelike
    }
}

pub mod families {
    //! Built-in metric families. All of them are polynomial in the chart
    //! coordinates, so their series representations are exact.

    use super::*;

    /// Default degree cap for family series.
    pub const SERIES_DEGREE: u32 = 4;

    fn origin(dim: usize) -> DVector<f64> {
        DVector::zeros(dim)
    }

    pub fn eta(dim: usize) -> DMatrix<f64> {
        let mut m = DMatrix::identity(dim, dim);
        m[(0, 0)] = -1.0;
        m
    }

    /// Minkowski metric `diag(-1, 1, ..., 1)` on `ℝ^{1+n}`.
    pub fn minkowski(n: usize) -> MetricField {
        let dim = n + 1;
        let comps = SeriesMatrix::from_constant(&eta(dim), dim, SERIES_DEGREE);
        MetricField::from_polynomial(format!("minkowski_1+{n}"), origin(dim), comps, origin(dim))
            .expect("Minkowski is Lorentzian")
    }

    /// `ℝ_t × unit disk` in Cartesian coordinates `(t, x, y)`: flat.
    pub fn disk_cylinder_cartesian() -> MetricField {
        minkowski(2).with_name("disk_cylinder_cartesian")
    }

    /// `ℝ_t × unit disk` in polar coordinates `(t, r, θ)`: `diag(-1, 1, r²)`.
    pub fn disk_cylinder_polar() -> MetricField {
        let nv = 3;
        let k = SERIES_DEGREE;
        let r = TruncatedSeries::variable(nv, k, 1);
        let comps = SeriesMatrix::from_fn(3, 3, |i, j| match (i, j) {
            (0, 0) => TruncatedSeries::constant(nv, k, -1.0),
            (1, 1) => TruncatedSeries::constant(nv, k, 1.0),
            (2, 2) => &r * &r,
            _ => TruncatedSeries::zero(nv, k),
        });
        MetricField::from_polynomial("disk_cylinder_polar", origin(3), comps, DVector::from_vec(vec![0.0, 1.0, 0.0]))
            .expect("polar disk metric is Lorentzian away from r = 0")
    }

    fn polynomial_series(m: &MetricField) -> Result<&MetricSeries> {
        match m.series() {
            Some(s) if s.exact => Ok(s),
            _ => Err(Error::InvalidInput(format!("metric {} has no exact polynomial series", m.name()))),
        }
    }

    fn lift_degree(s: &TruncatedSeries, degree: u32) -> TruncatedSeries {
        s.with_degree(degree).into_exact()
    }

    /// `μ(x) · g` for a polynomial base metric and a polynomial `μ > 0`
    /// written in the same variables (offsets from the base metric's base point).
    pub fn conformal(base: &MetricField, mu: &TruncatedSeries) -> Result<MetricField> {
        let s = polynomial_series(base)?;
        if mu.num_vars() != base.dim() {
            return Err(Error::ShapeMismatch(format!(
                "conformal factor has {} vars, metric dim {}",
                mu.num_vars(),
                base.dim()
            )));
        }
        let deg = s.comps.entries().iter().filter_map(|c| c.actual_degree()).max().unwrap_or(0)
            + mu.actual_degree().unwrap_or(0);
        let cap = deg.max(s.degree()).max(mu.max_total_degree());
        let mu_c = lift_degree(mu, cap);
        let comps = s.comps.map(|c| &lift_degree(c, cap) * &mu_c);
        let witness = base.signature_witness().clone();
        let y: Vec<f64> = (&witness - &s.base).iter().copied().collect();
        if !(mu.eval(&y) > 0.0) {
            return Err(Error::InvalidInput("conformal factor must be positive at the witness".into()));
        }
        MetricField::from_polynomial(format!("conformal({})", base.name()), s.base.clone(), comps, witness)
    }

    /// `g + w(x) h` with polynomial weight `w` and constant symmetric `h`.
    pub fn perturbed(base: &MetricField, weight: &TruncatedSeries, h: &DMatrix<f64>) -> Result<MetricField> {
        let s = polynomial_series(base)?;
        let dim = base.dim();
        if h.nrows() != dim || h.ncols() != dim || weight.num_vars() != dim {
            return Err(Error::ShapeMismatch("perturbation shape does not match metric".into()));
        }
        if linalg::symmetry_defect(h) > 0.0 {
            return Err(Error::InvalidInput("perturbation tensor must be symmetric".into()));
        }
        let cap = s.degree().max(weight.max_total_degree());
        let w = lift_degree(weight, cap);
        let comps = SeriesMatrix::from_fn(dim, dim, |i, j| &lift_degree(s.comps.get(i, j), cap) + &w.scale(h[(i, j)]));
        MetricField::from_polynomial(
            format!("perturbed({})", base.name()),
            s.base.clone(),
            comps,
            base.signature_witness().clone(),
        )
    }

    /// `η + (xⁿ)^k h` on the half-space chart.
    pub fn perturbed_minkowski(n: usize, k: u32, h: &DMatrix<f64>) -> Result<MetricField> {
        let dim = n + 1;
        let w = TruncatedSeries::variable(dim, k.max(SERIES_DEGREE), n).powi(k);
        perturbed(&minkowski(n), &w, h)
    }

    /// Block form `g_{αβ}(x) dx^α dx^β + (dxⁿ)²` from polynomial tangential entries.
    pub fn block_form(tangential: &SeriesMatrix) -> Result<MetricField> {
        let n = tangential.nrows();
        let dim = n + 1;
        let first = tangential.get(0, 0);
        if first.num_vars() != dim {
            return Err(Error::ShapeMismatch(format!(
                "tangential block entries must have {dim} vars, got {}",
                first.num_vars()
            )));
        }
        let (nv, k) = (dim, first.max_total_degree());
        let comps = SeriesMatrix::from_fn(dim, dim, |i, j| {
            if i < n && j < n {
                tangential.get(i, j).clone().into_exact()
            } else if i == n && j == n {
                TruncatedSeries::constant(nv, k, 1.0)
            } else {
                TruncatedSeries::zero(nv, k)
            }
        });
        MetricField::from_polynomial("block_form", origin(dim), comps, origin(dim))
    }

    /// Generic polynomial metric centered at the origin.
    pub fn polynomial(name: &str, comps: SeriesMatrix, witness: DVector<f64>) -> Result<MetricField> {
        let dim = comps.nrows();
        MetricField::from_polynomial(name, origin(dim), comps, witness)
    }
}
