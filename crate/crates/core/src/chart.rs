//! Boundary charts: a defining function `F` with `F > 0` in the interior,
//! boundary parameterizations and tangent frames.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::metric::MetricField;
use crate::pseries::TruncatedSeries;

/// Defining functions of the shipped boundary geometries.
///
/// The disk charts live on `ℝ_t × D` with `D` the unit disk. With
/// `exterior = true` the interior convention is flipped (`F > 0` outside the
/// disk). The polar chart uses `F = (1 − r²)/2`, which keeps chords through the
/// axis well defined by continuing to `r < 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryChart {
    /// `{xⁿ ≥ 0}` in `ℝ^{1+n}`, `F = xⁿ`.
    HalfSpace { n: usize },
    /// Coordinates `(t, x, y)`, `F = ±(1 − x² − y²)/2`.
    DiskCartesian {
        #[serde(default)]
        exterior: bool,
    },
    /// Coordinates `(t, r, θ)`, `F = ±(1 − r²)/2`.
    DiskPolar {
        #[serde(default)]
        exterior: bool,
    },
}

impl BoundaryChart {
    pub fn dim(&self) -> usize {
        match self {
            Self::HalfSpace { n } => n + 1,
            _ => 3,
        }
    }

    /// Number of boundary parameters.
    pub fn boundary_dim(&self) -> usize {
        self.dim() - 1
    }

    fn sign(&self) -> f64 {
        match self {
            Self::DiskCartesian { exterior: true } | Self::DiskPolar { exterior: true } => -1.0,
            _ => 1.0,
        }
    }

    pub fn characteristic_length(&self) -> f64 {
        1.0
    }

    pub fn f(&self, x: &DVector<f64>) -> f64 {
        match self {
            Self::HalfSpace { n } => x[*n],
            Self::DiskCartesian { .. } => self.sign() * 0.5 * (1.0 - x[1] * x[1] - x[2] * x[2]),
            Self::DiskPolar { .. } => self.sign() * 0.5 * (1.0 - x[1] * x[1]),
        }
    }

    /// `dF` as a covector.
    pub fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut d = DVector::zeros(self.dim());
        match self {
            Self::HalfSpace { n } => d[*n] = 1.0,
            Self::DiskCartesian { .. } => {
                d[1] = -self.sign() * x[1];
                d[2] = -self.sign() * x[2];
            }
            Self::DiskPolar { .. } => d[1] = -self.sign() * x[1],
        }
        d
    }

    /// Coordinate Hessian `∂_i ∂_j F`.
    pub fn hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dim(), self.dim());
        match self {
            Self::HalfSpace { .. } => {}
            Self::DiskCartesian { .. } => {
                h[(1, 1)] = -self.sign();
                h[(2, 2)] = -self.sign();
            }
            Self::DiskPolar { .. } => h[(1, 1)] = -self.sign(),
        }
        h
    }

    /// Boundary point with parameters `p` (`(x⁰, …, x^{n−1})`, or `(t, θ)` on the disk).
    pub fn point(&self, p: &[f64]) -> Result<DVector<f64>> {
        if p.len() != self.boundary_dim() {
            return Err(Error::Arity { expected: self.boundary_dim(), got: p.len() });
        }
        Ok(match self {
            Self::HalfSpace { n } => {
                let mut x = DVector::zeros(n + 1);
                x.rows_mut(0, *n).copy_from_slice(p);
                x
            }
            Self::DiskCartesian { .. } => DVector::from_vec(vec![p[0], p[1].cos(), p[1].sin()]),
            Self::DiskPolar { .. } => DVector::from_vec(vec![p[0], 1.0, p[1]]),
        })
    }

    /// Inverse of [`point`](Self::point) for points on (or near) the boundary.
    pub fn params(&self, x: &DVector<f64>) -> Vec<f64> {
        match self {
            Self::HalfSpace { n } => x.rows(0, *n).iter().copied().collect(),
            Self::DiskCartesian { .. } => vec![x[0], x[2].atan2(x[1])],
            Self::DiskPolar { .. } => vec![x[0], x[2]],
        }
    }

    /// Coordinate vectors `∂z/∂p_α` of the boundary parameterization at `x`.
    pub fn tangent_basis(&self, x: &DVector<f64>) -> Vec<DVector<f64>> {
        let d = self.dim();
        let unit = |i: usize| {
            let mut e = DVector::zeros(d);
            e[i] = 1.0;
            e
        };
        match self {
            Self::HalfSpace { n } => (0..*n).map(unit).collect(),
            Self::DiskCartesian { .. } => {
                let th = x[2].atan2(x[1]);
                vec![unit(0), DVector::from_vec(vec![0.0, -th.sin(), th.cos()])]
            }
            Self::DiskPolar { .. } => vec![unit(0), unit(2)],
        }
    }

    /// `g⁻¹ dF / |dF|_g`: the unit inward normal.
    pub fn unit_normal(&self, m: &MetricField, x: &DVector<f64>) -> Result<DVector<f64>> {
        let ginv = m.inverse(x)?;
        let df = self.grad(x);
        let q = linalg::bilinear(&ginv, &df, &df);
        if !(q > 0.0) {
            return Err(Error::Signature(format!(
                "boundary is not timelike at {:?}: g⁻¹(dF, dF) = {q:e}",
                x.as_slice()
            )));
        }
        Ok(ginv * df / q.sqrt())
    }

    /// `dF / |dF|_g`: the unit conormal.
    pub fn unit_conormal(&self, m: &MetricField, x: &DVector<f64>) -> Result<DVector<f64>> {
        let ginv = m.inverse(x)?;
        let df = self.grad(x);
        let q = linalg::bilinear(&ginv, &df, &df);
        if !(q > 0.0) {
            return Err(Error::Signature(format!("boundary is not timelike at {:?}", x.as_slice())));
        }
        Ok(df / q.sqrt())
    }

    /// Tangent basis together with the unit inward normal.
    pub fn tangent_frame(&self, m: &MetricField, x: &DVector<f64>) -> Result<(Vec<DVector<f64>>, DVector<f64>)> {
        Ok((self.tangent_basis(x), self.unit_normal(m, x)?))
    }

    /// Boundary parameterization `u ↦ z(p₀ + u)` as series in the offsets `u`.
    pub fn param_series(&self, p0: &[f64], degree: u32) -> Result<Vec<TruncatedSeries>> {
        let nv = self.boundary_dim();
        if p0.len() != nv {
            return Err(Error::Arity { expected: nv, got: p0.len() });
        }
        let var = |i| TruncatedSeries::variable(nv, degree, i);
        let cst = |c| TruncatedSeries::constant(nv, degree, c);
        Ok(match self {
            Self::HalfSpace { n } => {
                let mut z: Vec<_> = (0..*n).map(|i| var(i).add_constant(p0[i])).collect();
                z.push(TruncatedSeries::zero(nv, degree));
                z
            }
            Self::DiskCartesian { .. } => {
                let th = p0[1];
                // Taylor coefficients of cos and sin at θ₀
                let (c, s) = (th.cos(), th.sin());
                let mut tc = Vec::new();
                let mut ts = Vec::new();
                let mut fact = 1.0;
                for k in 0..=degree {
                    if k > 0 {
                        fact *= k as f64;
                    }
                    let (dc, ds) = match k % 4 {
                        0 => (c, s),
                        1 => (-s, c),
                        2 => (-c, -s),
                        _ => (s, -c),
                    };
                    tc.push(dc / fact);
                    ts.push(ds / fact);
                }
                let u = var(1);
                vec![var(0).add_constant(p0[0]), u.apply_univariate(&tc), u.apply_univariate(&ts)]
            }
            Self::DiskPolar { .. } => vec![var(0).add_constant(p0[0]), cst(1.0), var(1).add_constant(p0[1])],
        })
    }

    /// `F` as a polynomial in the chart coordinates.
    pub fn defining_series(&self, degree: u32) -> TruncatedSeries {
        let d = self.dim();
        let k = degree.max(2);
        let sq = |i| {
            let v = TruncatedSeries::variable(d, k, i);
            &v * &v
        };
        match self {
            Self::HalfSpace { n } => TruncatedSeries::variable(d, k, *n),
            Self::DiskCartesian { .. } => (&sq(1) + &sq(2)).scale(-0.5 * self.sign()).add_constant(0.5 * self.sign()),
            Self::DiskPolar { .. } => sq(1).scale(-0.5 * self.sign()).add_constant(0.5 * self.sign()),
        }
        .into_exact()
    }

    /// Orthogonal projection of a vector at a boundary point onto `T∂M`.
    pub fn project_vector(&self, m: &MetricField, x: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        let nu = self.unit_normal(m, x)?;
        let g = m.eval(x);
        Ok(w - &nu * linalg::bilinear(&g, w, &nu))
    }

    /// Tangential part `η′ = η − g⁻¹(η, n) n` of a covector at a boundary point.
    pub fn project_covector(&self, m: &MetricField, x: &DVector<f64>, eta: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.unit_conormal(m, x)?;
        let ginv = m.inverse(x)?;
        Ok(eta - &n * linalg::bilinear(&ginv, eta, &n))
    }

    /// Components of a tangent vector in the parameter basis.
    pub fn tangent_components(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<Vec<f64>> {
        let basis = self.tangent_basis(x);
        let a = DMatrix::from_columns(&basis);
        let (c, _) = linalg::least_squares(&a, v)?;
        Ok(c.iter().copied().collect())
    }

    /// Tangent vector with parameter-basis components `c`.
    pub fn tangent_vector(&self, x: &DVector<f64>, c: &[f64]) -> DVector<f64> {
        self.tangent_basis(x)
            .iter()
            .zip(c)
            .fold(DVector::zeros(self.dim()), |acc, (e, ci)| acc + e * *ci)
    }
}
