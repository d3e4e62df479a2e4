//! Second fundamental form of the boundary: from the metric, and recovered
//! from escape times of near-grazing null geodesics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chart::BoundaryChart;
use crate::error::{Error, Result};
use crate::linalg;
use crate::metric::MetricField;
use crate::scatter::{self, EscapeFit, ScatterControls};

/// `Hess_g F` at `x`.
fn covariant_hessian(m: &MetricField, chart: &BoundaryChart, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let d = m.dim();
    let gamma = m.christoffel(x)?;
    let df = chart.grad(x);
    let mut h = chart.hessian(x);
    for i in 0..d {
        for j in 0..d {
            h[(i, j)] -= (0..d).map(|k| gamma.get(k, i, j) * df[k]).sum::<f64>();
        }
    }
    Ok(h)
}

fn conormal_length(m: &MetricField, chart: &BoundaryChart, x: &DVector<f64>) -> Result<f64> {
    let df = chart.grad(x);
    let q = linalg::bilinear(&m.inverse(x)?, &df, &df);
    if !(q > 0.0) {
        return Err(Error::Signature(format!("boundary is not timelike at {:?}", x.as_slice())));
    }
    Ok(q.sqrt())
}

/// `Γⁿ_{αβ}` in the parameter basis of the boundary: the form with
/// `Γⁿ(v, v) = −Hess_g F(v, v) / |dF|_g`. It is the normal Christoffel symbol
/// in boundary normal coordinates and does not depend on the choice of `F`.
pub fn second_fundamental_form(m: &MetricField, chart: &BoundaryChart, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let h = covariant_hessian(m, chart, x)?;
    let len = conormal_length(m, chart, x)?;
    let basis = chart.tangent_basis(x);
    let n = basis.len();
    Ok(DMatrix::from_fn(n, n, |a, b| -linalg::bilinear(&h, &basis[a], &basis[b]) / len))
}

/// `Q(v) = Γⁿ_{αβ} v^α v^β` for a tangent vector `v` at the boundary point `x`.
pub fn convexity_probe(m: &MetricField, chart: &BoundaryChart, x: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    if chart.f(x).abs() > 1e-10 {
        return Err(Error::InvalidInput(format!("{:?} is not on the boundary", x.as_slice())));
    }
    let df = chart.grad(x);
    if df.dot(v).abs() > 1e-9 * v.amax().max(1.0) {
        return Err(Error::InvalidInput(format!("{:?} is not tangent to the boundary", v.as_slice())));
    }
    let h = covariant_hessian(m, chart, x)?;
    Ok(-linalg::bilinear(&h, v, v) / conormal_length(m, chart, x)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SffOptions {
    pub eps_min: f64,
    pub eps_max: f64,
    pub per_decade: usize,
    /// Directions on the unit sphere of the spatial boundary frame; ignored
    /// for one spatial boundary dimension, where `θ = ±1`.
    pub directions: usize,
    pub controls: ScatterControls,
}

impl Default for SffOptions {
    fn default() -> Self {
        Self { eps_min: 1e-3, eps_max: 1e-2, per_decade: 12, directions: 8, controls: ScatterControls::default() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DirectionEstimate {
    pub theta: Vec<f64>,
    /// Null direction in chart coordinates.
    pub v0: Vec<f64>,
    pub q_scattering: f64,
    pub q_metric: f64,
    pub rel_err: f64,
    pub fit: EscapeFit,
}

#[derive(Clone, Debug, Serialize)]
pub struct SffRecovery {
    pub point: Vec<f64>,
    pub directions: Vec<DirectionEstimate>,
    /// Recovered `Γⁿ` in the parameter basis, normalized by `Γⁿ_{00} = 0`.
    pub recovered: Vec<Vec<f64>>,
    /// The metric's `Γⁿ` under the same normalization.
    pub reference: Vec<Vec<f64>>,
    pub max_rel_err: f64,
    pub matrix_err: f64,
    pub max_abs_h: f64,
}

fn sphere_directions(dim: usize, count: usize) -> Result<Vec<Vec<f64>>> {
    match dim {
        1 => Ok(vec![vec![1.0], vec![-1.0]]),
        2 => Ok((0..count.max(3))
            .map(|j| {
                let a = std::f64::consts::TAU * j as f64 / count.max(3) as f64;
                vec![a.cos(), a.sin()]
            })
            .collect()),
        3 => {
            // Fibonacci sphere
            let k = count.max(6);
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            Ok((0..k)
                .map(|j| {
                    let z = 1.0 - 2.0 * (j as f64 + 0.5) / k as f64;
                    let r = (1.0 - z * z).sqrt();
                    let a = golden * j as f64;
                    vec![r * a.cos(), r * a.sin(), z]
                })
                .collect())
        }
        _ => Err(Error::InvalidInput(format!("no direction sampler for {dim} spatial boundary dimensions"))),
    }
}

/// Subtracts the multiple of the boundary metric that zeroes the `00` entry.
fn pin(gamma: &DMatrix<f64>, gb: &DMatrix<f64>) -> DMatrix<f64> {
    gamma - gb * (gamma[(0, 0)] / gb[(0, 0)])
}

/// Estimates `Q(v₀) = 2/A` from `τ(ε) ≈ Aε + Bε²` along null directions
/// `v₀ = e₀ + θ`, then solves for `Γⁿ` modulo the boundary metric.
pub fn recover_sff(m: &MetricField, chart: &BoundaryChart, x: &DVector<f64>, opts: &SffOptions) -> Result<SffRecovery> {
    let (frame, _) = scatter::boundary_frame(m, chart, x)?;
    let eps = scatter::geometric_grid(opts.eps_min, opts.eps_max, opts.per_decade);
    let mut directions = Vec::new();
    let mut max_abs_h: f64 = 0.0;
    for theta in sphere_directions(frame.len() - 1, opts.directions)? {
        let v0 = scatter::null_direction(&frame, &theta)?;
        let samples = scatter::escape_time(m, chart, x, &theta, &eps, &opts.controls)?;
        max_abs_h = samples.iter().map(|e| e.max_abs_h).fold(max_abs_h, f64::max);
        let fit = scatter::fit_escape(&samples)?;
        let q_metric = convexity_probe(m, chart, x, &v0)?;
        let rel_err = (fit.q - q_metric).abs() / q_metric.abs().max(1e-300);
        directions.push(DirectionEstimate {
            theta,
            v0: v0.iter().copied().collect(),
            q_scattering: fit.q,
            q_metric,
            rel_err,
            fit,
        });
    }

    let n = frame.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a..n).map(move |b| (a, b))).filter(|&p| p != (0, 0)).collect();
    let rows: Vec<Vec<f64>> = directions
        .iter()
        .map(|d| chart.tangent_components(x, &DVector::from_vec(d.v0.clone())))
        .collect::<Result<_>>()?;
    let a = DMatrix::from_fn(rows.len(), pairs.len(), |r, k| {
        let (i, j) = pairs[k];
        let w = if i == j { 1.0 } else { 2.0 };
        w * rows[r][i] * rows[r][j]
    });
    let b = DVector::from_iterator(rows.len(), directions.iter().map(|d| d.q_scattering));
    let (sol, sv) = linalg::least_squares(&a, &b)?;
    if sv.len() < pairs.len() || sv[pairs.len() - 1] < 1e-10 * sv[0] {
        return Err(Error::IllConditioned("null directions do not determine the second fundamental form".into()));
    }
    let mut recovered = DMatrix::zeros(n, n);
    for (k, &(i, j)) in pairs.iter().enumerate() {
        recovered[(i, j)] = sol[k];
        recovered[(j, i)] = sol[k];
    }
    let basis = chart.tangent_basis(x);
    let g = m.eval(x);
    let gb = DMatrix::from_fn(n, n, |i, j| linalg::bilinear(&g, &basis[i], &basis[j]));
    let reference = pin(&second_fundamental_form(m, chart, x)?, &gb);
    let matrix_err = (&recovered - &reference).amax();
    let to_rows = |mat: &DMatrix<f64>| (0..n).map(|i| mat.row(i).iter().copied().collect()).collect();
    Ok(SffRecovery {
        point: x.iter().copied().collect(),
        max_rel_err: directions.iter().map(|d| d.rel_err).fold(0.0, f64::max),
        directions,
        recovered: to_rows(&recovered),
        reference: to_rows(&reference),
        matrix_err,
        max_abs_h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jetlab::normal_coordinates;
    use crate::metric::families;
    use crate::pseries::TruncatedSeries;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    #[test]
    fn disk_and_exterior_convexity() {
        let m = families::disk_cylinder_cartesian();
        let inside = BoundaryChart::DiskCartesian { exterior: false };
        let outside = BoundaryChart::DiskCartesian { exterior: true };
        let x = v(&[0.0, 1.0, 0.0]);
        let w = v(&[1.0, 0.0, 1.0]);
        assert!((convexity_probe(&m, &inside, &x, &w).unwrap() - 1.0).abs() < 1e-9);
        assert!((convexity_probe(&m, &outside, &x, &w).unwrap() + 1.0).abs() < 1e-9);
        let flat = families::minkowski(2);
        let q = convexity_probe(&flat, &BoundaryChart::HalfSpace { n: 2 }, &v(&[0.0, 0.3, 0.0]), &v(&[1.0, 1.0, 0.0]));
        assert!(q.unwrap().abs() < 1e-12);
    }

    #[test]
    fn probe_rejects_normal_vectors() {
        let m = families::disk_cylinder_cartesian();
        let c = BoundaryChart::DiskCartesian { exterior: false };
        assert!(convexity_probe(&m, &c, &v(&[0.0, 1.0, 0.0]), &v(&[0.0, 1.0, 0.0])).is_err());
    }

    #[test]
    fn form_matches_normal_coordinate_jet() {
        // Γⁿ_{αβ} = −½ ∂ₙ g_{αβ} in normal coordinates
        let base = families::disk_cylinder_cartesian();
        let mu = TruncatedSeries::variable(3, 4, 2).scale(0.3).add_constant(1.0);
        let m = families::conformal(&base, &mu).unwrap();
        let c = BoundaryChart::DiskCartesian { exterior: false };
        let p = [0.2, 0.9];
        let x = c.point(&p).unwrap();
        let sff = second_fundamental_form(&m, &c, &x).unwrap();
        let jet = normal_coordinates(&m, &c, &p, 2).unwrap().jet;
        for a in 0..2 {
            for b in 0..2 {
                assert!((sff[(a, b)] + 0.5 * jet.coeffs[1][a][b]).abs() < 1e-8, "{a}{b}");
            }
        }
    }

    #[test]
    fn recovers_disk_form() {
        let m = families::disk_cylinder_cartesian();
        let c = BoundaryChart::DiskCartesian { exterior: false };
        let r = recover_sff(&m, &c, &v(&[0.0, 1.0, 0.0]), &SffOptions::default()).unwrap();
        assert!(r.max_rel_err < 1e-2, "{}", r.max_rel_err);
        assert!((r.recovered[1][1] - 1.0).abs() < 1e-2);
        assert!(r.recovered[0][1].abs() < 1e-2);
        assert_eq!(r.recovered[0][0], 0.0);
        assert!(r.matrix_err < 1e-2);
    }
}
