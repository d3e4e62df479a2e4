//! Boundary normal coordinates `(u, s) ↦ exp_{z(u)}(s ν(u))`.

use nalgebra::{DMatrix, DVector};

use super::JetTable;
use crate::chart::BoundaryChart;
use crate::error::{Error, Result};
use crate::geodesic::{self, FlowControls};
use crate::linalg;
use crate::metric::MetricField;
use crate::pseries::{SeriesMatrix, TruncatedSeries};

/// A metric in boundary normal coordinates around `z(p₀)`.
#[derive(Clone, Debug)]
pub struct NormalCoordinates {
    pub base: Vec<f64>,
    pub order: usize,
    /// Chart coordinates `X(u, s)`; variables are the boundary offsets `u`
    /// followed by `s`. Empty when the stencil fallback was used.
    pub map: Vec<TruncatedSeries>,
    /// Metric in the coordinates `(u, s)`, reliable through `order`. The
    /// stencil fallback fills only the pure `s` terms.
    pub metric: SeriesMatrix,
    pub jet: JetTable,
}

/// Normal coordinates of `m` at the boundary point with parameters `p0`.
///
/// With a metric series the map is built by Picard iteration on the geodesic
/// equation in series form; evaluator-only metrics fall back to a stencil of
/// integrated normal geodesics.
pub fn normal_coordinates(m: &MetricField, chart: &BoundaryChart, p0: &[f64], order: usize) -> Result<NormalCoordinates> {
    if chart.dim() != m.dim() {
        return Err(Error::ShapeMismatch(format!("chart dim {} vs metric dim {}", chart.dim(), m.dim())));
    }
    let x0 = chart.point(p0)?;
    let deg = order as u32 + 1;
    if let Some(gs) = m.series().and_then(|s| s.recentered(&x0, deg).ok()) {
        let z = chart.param_series(p0, deg)?;
        let (map, metric) = normal_series(&gs, &x0, &z, &chart.grad(&x0), order)?;
        let base: Vec<f64> = x0.iter().copied().collect();
        let jet = JetTable::from_series(base.clone(), &metric, order);
        return Ok(NormalCoordinates { base, order, map, metric, jet });
    }
    normal_stencil(m, chart, p0, &x0, order)
}

/// Christoffel symbols `Γ^i_{jk}` of a metric series, flattened as `(i·d + j)·d + k`.
pub(crate) fn christoffel_series(g: &SeriesMatrix) -> Result<Vec<TruncatedSeries>> {
    let d = g.nrows();
    let ginv = g.inverse()?;
    let dg: Vec<SeriesMatrix> = (0..d).map(|k| g.partial(k)).collect::<Result<_>>()?;
    let mut out = vec![TruncatedSeries::zero(d, g.get(0, 0).max_total_degree()); d * d * d];
    for j in 0..d {
        for k in j..d {
            let lowered: Vec<TruncatedSeries> = (0..d)
                .map(|l| {
                    let s = dg[j].get(l, k).checked_add(dg[k].get(l, j))?.checked_sub(dg[l].get(j, k))?;
                    Ok(s.scale(0.5))
                })
                .collect::<Result<_>>()?;
            for i in 0..d {
                let mut acc = TruncatedSeries::zero(d, g.get(0, 0).max_total_degree());
                for (l, low) in lowered.iter().enumerate() {
                    if !low.is_zero() {
                        acc = acc.checked_add(&ginv.get(i, l).checked_mul(low)?)?;
                    }
                }
                out[(i * d + j) * d + k] = acc.clone();
                out[(i * d + k) * d + j] = acc;
            }
        }
    }
    Ok(out)
}

/// Covector `ω_i = det[A_0, …, A_{n−1}, e_i]` annihilating the columns `A`.
pub(crate) fn cofactor_covector(a: &[Vec<TruncatedSeries>]) -> Result<Vec<TruncatedSeries>> {
    let n = a.len();
    let d = n + 1;
    (0..d)
        .map(|i| {
            let rows: Vec<usize> = (0..d).filter(|&r| r != i).collect();
            let minor = SeriesMatrix::from_fn(n, n, |r, c| a[c][rows[r]].clone());
            let det = minor.det()?;
            Ok(if (i + n) % 2 == 0 { det } else { det.scale(-1.0) })
        })
        .collect()
}

/// Series core: `gs` in offsets from `x0`, `z` the boundary parameterization
/// (degree `order + 1`, `n` variables), `inward` any covector positive on the
/// inward normal. Returns `X(u, s)` and the metric in `(u, s)`.
pub(crate) fn normal_series(
    gs: &SeriesMatrix,
    x0: &DVector<f64>,
    z: &[TruncatedSeries],
    inward: &DVector<f64>,
    order: usize,
) -> Result<(Vec<TruncatedSeries>, SeriesMatrix)> {
    let d = x0.len();
    let n = d - 1;
    let deg = order as u32 + 1;
    let map: Vec<usize> = (0..n).collect();
    let zs: Vec<TruncatedSeries> = z.iter().map(|c| c.with_degree(deg).embed(d, &map)).collect::<Result<_>>()?;
    let offsets = |x: &[TruncatedSeries]| -> Vec<TruncatedSeries> {
        x.iter().enumerate().map(|(i, c)| c.add_constant(-x0[i])).collect()
    };

    // unit normal along the boundary
    let g_z = gs.compose(&offsets(&zs))?;
    let tangents: Vec<Vec<TruncatedSeries>> =
        (0..n).map(|a| zs.iter().map(|c| c.partial(a)).collect::<Result<_>>()).collect::<Result<_>>()?;
    let mut omega = cofactor_covector(&tangents)?;
    let w0: f64 = omega.iter().zip(inward.iter()).map(|(o, f)| o.constant_term() * f).sum();
    if w0 < 0.0 {
        omega = omega.iter().map(|o| o.scale(-1.0)).collect();
    }
    let raised = g_z.inverse()?.apply(&omega)?;
    let mut q = TruncatedSeries::zero(d, deg);
    for (o, r) in omega.iter().zip(&raised) {
        q = q.checked_add(&o.checked_mul(r)?)?;
    }
    if !(q.constant_term() > 0.0) {
        return Err(Error::Signature(format!("boundary is not timelike at {:?}", x0.as_slice())));
    }
    let inv_len = q.sqrt()?.recip()?;
    let nu: Vec<TruncatedSeries> = raised.iter().map(|r| r.checked_mul(&inv_len)).collect::<Result<_>>()?;

    let s = TruncatedSeries::variable(d, deg, n);
    let linear: Vec<TruncatedSeries> =
        zs.iter().zip(&nu).map(|(zc, nc)| zc.checked_add(&s.checked_mul(nc)?)).collect::<Result<_>>()?;
    let gamma = christoffel_series(gs)?;
    let mut x = linear.clone();
    for _ in 0..=(deg + 1) {
        let gam = TruncatedSeries::compose_many(&gamma, &offsets(&x))?;
        let xdot: Vec<TruncatedSeries> = x.iter().map(|c| c.partial(n)).collect::<Result<_>>()?;
        let mut next = Vec::with_capacity(d);
        for i in 0..d {
            let mut acc = TruncatedSeries::zero(d, deg);
            for j in 0..d {
                for k in j..d {
                    let gk = &gam[(i * d + j) * d + k];
                    if gk.is_zero() {
                        continue;
                    }
                    let w = if j == k { -1.0 } else { -2.0 };
                    acc = acc.checked_add(&gk.checked_mul(&xdot[j].checked_mul(&xdot[k])?)?.scale(w))?;
                }
            }
            next.push(linear[i].checked_add(&acc.integrate(n)?.integrate(n)?)?);
        }
        let change = next.iter().zip(&x).map(|(a, b)| a.max_abs_diff(b)).collect::<Result<Vec<_>>>()?;
        x = next;
        if change.into_iter().fold(0.0, f64::max) == 0.0 {
            break;
        }
    }

    let g_x = gs.compose(&offsets(&x))?;
    let cols: Vec<Vec<TruncatedSeries>> =
        (0..d).map(|a| x.iter().map(|c| c.partial(a)).collect::<Result<_>>()).collect::<Result<_>>()?;
    let jac = SeriesMatrix::from_columns(&cols);
    let metric = jac.transpose().checked_mul(&g_x)?.checked_mul(&jac)?.with_degree(order as u32);
    Ok((x, metric))
}

/// Geodesic equation `ẍ = −Γ(ẋ, ẋ)` as a first-order system in `(x, ẋ)`.
fn geodesic_rhs(m: &MetricField) -> impl Fn(&DVector<f64>) -> Result<DVector<f64>> + '_ {
    move |y: &DVector<f64>| {
        let d = m.dim();
        let x = y.rows(0, d).into_owned();
        let v = y.rows(d, d).into_owned();
        let acc = -m.christoffel(&x)?.contract(&v, &v);
        let mut out = DVector::zeros(2 * d);
        out.rows_mut(0, d).copy_from(&v);
        out.rows_mut(d, d).copy_from(&acc);
        Ok(out)
    }
}

fn normal_geodesic(m: &MetricField, chart: &BoundaryChart, p: &[f64], stops: &[f64]) -> Result<Vec<DVector<f64>>> {
    let d = m.dim();
    let z = chart.point(p)?;
    let nu = chart.unit_normal(m, &z)?;
    let mut y0 = DVector::zeros(2 * d);
    y0.rows_mut(0, d).copy_from(&z);
    y0.rows_mut(d, d).copy_from(&nu);
    let c = FlowControls { rtol: 1e-12, atol: 1e-14, ..FlowControls::default() };
    let rhs = geodesic_rhs(m);
    let run = geodesic::integrate(&rhs, &y0, 0.0, &c, 0.0, None, stops, &mut |_, _| Ok(()))?;
    stops
        .iter()
        .map(|t| {
            run.s
                .iter()
                .position(|s| s == t)
                .map(|i| run.y[i].clone())
                .ok_or_else(|| Error::InvalidInput(format!("normal geodesic did not reach s = {t}")))
        })
        .collect()
}

/// Stencil fallback: normal geodesics from `z(p₀)` and `z(p₀ ± h e_α)`,
/// tangential derivatives by central differences, and a least-squares
/// polynomial fit in `s` on a short grid.
fn normal_stencil(m: &MetricField, chart: &BoundaryChart, p0: &[f64], x0: &DVector<f64>, order: usize) -> Result<NormalCoordinates> {
    let d = m.dim();
    let n = d - 1;
    let h = 1e-5;
    let fit_deg = order + 3;
    let count = 3 * fit_deg + 1;
    let s_max = 0.08 * chart.characteristic_length();
    let stops: Vec<f64> = (1..count).map(|j| s_max * j as f64 / (count - 1) as f64).collect();
    let mut grid = vec![0.0];
    grid.extend(&stops);

    let with_start = |p: &[f64]| -> Result<Vec<DVector<f64>>> {
        let mut pts = normal_geodesic(m, chart, p, &stops)?;
        let z = chart.point(p)?;
        let mut y = DVector::zeros(2 * d);
        y.rows_mut(0, d).copy_from(&z);
        y.rows_mut(d, d).copy_from(&chart.unit_normal(m, &z)?);
        pts.insert(0, y);
        Ok(pts)
    };
    let center = with_start(p0)?;
    let mut sides = Vec::with_capacity(n);
    for a in 0..n {
        let mut plus = p0.to_vec();
        let mut minus = p0.to_vec();
        plus[a] += h;
        minus[a] -= h;
        sides.push((with_start(&plus)?, with_start(&minus)?));
    }

    // samples of the pulled-back metric on the normal axis
    let mut samples = vec![DMatrix::zeros(d, d); grid.len()];
    for (j, sample) in samples.iter_mut().enumerate() {
        let x = center[j].rows(0, d).into_owned();
        let mut cols: Vec<DVector<f64>> = sides
            .iter()
            .map(|(p, q)| (p[j].rows(0, d) - q[j].rows(0, d)) / (2.0 * h))
            .collect();
        cols.push(center[j].rows(d, d).into_owned());
        let g = m.eval(&x);
        *sample = DMatrix::from_fn(d, d, |a, b| linalg::bilinear(&g, &cols[a], &cols[b]));
    }

    let vander = DMatrix::from_fn(grid.len(), fit_deg + 1, |r, k| (grid[r] / s_max).powi(k as i32));
    let mut metric = SeriesMatrix::from_fn(d, d, |_, _| TruncatedSeries::zero(d, order as u32));
    for a in 0..d {
        for b in a..d {
            let rhs = DVector::from_iterator(grid.len(), samples.iter().map(|g| g[(a, b)]));
            let (c, _) = linalg::least_squares(&vander, &rhs)?;
            let mut s = TruncatedSeries::zero(d, order as u32);
            let mut e = vec![0; d];
            for k in 0..=order {
                e[n] = k as u32;
                s.set_coeff(&e, c[k] / s_max.powi(k as i32));
            }
            metric.set(a, b, s.clone());
            metric.set(b, a, s);
        }
    }
    let base: Vec<f64> = x0.iter().copied().collect();
    let jet = JetTable::from_series(base.clone(), &metric, order);
    Ok(NormalCoordinates { base, order, map: Vec::new(), metric, jet })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::families;

    fn disk() -> BoundaryChart {
        BoundaryChart::DiskCartesian { exterior: false }
    }

    #[test]
    fn disk_cylinder_jets() {
        // (1 − s)² dθ² in the normal distance s = 1 − r
        let nc = normal_coordinates(&families::disk_cylinder_cartesian(), &disk(), &[0.0, 0.7], 4).unwrap();
        let c = &nc.jet.coeffs;
        assert!((c[0][0][0] + 1.0).abs() < 1e-12);
        assert!((c[0][1][1] - 1.0).abs() < 1e-12);
        assert!((c[1][1][1] + 2.0).abs() < 1e-12);
        assert!((c[2][1][1] - 1.0).abs() < 1e-12);
        assert!(c[3][1][1].abs() < 1e-12 && c[4][1][1].abs() < 1e-12);
        assert!(c[1][0][1].abs() < 1e-12);
        assert!(nc.jet.normal_block_residual < 1e-12);
    }

    #[test]
    fn polar_chart_agrees_with_cartesian() {
        let a = normal_coordinates(&families::disk_cylinder_cartesian(), &disk(), &[0.3, 1.1], 3).unwrap();
        let b = normal_coordinates(
            &families::disk_cylinder_polar(),
            &BoundaryChart::DiskPolar { exterior: false },
            &[0.3, 1.1],
            3,
        )
        .unwrap();
        for k in 0..=3 {
            assert!(a.jet.order_diff(&b.jet, k).unwrap() < 1e-12, "order {k}");
        }
    }

    #[test]
    fn exterior_flips_the_normal() {
        let nc = normal_coordinates(
            &families::disk_cylinder_cartesian(),
            &BoundaryChart::DiskCartesian { exterior: true },
            &[0.0, 0.0],
            2,
        )
        .unwrap();
        assert!((nc.jet.coeffs[1][1][1] - 2.0).abs() < 1e-12);
        assert!((nc.jet.coeffs[2][1][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perturbed_half_space_block_form() {
        // η + (xⁿ)² h is already in normal form when h has no normal row
        let mut h = DMatrix::zeros(3, 3);
        h[(0, 1)] = 0.3;
        h[(1, 0)] = 0.3;
        h[(1, 1)] = 0.5;
        let m = families::perturbed_minkowski(2, 2, &h).unwrap();
        let nc = normal_coordinates(&m, &BoundaryChart::HalfSpace { n: 2 }, &[0.2, -0.1], 5).unwrap();
        assert!(nc.jet.normal_block_residual < 1e-12);
        assert!((nc.jet.coeffs[2][0][1] - 0.3).abs() < 1e-12);
        assert!((nc.jet.coeffs[2][1][1] - 0.5).abs() < 1e-12);
        assert!(nc.jet.coeffs[1][1][1].abs() < 1e-12);
    }

    #[test]
    fn conformal_metric_has_normal_block() {
        let base = families::disk_cylinder_cartesian();
        let y = TruncatedSeries::variable(3, 4, 2);
        let mu = y.scale(0.3).add_constant(1.0);
        let m = families::conformal(&base, &mu).unwrap();
        let nc = normal_coordinates(&m, &disk(), &[0.0, 0.4], 5).unwrap();
        assert!(nc.jet.normal_block_residual < 1e-8, "{}", nc.jet.normal_block_residual);
        // boundary values are the restricted metric
        let x = disk().point(&[0.0, 0.4]).unwrap();
        let g = m.eval(&x);
        let tb = disk().tangent_basis(&x);
        assert!((nc.jet.coeffs[0][1][1] - linalg::bilinear(&g, &tb[1], &tb[1])).abs() < 1e-12);
    }

    #[test]
    fn stencil_fallback_matches_series() {
        let series = families::disk_cylinder_cartesian();
        let evaluator = MetricField::new("eval-only", 3, series.evaluator(), None, series.signature_witness().clone()).unwrap();
        let a = normal_coordinates(&series, &disk(), &[0.0, 0.5], 2).unwrap();
        let b = normal_coordinates(&evaluator, &disk(), &[0.0, 0.5], 2).unwrap();
        assert!(b.map.is_empty());
        for k in 0..=2 {
            assert!(a.jet.order_diff(&b.jet, k).unwrap() < 1e-5, "order {k}: {}", a.jet.order_diff(&b.jet, k).unwrap());
        }
        assert!(b.jet.normal_block_residual < 1e-5);
    }
}
