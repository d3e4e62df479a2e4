//! The scattering relations `S` (on boundary vectors) and `S♯` (on boundary
//! covectors), null lifts, and escape-time tables.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::BoundaryChart;
use crate::error::{Error, Result};
use crate::geodesic::{self, FlowControls, PhasePoint, Trajectory};
use crate::linalg;
use crate::metric::{MetricField, TOL_NULL};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScatterControls {
    pub flow: FlowControls,
    pub tol_null: f64,
    /// Tangency tolerance for inputs, relative to the input size.
    pub tol_tangent: f64,
    #[serde(skip)]
    pub keep_trace: bool,
}

impl Default for ScatterControls {
    fn default() -> Self {
        Self { flow: FlowControls::default(), tol_null: TOL_NULL, tol_tangent: 1e-9, keep_trace: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FiberKind {
    Vector,
    Covector,
}

/// One application of `S` or `S♯`.
///
/// `entry`/`exit` are the raw tangential vectors (or covectors) in chart
/// components. `fiber_scale` is `v⁰` of the entry vector (for covectors, of its
/// index-raised form); dividing by it gives the `v⁰ = 1` normalization.
#[derive(Clone, Debug, Serialize)]
pub struct ScatterRecord {
    pub kind: FiberKind,
    pub entry_x: Vec<f64>,
    pub entry: Vec<f64>,
    pub exit_x: Vec<f64>,
    pub exit: Vec<f64>,
    pub fiber_scale: f64,
    pub s_exit: f64,
    pub grazing: bool,
    pub max_abs_h: f64,
    #[serde(skip)]
    pub trace: Option<Trajectory>,
}

impl ScatterRecord {
    pub fn entry_normalized(&self) -> Vec<f64> {
        self.entry.iter().map(|v| v / self.fiber_scale).collect()
    }

    pub fn exit_normalized(&self) -> Vec<f64> {
        self.exit.iter().map(|v| v / self.fiber_scale).collect()
    }

    fn fixed_point(kind: FiberKind, x: &DVector<f64>, fiber: &DVector<f64>, scale: f64) -> Self {
        Self {
            kind,
            entry_x: x.iter().copied().collect(),
            entry: fiber.iter().copied().collect(),
            exit_x: x.iter().copied().collect(),
            exit: fiber.iter().copied().collect(),
            fiber_scale: scale,
            s_exit: 0.0,
            grazing: true,
            max_abs_h: 0.0,
            trace: None,
        }
    }
}

fn check_boundary(chart: &BoundaryChart, x: &DVector<f64>, c: &ScatterControls) -> Result<()> {
    if x.len() != chart.dim() {
        return Err(Error::ShapeMismatch(format!("point of dim {} for chart of dim {}", x.len(), chart.dim())));
    }
    if chart.f(x).abs() > c.flow.tol_event.max(1e-12) * 10.0 {
        return Err(Error::InvalidInput(format!("{:?} is not on the boundary (F = {:e})", x.as_slice(), chart.f(x))));
    }
    Ok(())
}

fn check_tangent(chart: &BoundaryChart, x: &DVector<f64>, v: &DVector<f64>, c: &ScatterControls) -> Result<()> {
    let df = chart.grad(x);
    if df.dot(v).abs() > c.tol_tangent * v.amax().max(1.0) * df.amax() {
        return Err(Error::InvalidInput(format!("vector {:?} is not tangent to the boundary", v.as_slice())));
    }
    Ok(())
}

/// The null vector `v = v′ + c ν` over a tangential causal `v′`; the flag is
/// set for (numerically) lightlike `v′`, in which case `v = v′`.
pub fn null_lift(
    m: &MetricField,
    chart: &BoundaryChart,
    x: &DVector<f64>,
    vt: &DVector<f64>,
    c: &ScatterControls,
) -> Result<(DVector<f64>, bool)> {
    check_boundary(chart, x, c)?;
    check_tangent(chart, x, vt, c)?;
    let q = linalg::bilinear(&m.eval(x), vt, vt);
    if q.abs() <= c.tol_null {
        return Ok((vt.clone(), true));
    }
    if q > 0.0 {
        return Err(Error::Causality(format!("tangential vector is spacelike: g(v′, v′) = {q:e}")));
    }
    let nu = chart.unit_normal(m, x)?;
    Ok((vt + nu * (-q).sqrt(), false))
}

fn trace_exit(
    m: &MetricField,
    chart: &BoundaryChart,
    x: &DVector<f64>,
    xi: DVector<f64>,
    c: &ScatterControls,
) -> Result<(PhasePoint, f64, f64, Option<Trajectory>)> {
    let tr = geodesic::flow_to_boundary(m, chart, &PhasePoint::new(x.clone(), xi), &c.flow)?;
    let hit = geodesic::boundary_event(&tr, &c.flow)?;
    let h = tr.max_abs_h;
    Ok((hit.point, hit.s_exit, h, c.keep_trace.then_some(tr)))
}

/// `S(x, v′) = (y, w′)`.
pub fn scattering_s(
    m: &MetricField,
    chart: &BoundaryChart,
    x: &DVector<f64>,
    vt: &DVector<f64>,
    c: &ScatterControls,
) -> Result<ScatterRecord> {
    let scale = vt[0];
    let (v, grazing) = null_lift(m, chart, x, vt, c)?;
    if grazing {
        return Ok(ScatterRecord::fixed_point(FiberKind::Vector, x, vt, scale));
    }
    let (p, s_exit, max_abs_h, trace) = trace_exit(m, chart, x, m.flat(x, &v), c)?;
    let w = m.sharp(&p.x, &p.xi)?;
    let wt = chart.project_vector(m, &p.x, &w)?;
    Ok(ScatterRecord {
        kind: FiberKind::Vector,
        entry_x: x.iter().copied().collect(),
        entry: vt.iter().copied().collect(),
        exit_x: p.x.iter().copied().collect(),
        exit: wt.iter().copied().collect(),
        fiber_scale: scale,
        s_exit,
        grazing: false,
        max_abs_h,
        trace,
    })
}

/// `S♯(x, ξ′) = (y, η′)`, computed directly on covectors: `ξ = ξ′ + c n` with
/// the unit conormal `n`, then `η′ = η − g⁻¹(η, n) n` at the exit.
pub fn scattering_ssharp(
    m: &MetricField,
    chart: &BoundaryChart,
    x: &DVector<f64>,
    xit: &DVector<f64>,
    c: &ScatterControls,
) -> Result<ScatterRecord> {
    check_boundary(chart, x, c)?;
    let ginv = m.inverse(x)?;
    let n = chart.unit_conormal(m, x)?;
    if linalg::bilinear(&ginv, xit, &n).abs() > c.tol_tangent * xit.amax().max(1.0) {
        return Err(Error::InvalidInput(format!("covector {:?} has a conormal component", xit.as_slice())));
    }
    let scale = (&ginv * xit)[0];
    let q = linalg::bilinear(&ginv, xit, xit);
    if q.abs() <= c.tol_null {
        return Ok(ScatterRecord::fixed_point(FiberKind::Covector, x, xit, scale));
    }
    if q > 0.0 {
        return Err(Error::Causality(format!("tangential covector is spacelike: g⁻¹(ξ′, ξ′) = {q:e}")));
    }
    let xi = xit + &n * (-q).sqrt();
    let (p, s_exit, max_abs_h, trace) = trace_exit(m, chart, x, xi, c)?;
    let eta_t = chart.project_covector(m, &p.x, &p.xi)?;
    Ok(ScatterRecord {
        kind: FiberKind::Covector,
        entry_x: x.iter().copied().collect(),
        entry: xit.iter().copied().collect(),
        exit_x: p.x.iter().copied().collect(),
        exit: eta_t.iter().copied().collect(),
        fiber_scale: scale,
        s_exit,
        grazing: false,
        max_abs_h,
        trace,
    })
}

/// Applies `S` to every `(x, v′)` in parallel; results keep the input order.
pub fn scatter_fan(
    m: &MetricField,
    chart: &BoundaryChart,
    inputs: &[(DVector<f64>, DVector<f64>)],
    c: &ScatterControls,
) -> Vec<Result<ScatterRecord>> {
    inputs.par_iter().map(|(x, v)| scattering_s(m, chart, x, v, c)).collect()
}

pub fn ssharp_fan(
    m: &MetricField,
    chart: &BoundaryChart,
    inputs: &[(DVector<f64>, DVector<f64>)],
    c: &ScatterControls,
) -> Vec<Result<ScatterRecord>> {
    inputs.par_iter().map(|(x, xi)| scattering_ssharp(m, chart, x, xi, c)).collect()
}

/// Scatter-map CSV: boundary parameters and tangential components (in the
/// parameter basis) of entry and exit, `s_exit` and the grazing flag.
/// Failed rays are written as a comment line.
pub fn scatter_csv(chart: &BoundaryChart, records: &[Result<ScatterRecord>]) -> Result<String> {
    let nb = chart.boundary_dim();
    let mut out = String::new();
    let cols: Vec<String> = ["x", "v", "y", "w"]
        .iter()
        .flat_map(|p| (0..nb).map(move |i| format!("{p}{i}")))
        .collect();
    let _ = writeln!(out, "{},s_exit,grazing", cols.join(","));
    for (i, r) in records.iter().enumerate() {
        let r = match r {
            Ok(r) => r,
            Err(e) => {
                let _ = writeln!(out, "# ray {i}: {e}");
                continue;
            }
        };
        let ex = DVector::from_vec(r.entry_x.clone());
        let yx = DVector::from_vec(r.exit_x.clone());
        let mut fields: Vec<f64> = chart.params(&ex);
        fields.extend(fiber_components(chart, r, &ex, &r.entry)?);
        fields.extend(chart.params(&yx));
        fields.extend(fiber_components(chart, r, &yx, &r.exit)?);
        let row: Vec<String> = fields.iter().map(|v| format!("{v:.15e}")).collect();
        let _ = writeln!(out, "{},{:.15e},{}", row.join(","), r.s_exit, r.grazing as u8);
    }
    Ok(out)
}

fn fiber_components(chart: &BoundaryChart, r: &ScatterRecord, x: &DVector<f64>, f: &[f64]) -> Result<Vec<f64>> {
    let f = DVector::from_vec(f.to_vec());
    match r.kind {
        FiberKind::Vector => chart.tangent_components(x, &f),
        // covector components on the parameter basis: ξ′(∂_α z)
        FiberKind::Covector => Ok(chart.tangent_basis(x).iter().map(|e| e.dot(&f)).collect()),
    }
}

/// `g`-orthonormal boundary frame at `x`: a unit timelike tangent `e₀` and unit
/// spacelike tangents `e_a`, plus the unit inward normal.
pub fn boundary_frame(m: &MetricField, chart: &BoundaryChart, x: &DVector<f64>) -> Result<(Vec<DVector<f64>>, DVector<f64>)> {
    let g = m.eval(x);
    let mut basis = chart.tangent_basis(x);
    // the t-direction leads so that Gram–Schmidt starts from a timelike vector
    basis.sort_by_key(|e| std::cmp::Reverse((e[0].abs() > 0.5) as u8));
    let mut frame = linalg::lorentz_orthonormalize(&g, &basis)?;
    if linalg::bilinear(&g, &frame[0], &frame[0]) > 0.0 {
        return Err(Error::Signature("boundary frame does not start timelike".into()));
    }
    if frame[0][0] < 0.0 {
        frame[0] = -&frame[0];
    }
    Ok((frame, chart.unit_normal(m, x)?))
}

/// Unit tangential null direction `v₀ = e₀ + θ^a e_a` for a unit `θ`.
pub fn null_direction(frame: &[DVector<f64>], theta: &[f64]) -> Result<DVector<f64>> {
    if theta.len() + 1 != frame.len() {
        return Err(Error::Arity { expected: frame.len() - 1, got: theta.len() });
    }
    let norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::InvalidInput("direction θ must be non-zero".into()));
    }
    Ok(theta.iter().zip(&frame[1..]).fold(frame[0].clone(), |acc, (t, e)| acc + e * (t / norm)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EscapeSample {
    pub eps: f64,
    /// `None` when the ray did not return before the cap.
    pub tau: Option<f64>,
    pub max_abs_h: f64,
}

/// Escape times of `v_ε = e₀ + √(1−ε²) θ^a e_a + ε ν` from the boundary point `x`.
pub fn escape_time(
    m: &MetricField,
    chart: &BoundaryChart,
    x: &DVector<f64>,
    theta: &[f64],
    eps: &[f64],
    c: &ScatterControls,
) -> Result<Vec<EscapeSample>> {
    check_boundary(chart, x, c)?;
    let (frame, nu) = boundary_frame(m, chart, x)?;
    let dir = null_direction(&frame, theta)? - &frame[0];
    eps.par_iter()
        .map(|&e| {
            if !(e > 0.0 && e < 1.0) {
                return Err(Error::InvalidInput(format!("ε = {e} outside (0, 1)")));
            }
            let v = &frame[0] + &dir * (1.0 - e * e).sqrt() + &nu * e;
            let tr = geodesic::flow_to_boundary(m, chart, &PhasePoint::new(x.clone(), m.flat(x, &v)), &c.flow)?;
            Ok(EscapeSample { eps: e, tau: tr.exit.map(|h| h.s_exit), max_abs_h: tr.max_abs_h })
        })
        .collect()
}

/// Geometric grid with `per_decade` points per decade from `lo` to `hi`.
pub fn geometric_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let n = (decades * per_decade as f64).round() as usize;
    (0..=n).map(|i| lo * 10f64.powf(decades * i as f64 / n as f64)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EscapeFit {
    pub a: f64,
    pub b: f64,
    /// `2 / A`.
    pub q: f64,
    /// Weighted RMS residual of `τ/ε − (A + Bε)`.
    pub residual: f64,
}

/// Weighted least-squares fit `τ = Aε + Bε²` with weights `1/ε²`.
pub fn fit_escape(samples: &[EscapeSample]) -> Result<EscapeFit> {
    let pts: Vec<(f64, f64)> = samples.iter().filter_map(|s| s.tau.map(|t| (s.eps, t))).collect();
    if pts.len() < 3 {
        return Err(Error::IllConditioned(format!("{} returning rays, at least 3 needed for the fit", pts.len())));
    }
    // weighting by 1/ε² turns rows into τ/ε = A + B ε
    let a = DMatrix::from_fn(pts.len(), 2, |i, j| if j == 0 { 1.0 } else { pts[i].0 });
    let b = DVector::from_iterator(pts.len(), pts.iter().map(|(e, t)| t / e));
    let (sol, _) = linalg::least_squares(&a, &b)?;
    let r = &a * &sol - &b;
    let residual = (r.norm_squared() / pts.len() as f64).sqrt();
    Ok(EscapeFit { a: sol[0], b: sol[1], q: 2.0 / sol[0], residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::families;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    fn disk() -> BoundaryChart {
        BoundaryChart::DiskCartesian { exterior: false }
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn null_lift_examples() {
        let c = ScatterControls::default();
        let m = families::disk_cylinder_cartesian();
        let x = v(&[0.0, 1.0, 0.0]);
        let (l, graze) = null_lift(&m, &disk(), &x, &v(&[1.0, 0.0, 0.0]), &c).unwrap();
        assert!(!graze);
        assert!((l - v(&[1.0, -1.0, 0.0])).amax() < 1e-15);

        let (l, graze) = null_lift(&m, &disk(), &x, &v(&[1.0, 0.0, 1.0]), &c).unwrap();
        assert!(graze);
        assert_eq!(l, v(&[1.0, 0.0, 1.0]));

        let h = BoundaryChart::HalfSpace { n: 2 };
        let mk = families::minkowski(2);
        let (l, _) = null_lift(&mk, &h, &v(&[0.0; 3]), &v(&[2.0, 1.0, 0.0]), &c).unwrap();
        assert!((l - v(&[2.0, 1.0, 3f64.sqrt()])).amax() < 1e-15);

        assert!(matches!(null_lift(&mk, &h, &v(&[0.0; 3]), &v(&[1.0, 2.0, 0.0]), &c), Err(Error::Causality(_))));
    }

    #[test]
    fn s_on_diameter() {
        let c = ScatterControls::default();
        let m = families::disk_cylinder_cartesian();
        let r = scattering_s(&m, &disk(), &v(&[0.0, 1.0, 0.0]), &v(&[1.0, 0.0, 0.0]), &c).unwrap();
        assert!(close(&r.exit_x, &[2.0, -1.0, 0.0], 1e-10));
        assert!(close(&r.exit, &[1.0, 0.0, 0.0], 1e-10));
        assert!((r.s_exit - 2.0).abs() < 1e-10);
    }

    #[test]
    fn grazing_is_fixed_point() {
        let c = ScatterControls::default();
        let m = families::disk_cylinder_cartesian();
        let x = v(&[0.0, 1.0, 0.0]);
        let r = scattering_s(&m, &disk(), &x, &v(&[1.0, 0.0, 1.0]), &c).unwrap();
        assert!(r.grazing);
        assert_eq!(r.exit_x, vec![0.0, 1.0, 0.0]);
        assert_eq!(r.exit, vec![1.0, 0.0, 1.0]);
    }

    fn random_inputs(m: &MetricField, chart: &BoundaryChart, count: usize, seed: u64) -> Vec<(DVector<f64>, DVector<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let x = chart.point(&[rng.gen_range(-1.0..1.0), rng.gen_range(0.0..std::f64::consts::TAU)]).unwrap();
                let (frame, _) = boundary_frame(m, chart, &x).unwrap();
                let a: f64 = rng.gen_range(-0.9..0.9);
                (x, &frame[0] + &frame[1] * a)
            })
            .collect()
    }

    #[test]
    fn homogeneity_and_sharp_consistency() {
        let c = ScatterControls::default();
        let mu = crate::pseries::TruncatedSeries::from_terms(3, 2, [(vec![0, 0, 0], 1.0), (vec![0, 1, 1], 0.2)]).unwrap();
        let m = families::conformal(&families::disk_cylinder_cartesian(), &mu).unwrap();
        for (x, vt) in random_inputs(&m, &disk(), 6, 7) {
            let r = scattering_s(&m, &disk(), &x, &vt, &c).unwrap();
            let r2 = scattering_s(&m, &disk(), &x, &(&vt * 2.5), &c).unwrap();
            assert!(close(&r.exit_x, &r2.exit_x, 1e-9));
            let scaled: Vec<f64> = r.exit.iter().map(|w| w * 2.5).collect();
            assert!(close(&scaled, &r2.exit, 1e-8 * 2.5));

            // S♯ directly vs ♭ ∘ S ∘ ♯
            let xit = m.flat(&x, &vt);
            let rs = scattering_ssharp(&m, &disk(), &x, &xit, &c).unwrap();
            let y = DVector::from_vec(r.exit_x.clone());
            let flat_w = m.flat(&y, &DVector::from_vec(r.exit.clone()));
            assert!(close(&rs.exit_x, &r.exit_x, 1e-9));
            assert!(close(rs.exit.as_slice(), flat_w.as_slice(), 1e-8));

            let rs2 = scattering_ssharp(&m, &disk(), &x, &(&xit * 0.4), &c).unwrap();
            let scaled: Vec<f64> = rs.exit.iter().map(|w| w * 0.4).collect();
            assert!(close(&scaled, &rs2.exit, 1e-8));
        }
    }

    #[test]
    fn time_reversal() {
        let c = ScatterControls::default();
        let m = families::disk_cylinder_cartesian();
        for (x, vt) in random_inputs(&m, &disk(), 5, 11) {
            let r = scattering_s(&m, &disk(), &x, &vt, &c).unwrap();
            let y = DVector::from_vec(r.exit_x.clone());
            let w = DVector::from_vec(r.exit.clone());
            let back = scattering_s(&m, &disk(), &y, &(-w), &c).unwrap();
            assert!(close(&back.exit_x, x.as_slice(), 1e-6));
            let minus_v: Vec<f64> = vt.iter().map(|a| -a).collect();
            assert!(close(&back.exit, &minus_v, 1e-6));
        }
    }

    #[test]
    fn escape_time_on_disk() {
        let c = ScatterControls::default();
        let m = families::disk_cylinder_cartesian();
        let x = v(&[0.0, 1.0, 0.0]);
        let s = escape_time(&m, &disk(), &x, &[1.0], &[0.01], &c).unwrap();
        assert!((s[0].tau.unwrap() - 0.02).abs() < 1e-5);

        let grid = geometric_grid(1e-3, 1e-2, 12);
        assert_eq!(grid.len(), 13);
        let fit = fit_escape(&escape_time(&m, &disk(), &x, &[1.0], &grid, &c).unwrap()).unwrap();
        assert!((fit.q - 1.0).abs() < 0.01);
    }

    #[test]
    fn flat_boundary_never_returns() {
        let c = ScatterControls { flow: FlowControls { max_length: 20.0, ..Default::default() }, ..Default::default() };
        let m = families::minkowski(2);
        let h = BoundaryChart::HalfSpace { n: 2 };
        let s = escape_time(&m, &h, &v(&[0.0; 3]), &[1.0], &[0.01, 0.1], &c).unwrap();
        assert!(s.iter().all(|e| e.tau.is_none()));
        assert!(fit_escape(&s).is_err());
    }

    #[test]
    fn csv_has_one_row_per_ray() {
        let c = ScatterControls::default();
        let m = families::disk_cylinder_cartesian();
        let inputs = random_inputs(&m, &disk(), 4, 3);
        let recs = scatter_fan(&m, &disk(), &inputs, &c);
        let csv = scatter_csv(&disk(), &recs).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "x0,x1,v0,v1,y0,y1,w0,w1,s_exit,grazing");
        assert_eq!(csv.lines().count(), 5);
    }
}
