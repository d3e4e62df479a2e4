//! Hamiltonian flow of `H = ½ g^{ij} ξ_i ξ_j` with an adaptive Dormand–Prince
//! 5(4) integrator and boundary event detection.
//!
//! The flow is `ẋ = g⁻¹ξ`, `ξ̇_k = ½ vᵀ (∂_k g) v` with `v = g⁻¹ξ`. There is no
//! projection back onto `H = 0`; drift beyond `tol_h` is a hard error.

use std::cell::RefCell;
use std::fmt::Write as _;

use nalgebra::DVector;
use roots::{find_root_brent, SimpleConvergency};
use serde::{Deserialize, Serialize};

use crate::chart::BoundaryChart;
use crate::error::{Error, Result};
use crate::metric::{MetricField, TOL_NULL};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowControls {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub h_min: f64,
    /// Trapped cap on the affine length.
    pub max_length: f64,
    /// Admissible `|H|` along a null trajectory (relative to `max(1, |ξ₀|²)`).
    pub tol_h: f64,
    /// Event detection arms after `s_band · characteristic_length`.
    pub s_band: f64,
    pub tol_event: f64,
    pub tol_graze: f64,
    /// Disables step control (used for convergence studies).
    pub fixed_step: Option<f64>,
    pub max_steps: usize,
}

impl Default for FlowControls {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            h_init: 1e-2,
            h_max: 0.25,
            h_min: 1e-14,
            max_length: 100.0,
            tol_h: 1e-9,
            s_band: 1e-6,
            tol_event: 1e-12,
            tol_graze: 1e-8,
            fixed_step: None,
            max_steps: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub s: f64,
    pub x: DVector<f64>,
    pub xi: DVector<f64>,
}

impl PhasePoint {
    pub fn new(x: DVector<f64>, xi: DVector<f64>) -> Self {
        Self { s: 0.0, x, xi }
    }

    fn from_state(s: f64, y: &DVector<f64>) -> Self {
        let d = y.len() / 2;
        Self { s, x: y.rows(0, d).into_owned(), xi: y.rows(d, d).into_owned() }
    }

    fn state(&self) -> DVector<f64> {
        let d = self.x.len();
        let mut y = DVector::zeros(2 * d);
        y.rows_mut(0, d).copy_from(&self.x);
        y.rows_mut(d, d).copy_from(&self.xi);
        y
    }

    /// Same point with the covector negated: the start of the time-reversed flow.
    pub fn reversed(&self) -> Self {
        Self { s: 0.0, x: self.x.clone(), xi: -&self.xi }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryStatus {
    Exited,
    TrappedCap,
    LeftChart,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryHit {
    pub point: PhasePoint,
    pub s_exit: f64,
    /// `d/ds F(x(s))` at the root.
    pub dfds: f64,
    pub grazing: bool,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub samples: Vec<PhasePoint>,
    rates: Vec<DVector<f64>>,
    pub status: TrajectoryStatus,
    pub exit: Option<BoundaryHit>,
    pub max_abs_h: f64,
    pub accepted: usize,
    pub rejected: usize,
}

impl Trajectory {
    pub fn last(&self) -> &PhasePoint {
        self.samples.last().expect("trajectory has at least its start")
    }

    /// Cubic Hermite interpolation on `(x, ξ)`.
    pub fn interpolate(&self, s: f64) -> Option<PhasePoint> {
        let first = self.samples.first()?.s;
        if s < first || s > self.last().s {
            return None;
        }
        let i = self.samples.partition_point(|p| p.s <= s).clamp(1, self.samples.len() - 1);
        let (a, b) = (&self.samples[i - 1], &self.samples[i]);
        let h = b.s - a.s;
        if h == 0.0 {
            return Some(b.clone());
        }
        let t = (s - a.s) / h;
        let (h00, h10, h01, h11) = (
            2.0 * t.powi(3) - 3.0 * t * t + 1.0,
            t.powi(3) - 2.0 * t * t + t,
            -2.0 * t.powi(3) + 3.0 * t * t,
            t.powi(3) - t * t,
        );
        let y = a.state() * h00 + &self.rates[i - 1] * (h10 * h) + b.state() * h01 + &self.rates[i] * (h11 * h);
        Some(PhasePoint::from_state(s, &y))
    }

    /// CSV with columns `s, x0..xn, xi0..xin, H`.
    pub fn to_csv(&self, m: &MetricField) -> Result<String> {
        let d = m.dim();
        let mut out = String::from("s");
        for i in 0..d {
            let _ = write!(out, ",x{i}");
        }
        for i in 0..d {
            let _ = write!(out, ",xi{i}");
        }
        out.push_str(",H\n");
        for p in &self.samples {
            let _ = write!(out, "{:.17e}", p.s);
            for v in p.x.iter().chain(p.xi.iter()) {
                let _ = write!(out, ",{v:.17e}");
            }
            let _ = writeln!(out, ",{:.6e}", m.hamiltonian(&p.x, &p.xi)?);
        }
        Ok(out)
    }
}

/// Right-hand side of an autonomous ODE `y' = f(y)`.
pub type Rhs<'a> = dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + 'a;

// Dormand–Prince 5(4) tableau; nodes are implied by the row sums of A.
#[allow(dead_code)]
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights minus fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// One Dormand–Prince step from `y` (with `k1 = f(y)`) of size `h`.
/// Returns the fifth-order solution, the error estimate and `f` at the new point.
pub fn dopri_step(f: &Rhs, y: &DVector<f64>, k1: &DVector<f64>, h: f64) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
    k.push(k1.clone());
    for (i, row) in A.iter().enumerate().skip(1) {
        let mut yi = y.clone();
        for (j, a) in row.iter().enumerate().take(i) {
            if *a != 0.0 {
                yi.axpy(h * a, &k[j], 1.0);
            }
        }
        if i == 6 {
            let k7 = f(&yi)?;
            let mut err = DVector::zeros(y.len());
            k.push(k7);
            for (j, e) in E.iter().enumerate() {
                if *e != 0.0 {
                    err.axpy(h * e, &k[j], 1.0);
                }
            }
            let k7 = k.pop().expect("seven stages");
            return Ok((yi, err, k7));
        }
        k.push(f(&yi)?);
    }
    unreachable!("tableau has seven stages")
}

/// Raw result of [`integrate`].
#[derive(Clone, Debug)]
pub struct OdeRun {
    pub s: Vec<f64>,
    pub y: Vec<DVector<f64>>,
    pub rates: Vec<DVector<f64>>,
    pub status: TrajectoryStatus,
    /// Index into the samples of the event point, if one was found.
    pub event: Option<usize>,
    pub accepted: usize,
    pub rejected: usize,
}

/// Adaptive integration of `y' = f(y)` from `s0`.
///
/// `stops` are parameter values that the integrator lands on exactly (they
/// appear among the samples). `event`, if given, ends the run at the first
/// root of the event function past the escape band at which it changes sign
/// from positive to non-positive. `check` is called on every accepted state.
pub fn integrate(
    f: &Rhs,
    y0: &DVector<f64>,
    s0: f64,
    c: &FlowControls,
    band: f64,
    event: Option<&dyn Fn(&DVector<f64>) -> f64>,
    stops: &[f64],
    check: &mut dyn FnMut(f64, &DVector<f64>) -> Result<()>,
) -> Result<OdeRun> {
    let mut run = OdeRun {
        s: vec![s0],
        y: vec![y0.clone()],
        rates: vec![],
        status: TrajectoryStatus::TrappedCap,
        event: None,
        accepted: 0,
        rejected: 0,
    };
    check(s0, y0)?;
    let mut y = y0.clone();
    let mut k1 = f(&y)?;
    run.rates.push(k1.clone());
    let mut s = s0;
    let s_end = s0 + c.max_length;
    let armed_at = s0 + band;
    let mut h = c.fixed_step.unwrap_or(c.h_init);
    let mut stop_idx = stops.partition_point(|&t| t <= s0);
    loop {
        if s >= s_end * (1.0 - 1e-15) - 1e-300 || s_end - s <= 1e-14 * s_end.abs().max(1.0) {
            run.status = TrajectoryStatus::TrappedCap;
            return Ok(run);
        }
        if run.accepted + run.rejected >= c.max_steps {
            return Err(Error::StepUnderflow { s, h });
        }
        let mut h_try = h.min(c.h_max).min(s_end - s);
        if c.fixed_step.is_some() {
            h_try = h.min(s_end - s);
        }
        let mut at_stop = false;
        if let Some(&t) = stops.get(stop_idx) {
            if t <= s + h_try {
                h_try = t - s;
                at_stop = true;
            }
        }
        let (y5, err, k7) = dopri_step(f, &y, &k1, h_try)?;
        let errnorm = if c.fixed_step.is_some() {
            0.0
        } else {
            err.iter()
                .zip(y.iter().zip(y5.iter()))
                .map(|(e, (a, b))| e.abs() / (c.atol + c.rtol * a.abs().max(b.abs())))
                .fold(0.0, f64::max)
        };
        if !errnorm.is_finite() || y5.iter().any(|v| !v.is_finite()) {
            if c.fixed_step.is_some() {
                run.status = TrajectoryStatus::LeftChart;
                return Ok(run);
            }
            h = h_try * 0.2;
            run.rejected += 1;
            if h < c.h_min {
                run.status = TrajectoryStatus::LeftChart;
                return Ok(run);
            }
            continue;
        }
        if errnorm > 1.0 {
            h = h_try * (0.9 * errnorm.powf(-0.2)).max(0.2);
            run.rejected += 1;
            if h < c.h_min {
                return Err(Error::StepUnderflow { s, h });
            }
            continue;
        }
        let s_new = if at_stop { stops[stop_idx] } else { s + h_try };
        run.accepted += 1;

        if let Some(ev) = event {
            if s_new > armed_at {
                let (sig_a, fa) = if s >= armed_at {
                    (0.0, ev(&y))
                } else {
                    let sig = armed_at - s;
                    (sig, ev(&dopri_step(f, &y, &k1, sig)?.0))
                };
                let fb = ev(&y5);
                if fa > 0.0 && fb <= 0.0 {
                    let failure: RefCell<Option<Error>> = RefCell::new(None);
                    let phi = |sig: f64| -> f64 {
                        if sig == 0.0 {
                            return ev(&y);
                        }
                        match dopri_step(f, &y, &k1, sig) {
                            Ok((ys, _, _)) => ev(&ys),
                            Err(e) => {
                                failure.borrow_mut().get_or_insert(e);
                                f64::NAN
                            }
                        }
                    };
                    let sig = if fb == 0.0 {
                        h_try
                    } else {
                        let mut conv = SimpleConvergency { eps: c.tol_event * 1e-2, max_iter: 200 };
                        let root = find_root_brent(sig_a, h_try, phi, &mut conv);
                        if let Some(e) = failure.into_inner() {
                            return Err(e);
                        }
                        root.map_err(|e| Error::InvalidInput(format!("event refinement failed: {e:?}")))?
                    };
                    let (y_hit, _, k_hit) = dopri_step(f, &y, &k1, sig)?;
                    check(s + sig, &y_hit)?;
                    run.s.push(s + sig);
                    run.y.push(y_hit);
                    run.rates.push(k_hit);
                    run.event = Some(run.s.len() - 1);
                    run.status = TrajectoryStatus::Exited;
                    return Ok(run);
                }
            }
        }

        check(s_new, &y5)?;
        run.s.push(s_new);
        run.y.push(y5.clone());
        run.rates.push(k7.clone());
        s = s_new;
        y = y5;
        k1 = k7;
        if at_stop {
            stop_idx += 1;
        }
        if c.fixed_step.is_none() {
            let grow = if errnorm == 0.0 { 5.0 } else { (0.9 * errnorm.powf(-0.2)).clamp(0.2, 5.0) };
            // a step shortened to land on a stop does not shrink the next one
            h = if at_stop { h.max(h_try * grow) } else { h_try * grow };
        }
    }
}

/// Phase-space right-hand side of the Hamiltonian flow.
pub fn hamiltonian_rhs(m: &MetricField) -> impl Fn(&DVector<f64>) -> Result<DVector<f64>> + '_ {
    move |y: &DVector<f64>| {
        let d = m.dim();
        let x = y.rows(0, d).into_owned();
        let xi = y.rows(d, d);
        let ginv = m.inverse(&x)?;
        let v = &ginv * xi;
        let dg = m.derivatives(&x);
        let mut out = DVector::zeros(2 * d);
        out.rows_mut(0, d).copy_from(&v);
        for k in 0..d {
            out[d + k] = 0.5 * v.dot(&(&dg[k] * &v));
        }
        Ok(out)
    }
}

fn check_start(m: &MetricField, start: &PhasePoint) -> Result<f64> {
    let d = m.dim();
    if start.x.len() != d || start.xi.len() != d {
        return Err(Error::ShapeMismatch(format!("phase point of dim {} for metric of dim {d}", start.x.len())));
    }
    let h0 = m.hamiltonian(&start.x, &start.xi)?;
    let scale = start.xi.amax().powi(2).max(1.0);
    if h0.abs() > TOL_NULL * scale {
        return Err(Error::Causality(format!("start covector is not null: H = {h0:e}")));
    }
    Ok(scale)
}

fn run_flow(
    m: &MetricField,
    start: &PhasePoint,
    c: &FlowControls,
    chart: Option<&BoundaryChart>,
    stops: &[f64],
) -> Result<Trajectory> {
    let scale = check_start(m, start)?;
    let d = m.dim();
    let rhs = hamiltonian_rhs(m);
    let mut max_h: f64 = 0.0;
    let tol = c.tol_h * scale;
    let mut check = |s: f64, y: &DVector<f64>| -> Result<()> {
        let x = y.rows(0, d).into_owned();
        let xi = y.rows(d, d).into_owned();
        let h = m.hamiltonian(&x, &xi)?.abs();
        max_h = max_h.max(h);
        if h > tol {
            return Err(Error::ConstraintDrift { value: h, tol, s });
        }
        Ok(())
    };
    let ev_fn;
    let event: Option<&dyn Fn(&DVector<f64>) -> f64> = match chart {
        Some(ch) => {
            ev_fn = move |y: &DVector<f64>| ch.f(&y.rows(0, d).into_owned());
            Some(&ev_fn)
        }
        None => None,
    };
    let band = c.s_band * chart.map_or(1.0, BoundaryChart::characteristic_length);
    let run = integrate(&rhs, &start.state(), start.s, c, band, event, stops, &mut check)?;
    let samples: Vec<PhasePoint> = run.s.iter().zip(&run.y).map(|(s, y)| PhasePoint::from_state(*s, y)).collect();
    let exit = match (run.event, chart) {
        (Some(i), Some(ch)) => {
            let p = samples[i].clone();
            let v = m.sharp(&p.x, &p.xi)?;
            let dfds = ch.grad(&p.x).dot(&v);
            Some(BoundaryHit { s_exit: p.s - start.s, grazing: dfds.abs() < c.tol_graze, dfds, point: p })
        }
        _ => None,
    };
    Ok(Trajectory {
        samples,
        rates: run.rates,
        status: run.status,
        exit,
        max_abs_h: max_h,
        accepted: run.accepted,
        rejected: run.rejected,
    })
}

/// Flows a null phase point up to the trapped cap.
pub fn flow(m: &MetricField, start: &PhasePoint, c: &FlowControls) -> Result<Trajectory> {
    run_flow(m, start, c, None, &[])
}

/// Flows a null phase point, landing exactly on each of `stops`.
pub fn flow_with_stops(m: &MetricField, start: &PhasePoint, c: &FlowControls, stops: &[f64]) -> Result<Trajectory> {
    run_flow(m, start, c, None, stops)
}

/// Flows until the first boundary return (or the cap).
pub fn flow_to_boundary(m: &MetricField, chart: &BoundaryChart, start: &PhasePoint, c: &FlowControls) -> Result<Trajectory> {
    run_flow(m, start, c, Some(chart), &[])
}

/// Exit data of a trajectory produced by [`flow_to_boundary`].
pub fn boundary_event(traj: &Trajectory, c: &FlowControls) -> Result<BoundaryHit> {
    match (&traj.exit, traj.status) {
        (Some(hit), _) => Ok(hit.clone()),
        (None, TrajectoryStatus::LeftChart) => Err(Error::LeftChart { s: traj.last().s }),
        (None, _) => Err(Error::Trapped { cap: c.max_length }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::families;
    use crate::pseries::TruncatedSeries;
    use nalgebra::DMatrix;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    fn disk() -> BoundaryChart {
        BoundaryChart::DiskCartesian { exterior: false }
    }

    #[test]
    fn minkowski_lines() {
        let m = families::minkowski(2);
        let start = PhasePoint::new(v(&[0.0, 1.0, 0.0]), v(&[-1.0, -1.0, 0.0]));
        let c = FlowControls { max_length: 3.0, ..Default::default() };
        let tr = flow(&m, &start, &c).unwrap();
        assert_eq!(tr.status, TrajectoryStatus::TrappedCap);
        for p in &tr.samples {
            let expect = v(&[p.s, 1.0 - p.s, 0.0]);
            assert!((&p.x - expect).amax() < 1e-13);
        }
        assert!((tr.last().s - 3.0).abs() < 1e-12);
    }

    #[test]
    fn chord_exits() {
        let m = families::disk_cylinder_cartesian();
        let c = FlowControls::default();
        let cases = [([-1.0, 0.0], [2.0, -1.0, 0.0], 2.0), ([-0.8, 0.6], [1.6, -0.28, 0.96], 1.6)];
        for (dir, exit, len) in cases {
            // v = (1, dir) is null; ξ = g v
            let xi = v(&[-1.0, dir[0], dir[1]]);
            let tr = flow_to_boundary(&m, &disk(), &PhasePoint::new(v(&[0.0, 1.0, 0.0]), xi), &c).unwrap();
            let hit = boundary_event(&tr, &c).unwrap();
            assert!((&hit.point.x - v(&exit)).amax() < 1e-10, "{:?}", hit.point.x);
            assert!((hit.s_exit - len).abs() < 1e-10);
            assert!(disk().f(&hit.point.x).abs() <= 1e-12);
            assert!(!hit.grazing);
        }
    }

    #[test]
    fn polar_radial_chord() {
        let m = families::disk_cylinder_polar();
        let chart = BoundaryChart::DiskPolar { exterior: false };
        let c = FlowControls::default();
        let tr = flow_to_boundary(&m, &chart, &PhasePoint::new(v(&[0.0, 1.0, 0.3]), v(&[-1.0, -1.0, 0.0])), &c).unwrap();
        let hit = boundary_event(&tr, &c).unwrap();
        // time advance equals the spatial chord length 2
        assert!((hit.point.x[0] - 2.0).abs() < 1e-10);
        assert!((hit.point.x[1] + 1.0).abs() < 1e-10);
    }

    #[test]
    fn flat_boundary_traps() {
        let m = families::minkowski(2);
        let chart = BoundaryChart::HalfSpace { n: 2 };
        let c = FlowControls { max_length: 20.0, ..Default::default() };
        let tr = flow_to_boundary(&m, &chart, &PhasePoint::new(v(&[0.0; 3]), v(&[-1.0, 0.6, 0.8])), &c).unwrap();
        assert_eq!(tr.status, TrajectoryStatus::TrappedCap);
        assert!(matches!(boundary_event(&tr, &c), Err(Error::Trapped { .. })));
    }

    #[test]
    fn non_null_start_rejected() {
        let m = families::minkowski(2);
        let r = flow(&m, &PhasePoint::new(v(&[0.0; 3]), v(&[-1.0, 0.0, 0.0])), &FlowControls::default());
        assert!(matches!(r, Err(Error::Causality(_))));
    }

    fn bump_metric() -> MetricField {
        // η + (0.3 x² + 0.2 x y) dy² + 0.1 t y (dt dx + dx dt)
        let (nv, k) = (3, 4);
        let x = TruncatedSeries::variable(nv, k, 1);
        let y = TruncatedSeries::variable(nv, k, 2);
        let t = TruncatedSeries::variable(nv, k, 0);
        let base = families::minkowski(2);
        let w = &(&x * &x).scale(0.3) + &(&x * &y).scale(0.2);
        let h = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let m1 = families::perturbed(&base, &w, &h).unwrap();
        let h2 = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        families::perturbed(&m1, &(&t * &y).scale(0.1), &h2).unwrap()
    }

    fn null_covector(m: &MetricField, x: &DVector<f64>, spatial: [f64; 2]) -> DVector<f64> {
        // v = (1, a·spatial) with a chosen so that g(v, v) = 0
        let g = m.eval(x);
        let e0 = v(&[1.0, 0.0, 0.0]);
        let s = v(&[0.0, spatial[0], spatial[1]]);
        let (a2, a1, a0) = (s.dot(&(&g * &s)), 2.0 * e0.dot(&(&g * &s)), e0.dot(&(&g * &e0)));
        let a = (-a1 + (a1 * a1 - 4.0 * a2 * a0).sqrt()) / (2.0 * a2);
        g * (e0 + s * a)
    }

    #[test]
    fn energy_and_reversibility_on_bump_family() {
        let m = bump_metric();
        let c = FlowControls::default();
        for th in [2.0f64, 2.6, 3.1, 3.9] {
            let x = disk().point(&[0.0, 0.2]).unwrap();
            let xi = null_covector(&m, &x, [th.cos(), th.sin()]);
            let start = PhasePoint::new(x.clone(), xi);
            let tr = flow_to_boundary(&m, &disk(), &start, &c).unwrap();
            assert!(tr.max_abs_h <= 1e-9);
            let hit = boundary_event(&tr, &c).unwrap();
            let back = flow_to_boundary(&m, &disk(), &hit.point.reversed(), &c).unwrap();
            let ret = boundary_event(&back, &c).unwrap();
            assert!((&ret.point.x - &x).amax() < 1e-7);
            assert!((&ret.point.xi + &start.xi).amax() < 1e-7);
        }
    }

    #[test]
    fn step_halving_order() {
        let m = bump_metric();
        let x = disk().point(&[0.0, 0.2]).unwrap();
        let start = PhasePoint::new(x.clone(), null_covector(&m, &x, [-0.9, -0.3]));
        let exit_at = |c: &FlowControls| boundary_event(&flow_to_boundary(&m, &disk(), &start, c).unwrap(), c).unwrap();
        let reference = exit_at(&FlowControls { rtol: 1e-13, atol: 1e-15, h_max: 0.01, ..Default::default() });
        let hs = [0.4, 0.2, 0.1, 0.05];
        let errs: Vec<f64> = hs
            .iter()
            .map(|&h| {
                let c = FlowControls { fixed_step: Some(h), tol_h: 1e-3, ..Default::default() };
                (&exit_at(&c).point.x - &reference.point.x).amax()
            })
            .collect();
        let slopes: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
        let mean = slopes.iter().sum::<f64>() / slopes.len() as f64;
        assert!((mean - 5.0).abs() < 0.5, "errors {errs:?} slopes {slopes:?}");
    }

    #[test]
    fn hermite_dense_output() {
        let m = bump_metric();
        let x = disk().point(&[0.0, 0.2]).unwrap();
        let start = PhasePoint::new(x.clone(), null_covector(&m, &x, [-1.0, 0.1]));
        let c = FlowControls { h_max: 0.02, ..Default::default() };
        let tr = flow_to_boundary(&m, &disk(), &start, &c).unwrap();
        let s = 0.5 * (tr.samples[3].s + tr.samples[4].s);
        let p = tr.interpolate(s).unwrap();
        let exact = flow_with_stops(&m, &start, &FlowControls { max_length: s + 0.1, ..c.clone() }, &[s]).unwrap();
        let q = exact.samples.iter().find(|q| q.s == s).unwrap();
        assert!((&p.x - &q.x).amax() < 1e-8);
    }

    #[test]
    fn csv_dump() {
        let m = families::minkowski(2);
        let c = FlowControls { max_length: 0.05, ..Default::default() };
        let tr = flow(&m, &PhasePoint::new(v(&[0.0; 3]), v(&[-1.0, 1.0, 0.0])), &c).unwrap();
        let csv = tr.to_csv(&m).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "s,x0,x1,x2,xi0,xi1,xi2,H");
        assert_eq!(lines.count(), tr.samples.len());
    }
}
