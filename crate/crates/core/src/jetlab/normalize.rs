//! Normalization of a pair `(g, ĝ)` with conformal boundary data: find
//! `(ψ, μ)` with `ψ = Id` on the boundary so that `μ ψ*ĝ` has the block form
//! of `g` and the same `dt²` coefficient.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::normal::{cofactor_covector, normal_series};
use super::{jet_compare, JetComparison, JetTable};
use crate::chart::BoundaryChart;
use crate::error::{Error, Result};
use crate::gauge::{self, GaugeSeries, GaugeTransform};
use crate::metric::{families, MetricField};
use crate::pseries::{SeriesMatrix, TruncatedSeries};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizeOptions {
    /// Jets are produced through this power of the normal variable.
    pub normal_order: usize,
    /// Order of tangential derivatives kept along the boundary.
    pub tangential_order: usize,
    /// Admissible defect of `ĝ|_{T∂M} = μ₀ g|_{T∂M}`.
    pub tol_boundary: f64,
    pub max_iterations: usize,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        Self { normal_order: 6, tangential_order: 4, tol_boundary: 1e-10, max_iterations: 40 }
    }
}

#[derive(Clone, Debug)]
pub struct NormalizedPair {
    /// Total degree cap of all series.
    pub degree: u32,
    /// `ψ` in the normal coordinates of `ĝ / μ₀`.
    pub psi: Vec<TruncatedSeries>,
    /// Factor for `ψ`, source-side.
    pub mu_src: TruncatedSeries,
    /// The composite map into the chart of `ĝ`.
    pub psi_total: Vec<TruncatedSeries>,
    /// Factor of the composite, source-side, including `1/μ₀`.
    pub mu_total_src: TruncatedSeries,
    /// `μ ψ*ĝ` as a series, reliable through degree `degree − 1`.
    pub metric: SeriesMatrix,
    pub jet: JetTable,
    /// Jets of `g`.
    pub reference: JetTable,
    /// Largest coefficient of `ψ − Id` that is linear in the normal variable.
    pub psi_normal_defect: f64,
    pub boundary_defect: f64,
    pub iterations: usize,
}

impl NormalizedPair {
    /// The composite `(ψ, μ)` as a gauge transform acting on `ĝ`.
    pub fn transform(&self) -> GaugeTransform {
        GaugeTransform::from_series(
            "normalizing",
            GaugeSeries { psi: self.psi_total.clone(), mu_src: self.mu_total_src.clone() },
        )
    }

    pub fn compare(&self, base_tol: f64) -> Result<JetComparison> {
        jet_compare(&self.jet, &self.reference, self.jet.order, base_tol)
    }
}

fn metric_series(m: &MetricField, degree: u32, what: &str) -> Result<SeriesMatrix> {
    let origin = DVector::zeros(m.dim());
    m.series()
        .ok_or_else(|| Error::InvalidInput(format!("{what} metric {} has no series", m.name())))?
        .recentered(&origin, degree)
}

/// `μ₀` as a series in all `n + 1` variables.
fn boundary_factor(mu0: &TruncatedSeries, d: usize, degree: u32) -> Result<TruncatedSeries> {
    let n = d - 1;
    let lifted = if mu0.num_vars() == n {
        mu0.with_degree(degree.max(mu0.max_total_degree())).into_exact().embed(d, &(0..n).collect::<Vec<_>>())?
    } else if mu0.num_vars() == d {
        if mu0.terms().iter().any(|(e, c)| e[n] > 0 && *c != 0.0) {
            return Err(Error::InvalidInput("boundary factor μ₀ depends on the normal variable".into()));
        }
        mu0.with_degree(degree.max(mu0.max_total_degree())).into_exact()
    } else {
        return Err(Error::Arity { expected: n, got: mu0.num_vars() });
    };
    Ok(lifted.with_degree(degree))
}

fn boundary_samples(n: usize) -> Vec<DVector<f64>> {
    let vals = [-0.2, 0.0, 0.2];
    let mut out = vec![DVector::zeros(n + 1)];
    for i in 0..n {
        let mut next = Vec::new();
        for p in &out {
            for v in vals {
                let mut q = p.clone();
                q[i] = v;
                next.push(q);
            }
        }
        out = next;
    }
    out
}

/// Normalizes `ĝ` against the block-form `g` on the half-space chart at the
/// origin, given `ĝ|_{T∂M} = μ₀ g|_{T∂M}`.
pub fn normalize_pair(g: &MetricField, g_hat: &MetricField, mu0: &TruncatedSeries, opts: &NormalizeOptions) -> Result<NormalizedPair> {
    let d = g.dim();
    if g_hat.dim() != d || d < 2 {
        return Err(Error::ShapeMismatch(format!("metric dims {} and {}", d, g_hat.dim())));
    }
    let n = d - 1;
    let deg = (opts.normal_order as u32 + 1).max(opts.tangential_order as u32);
    let gs = metric_series(g, deg, "reference")?;
    for i in 0..d {
        let target = if i == n { 1.0 } else { 0.0 };
        if gs.get(i, n).add_constant(-target).max_abs_coeff() > 1e-12 {
            return Err(Error::InvalidInput(format!("reference metric {} is not in block form", g.name())));
        }
    }
    let ghs = metric_series(g_hat, deg + 1, "second")?;
    let mu0 = boundary_factor(mu0, d, deg + 1)?;

    let mut boundary_defect: f64 = 0.0;
    for x in boundary_samples(n) {
        let m0 = mu0.eval(x.as_slice());
        if !(m0 > 0.0) {
            return Err(Error::InvalidInput(format!("μ₀ = {m0} is not positive at {:?}", x.as_slice())));
        }
        let (a, b) = (g.eval(&x), g_hat.eval(&x));
        for i in 0..n {
            for j in 0..n {
                boundary_defect = boundary_defect.max((b[(i, j)] - m0 * a[(i, j)]).abs() / a[(i, j)].abs().max(1.0));
            }
        }
    }
    if boundary_defect > opts.tol_boundary {
        return Err(Error::InvalidInput(format!(
            "boundary metrics are not conformal by μ₀: defect {boundary_defect:e}"
        )));
    }

    // normal coordinates of ĝ / μ₀
    let scaled = ghs.scale_series(&mu0.recip()?)?;
    let origin = DVector::zeros(d);
    let mut inward = DVector::zeros(d);
    inward[n] = 1.0;
    let z = BoundaryChart::HalfSpace { n }.param_series(&vec![0.0; n], deg + 1)?;
    let (x1, g2) = normal_series(&scaled, &origin, &z, &inward, deg as usize)?;

    // Picard iteration for ψ: ψ(x′, 0) = x′ and ∂ₙψ chosen so that the
    // normal column is orthogonal, unit after scaling, and μ matches g₀₀
    let ident: Vec<TruncatedSeries> = (0..d).map(|i| TruncatedSeries::variable(d, deg, i)).collect();
    let g00 = gs.get(0, 0).clone();
    let mut psi = ident.clone();
    let mut iterations = 0;
    for it in 0..opts.max_iterations {
        iterations = it + 1;
        let cols: Vec<Vec<TruncatedSeries>> =
            (0..n).map(|a| psi.iter().map(|c| c.partial(a)).collect::<Result<_>>()).collect::<Result<_>>()?;
        let gpsi = g2.compose(&psi)?;
        let mut omega = cofactor_covector(&cols)?;
        if omega[n].constant_term() < 0.0 {
            omega = omega.iter().map(|o| o.scale(-1.0)).collect();
        }
        let raised = gpsi.inverse()?.apply(&omega)?;
        let mut q = TruncatedSeries::zero(d, deg);
        for (o, r) in omega.iter().zip(&raised) {
            q = q.checked_add(&o.checked_mul(r)?)?;
        }
        let a00 = gpsi.bilinear(&cols[0], &cols[0])?;
        let ratio = a00.checked_div(&g00)?;
        if !(ratio.constant_term() > 0.0 && q.constant_term() > 0.0) {
            return Err(Error::Signature("normalization requires a timelike first boundary direction".into()));
        }
        let lambda = ratio.checked_div(&q)?.sqrt()?;
        let mut next = Vec::with_capacity(d);
        for i in 0..d {
            let w = raised[i].checked_mul(&lambda)?.integrate(n)?;
            next.push(if i < n { ident[i].checked_add(&w)? } else { w });
        }
        let change = next.iter().zip(&psi).map(|(a, b)| a.max_abs_diff(b)).collect::<Result<Vec<_>>>()?;
        psi = next;
        if change.into_iter().fold(0.0, f64::max) < 1e-15 {
            break;
        }
    }

    let jac = SeriesMatrix::from_columns(
        &(0..d).map(|a| psi.iter().map(|c| c.partial(a)).collect::<Result<Vec<_>>>()).collect::<Result<Vec<_>>>()?,
    );
    let gpsi = g2.compose(&psi)?;
    let a0 = jac.column(0);
    let mu_src = g00.checked_div(&gpsi.bilinear(&a0, &a0)?)?;
    let metric = jac.transpose().checked_mul(&gpsi)?.checked_mul(&jac)?.scale_series(&mu_src)?.with_degree(deg - 1);

    let order = opts.normal_order.min(deg as usize - 1);
    let zero = vec![0.0; d];
    let jet = JetTable::from_series(zero.clone(), &metric, order);
    let reference = JetTable::from_series(zero, &gs, order);

    let mut psi_normal_defect: f64 = 0.0;
    for (i, p) in psi.iter().enumerate() {
        for (e, c) in p.checked_sub(&ident[i])?.terms() {
            if e[n] == 1 {
                psi_normal_defect = psi_normal_defect.max(c.abs());
            }
        }
    }

    let psi_total = TruncatedSeries::compose_many(&x1, &psi)?;
    let mu_total_src = mu_src.checked_div(&mu0.compose(&psi_total)?)?;
    Ok(NormalizedPair {
        degree: deg,
        psi,
        mu_src,
        psi_total,
        mu_total_src,
        metric,
        jet,
        reference,
        psi_normal_defect,
        boundary_defect,
        iterations,
    })
}

/// A block-form metric `g` and `ĝ = μ̄ ψ̄*g` for a random boundary-fixing
/// gauge `(ψ̄, μ̄)`; the two agree on the boundary (`μ₀ = 1`).
#[derive(Clone, Debug)]
pub struct SyntheticPair {
    pub g: MetricField,
    pub g_hat: MetricField,
    pub gauge: GaugeTransform,
}

fn monomials(d: usize, max_deg: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|e: Vec<u32>| {
                let used: u32 = e.iter().sum();
                (0..=max_deg - used).map(move |p| {
                    let mut f = e.clone();
                    f.push(p);
                    f
                })
            })
            .collect();
    }
    out
}

fn random_poly(rng: &mut ChaCha8Rng, d: usize, max_deg: u32, cap: u32, amp: f64) -> TruncatedSeries {
    let mut s = TruncatedSeries::zero(d, cap);
    for e in monomials(d, max_deg) {
        s.set_coeff(&e, rng.gen_range(-amp..amp));
    }
    s.into_exact()
}

/// Random gauge-equivalent pair in dimension `n + 1` on the half-space chart.
pub fn synthetic_pair(n: usize, seed: u64, amplitude: f64) -> Result<SyntheticPair> {
    let d = n + 1;
    let cap = gauge::PULLBACK_SERIES_DEGREE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tangential = SeriesMatrix::from_fn(n, n, |_, _| TruncatedSeries::zero(d, cap));
    for a in 0..n {
        for b in a..n {
            let eta = if a != b { 0.0 } else if a == 0 { -1.0 } else { 1.0 };
            let s = random_poly(&mut rng, d, 2, cap, amplitude).add_constant(eta);
            // the boundary value at the origin stays η
            let s = s.add_constant(-s.constant_term() + eta);
            tangential.set(a, b, s.clone());
            tangential.set(b, a, s);
        }
    }
    let g = families::block_form(&tangential)?.with_name(format!("synthetic-{seed}"));

    let xn = TruncatedSeries::variable(d, cap, n);
    let psi: Vec<TruncatedSeries> = (0..d)
        .map(|i| &TruncatedSeries::variable(d, cap, i) + &(&xn * &random_poly(&mut rng, d, 1, cap, amplitude)))
        .map(TruncatedSeries::into_exact)
        .collect();
    let mu_src = (&xn * &random_poly(&mut rng, d, 1, cap, amplitude)).add_constant(1.0).into_exact();
    let gauge = GaugeTransform::from_series(format!("gauge-{seed}"), GaugeSeries { psi, mu_src });
    let g_hat = gauge::pullback_metric(&gauge, &g)?;
    Ok(SyntheticPair { g, g_hat, gauge })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(n: usize) -> TruncatedSeries {
        TruncatedSeries::constant(n, 4, 1.0)
    }

    #[test]
    fn identity_pair_is_fixed() {
        let p = synthetic_pair(2, 3, 0.05).unwrap();
        let r = normalize_pair(&p.g, &p.g, &one(2), &NormalizeOptions::default()).unwrap();
        for (i, s) in r.psi.iter().enumerate() {
            assert!(s.max_abs_diff(&TruncatedSeries::variable(3, r.degree, i)).unwrap() < 1e-12);
        }
        assert!(r.mu_src.add_constant(-1.0).max_abs_coeff() < 1e-12);
        assert!(r.compare(1e-10).unwrap().pass);
    }

    #[test]
    fn gauge_equivalent_pair_recovers_jets() {
        for seed in 0..3 {
            let p = synthetic_pair(2, seed, 0.1).unwrap();
            let r = normalize_pair(&p.g, &p.g_hat, &one(2), &NormalizeOptions::default()).unwrap();
            let c = r.compare(1e-8).unwrap();
            assert!(c.pass, "seed {seed}: {c:?}");
            assert!(r.jet.normal_block_residual < 1e-8);
            assert!(r.psi_normal_defect < 1e-10, "{}", r.psi_normal_defect);
        }
    }

    #[test]
    fn composite_transform_reproduces_metric_series() {
        let p = synthetic_pair(2, 7, 0.1).unwrap();
        let r = normalize_pair(&p.g, &p.g_hat, &one(2), &NormalizeOptions::default()).unwrap();
        let pulled = gauge::pullback_metric(&r.transform(), &p.g_hat).unwrap();
        let x = DVector::from_vec(vec![0.01, -0.02, 0.015]);
        let want = pulled.eval(&x);
        let got = r.metric.eval(x.as_slice());
        assert!((want - got).amax() < 1e-9);
        // and the normalized metric agrees with g near the boundary
        assert!((p.g.eval(&x) - r.metric.eval(x.as_slice())).amax() < 1e-9);
    }

    #[test]
    fn conformal_boundary_factor() {
        // ĝ = μ₀(x′) g with μ₀ = 1 + 0.2 t: μ must undo it on the boundary
        let p = synthetic_pair(2, 11, 0.05).unwrap();
        let mu0 = TruncatedSeries::variable(2, 4, 0).scale(0.2).add_constant(1.0);
        let g_hat = families::conformal(&p.g, &mu0.embed(3, &[0, 1]).unwrap()).unwrap();
        let r = normalize_pair(&p.g, &g_hat, &mu0, &NormalizeOptions::default()).unwrap();
        let c = r.compare(1e-8).unwrap();
        assert!(c.pass, "{c:?}");
    }

    #[test]
    fn inequivalent_pair_mismatches_at_second_order() {
        let p = synthetic_pair(2, 2, 0.05).unwrap();
        let mut h = nalgebra::DMatrix::zeros(3, 3);
        h[(1, 1)] = 0.1;
        let w = TruncatedSeries::variable(3, 8, 2).powi(2);
        let g_hat = families::perturbed(&p.g, &w, &h).unwrap();
        let r = normalize_pair(&p.g, &g_hat, &one(2), &NormalizeOptions::default()).unwrap();
        let c = r.compare(1e-8).unwrap();
        assert_eq!(c.first_mismatch, Some(2));
        assert!((c.orders[2].max_diff - 0.1).abs() < 1e-10);
    }

    #[test]
    fn rejects_mismatched_boundary_data() {
        let p = synthetic_pair(2, 5, 0.05).unwrap();
        let two = one(2).scale(2.0);
        assert!(matches!(
            normalize_pair(&p.g, &p.g_hat, &two, &NormalizeOptions::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn four_dimensional_pair() {
        let p = synthetic_pair(3, 1, 0.05).unwrap();
        let opts = NormalizeOptions { normal_order: 4, tangential_order: 4, ..NormalizeOptions::default() };
        let r = normalize_pair(&p.g, &p.g_hat, &one(3), &opts).unwrap();
        assert!(r.compare(1e-8).unwrap().pass);
    }
}
