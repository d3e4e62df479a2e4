//! Recovery of a symmetric perturbation `h` from its values on vectors, split
//! as `h = c·g₀ + f` with `f₀₀ = 0`. Null samples alone see only `f`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::metric::TOL_NULL;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightConeSample {
    pub v: Vec<f64>,
    /// Observed `h(v, v)`.
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LightConeFit {
    /// Multiple of `g₀`; zero when no sample is off the cone.
    pub c: f64,
    pub c_identifiable: bool,
    /// The cone-visible part, normalized by `f₀₀ = 0`.
    pub h_recovered: Vec<Vec<f64>>,
    /// `c·g₀ + f`.
    pub h_full: Vec<Vec<f64>>,
    /// RMS of `h(v, v) − q` over the samples.
    pub residual: f64,
    pub singular_values: Vec<f64>,
}

impl LightConeFit {
    pub fn h_full_matrix(&self) -> DMatrix<f64> {
        let d = self.h_full.len();
        DMatrix::from_fn(d, d, |i, j| self.h_full[i][j])
    }

    pub fn f_matrix(&self) -> DMatrix<f64> {
        let d = self.h_recovered.len();
        DMatrix::from_fn(d, d, |i, j| self.h_recovered[i][j])
    }
}

/// Least-squares fit of `h` from samples `(v, h(v, v))`.
pub fn lightcone_fit(g0: &DMatrix<f64>, samples: &[LightConeSample]) -> Result<LightConeFit> {
    let d = g0.nrows();
    if g0.ncols() != d || !linalg::is_lorentzian(g0) {
        return Err(Error::Signature("reference form must be Lorentzian".into()));
    }
    if g0[(0, 0)].abs() < 1e-12 {
        return Err(Error::Degeneracy("g₀₀ = 0: the normalization f₀₀ = 0 does not fix c".into()));
    }
    let vs: Vec<DVector<f64>> = samples
        .iter()
        .map(|s| {
            if s.v.len() != d {
                return Err(Error::Arity { expected: d, got: s.v.len() });
            }
            Ok(DVector::from_vec(s.v.clone()))
        })
        .collect::<Result<_>>()?;
    let c_identifiable = vs.iter().any(|v| linalg::bilinear(g0, v, v).abs() > TOL_NULL * v.norm_squared().max(1.0));
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|a| (a..d).map(move |b| (a, b))).filter(|&p| p != (0, 0)).collect();
    let unknowns = pairs.len() + c_identifiable as usize;
    if vs.len() < unknowns {
        return Err(Error::IllConditioned(format!("{} samples for {unknowns} unknowns", vs.len())));
    }
    let a = DMatrix::from_fn(vs.len(), unknowns, |r, k| {
        let v = &vs[r];
        if k == pairs.len() {
            return linalg::bilinear(g0, v, v);
        }
        let (i, j) = pairs[k];
        if i == j {
            v[i] * v[j]
        } else {
            2.0 * v[i] * v[j]
        }
    });
    let b = DVector::from_iterator(vs.len(), samples.iter().map(|s| s.q));
    let (sol, sv) = linalg::least_squares(&a, &b)?;
    if sv.len() < unknowns || sv[unknowns - 1] < 1e-10 * sv[0] {
        return Err(Error::IllConditioned(format!(
            "samples are not in general position: need {unknowns} independent conditions"
        )));
    }
    let mut f = DMatrix::zeros(d, d);
    for (k, &(i, j)) in pairs.iter().enumerate() {
        f[(i, j)] = sol[k];
        f[(j, i)] = sol[k];
    }
    let c = if c_identifiable { sol[pairs.len()] } else { 0.0 };
    let full = g0 * c + &f;
    let r = &a * &sol - &b;
    let to_rows = |m: &DMatrix<f64>| (0..d).map(|i| m.row(i).iter().copied().collect()).collect();
    Ok(LightConeFit {
        c,
        c_identifiable,
        h_recovered: to_rows(&f),
        h_full: to_rows(&full),
        residual: (r.norm_squared() / vs.len() as f64).sqrt(),
        singular_values: sv,
    })
}

/// Random future-pointing `g₀`-null vectors with `v⁰ = 1`.
pub fn null_samples<R: Rng>(g0: &DMatrix<f64>, count: usize, rng: &mut R) -> Result<Vec<DVector<f64>>> {
    let d = g0.nrows();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut w = DVector::from_fn(d, |i, _| if i == 0 { 0.0 } else { rng.gen_range(-1.0..1.0) });
        if w.norm() < 1e-3 {
            continue;
        }
        w /= w.norm();
        // g₀(e₀ + λw, e₀ + λw) = 0
        let e0 = DVector::from_fn(d, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let (a, b, c) = (linalg::bilinear(g0, &w, &w), 2.0 * linalg::bilinear(g0, &e0, &w), g0[(0, 0)]);
        let disc = b * b - 4.0 * a * c;
        if !(a > 0.0 && disc >= 0.0) {
            return Err(Error::Signature("e₀ is not timelike for the reference form".into()));
        }
        let lambda = (-b + disc.sqrt()) / (2.0 * a);
        out.push(e0 + w * lambda);
    }
    Ok(out)
}

/// Defect of `−h₀₀ = hₙₙ = h_{n−1,n−1}` and `h₀ₙ = h_{0,n−1} = h_{n,n−1} = 0`,
/// the identities satisfied by any form vanishing on the Minkowski cone.
pub fn cone_identity_defect(h: &DMatrix<f64>) -> f64 {
    let n = h.nrows() - 1;
    [
        h[(0, 0)] + h[(n, n)],
        h[(n, n)] - h[(n - 1, n - 1)],
        h[(0, n)],
        h[(0, n - 1)],
        h[(n, n - 1)],
    ]
    .iter()
    .map(|x| x.abs())
    .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::families::eta;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn samples(g0: &DMatrix<f64>, h: &DMatrix<f64>, count: usize, seed: u64, with_e0: bool) -> Vec<LightConeSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vs = null_samples(g0, count, &mut rng).unwrap();
        if with_e0 {
            vs.push(DVector::from_fn(g0.nrows(), |i, _| if i == 0 { 1.0 } else { 0.0 }));
        }
        vs.into_iter()
            .map(|v| LightConeSample { q: linalg::bilinear(h, &v, &v), v: v.iter().copied().collect() })
            .collect()
    }

    #[test]
    fn zero_data_gives_zero() {
        let g0 = eta(3);
        let fit = lightcone_fit(&g0, &samples(&g0, &DMatrix::zeros(3, 3), 20, 1, true)).unwrap();
        assert_eq!(fit.c, 0.0);
        assert!(fit.f_matrix().amax() < 1e-14);
    }

    #[test]
    fn multiple_of_metric() {
        let g0 = eta(4);
        let fit = lightcone_fit(&g0, &samples(&g0, &(&g0 * 3.0), 30, 2, true)).unwrap();
        assert!((fit.c - 3.0).abs() < 1e-10);
        assert!(fit.f_matrix().amax() < 1e-10);
        assert!(cone_identity_defect(&fit.h_full_matrix()) < 1e-10);
    }

    #[test]
    fn cone_invisible_part_has_identities() {
        // h₀₀ = −1 and vanishing on the cone forces h = η
        let g0 = eta(3);
        let fit = lightcone_fit(&g0, &samples(&g0, &g0, 15, 3, true)).unwrap();
        let h = fit.h_full_matrix();
        assert!((h[(0, 0)] + 1.0).abs() < 1e-10);
        assert!(cone_identity_defect(&h) < 1e-10);
    }

    #[test]
    fn null_samples_leave_c_free() {
        let g0 = eta(3);
        let mut h = DMatrix::zeros(3, 3);
        h[(1, 2)] = 0.4;
        h[(2, 1)] = 0.4;
        h[(1, 1)] = -0.2;
        let h = &h + &g0 * 2.0;
        let fit = lightcone_fit(&g0, &samples(&g0, &h, 20, 4, false)).unwrap();
        assert!(!fit.c_identifiable);
        assert_eq!(fit.c, 0.0);
        // f is h minus its multiple of g₀ fixed by f₀₀ = 0
        let want = &h - &g0 * (h[(0, 0)] / g0[(0, 0)]);
        assert!((fit.f_matrix() - want).amax() < 1e-10);
    }

    #[test]
    fn too_few_samples_is_reported() {
        let g0 = eta(3);
        let s = samples(&g0, &g0, 3, 5, false);
        assert!(matches!(lightcone_fit(&g0, &s), Err(Error::IllConditioned(_))));
    }
}
