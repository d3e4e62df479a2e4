//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Count of (negative, zero, positive) eigenvalues of a symmetric matrix.
pub fn inertia(m: &DMatrix<f64>, tol: f64) -> (usize, usize, usize) {
    let eig = m.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    let mut neg = 0;
    let mut zero = 0;
    let mut pos = 0;
    for &l in eig.eigenvalues.iter() {
        if l < -tol * scale {
            neg += 1;
        } else if l > tol * scale {
            pos += 1;
        } else {
            zero += 1;
        }
    }
    (neg, zero, pos)
}

pub fn is_lorentzian(m: &DMatrix<f64>) -> bool {
    let (neg, zero, _) = inertia(m, 1e-12);
    neg == 1 && zero == 0
}

pub fn symmetry_defect(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

/// `g(u, w)`.
pub fn bilinear(g: &DMatrix<f64>, u: &DVector<f64>, w: &DVector<f64>) -> f64 {
    u.dot(&(g * w))
}

/// Least-squares solution of `A x = b` by SVD; returns the solution and the
/// singular values (descending) so callers can judge conditioning.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, Vec<f64>)> {
    let svd = a.clone().svd(true, true);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    let eps = sv.first().copied().unwrap_or(0.0) * 1e-13;
    let x = svd
        .solve(b, eps)
        .map_err(|e| Error::IllConditioned(format!("SVD solve failed: {e}")))?;
    Ok((x, sv))
}

/// Gram–Schmidt with respect to an indefinite form; the first vector must be
/// timelike and the rest spacelike after projection. Returns a `g`-orthonormal
/// frame spanning the same space.
pub fn lorentz_orthonormalize(g: &DMatrix<f64>, vectors: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let mut frame: Vec<DVector<f64>> = Vec::with_capacity(vectors.len());
    let mut norms: Vec<f64> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let mut w = v.clone();
        for (e, n) in frame.iter().zip(&norms) {
            let c = bilinear(g, &w, e) / n;
            w -= e * c;
        }
        let q = bilinear(g, &w, &w);
        if q.abs() < 1e-14 {
            return Err(Error::Signature("null vector in Gram-Schmidt frame".into()));
        }
        let w = w / q.abs().sqrt();
        norms.push(q.signum());
        frame.push(w);
    }
    Ok(frame)
}
