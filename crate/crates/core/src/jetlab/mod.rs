//! Boundary jets: normal coordinates, normalization of metric pairs, jet
//! comparison, and probes of the second fundamental form and light cone.

mod lightcone;
mod normal;
mod normalize;
mod sensitivity;
mod sff;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pseries::SeriesMatrix;


pub use lightcone::{cone_identity_defect, lightcone_fit, null_samples, LightConeFit, LightConeSample};
pub use normal::{normal_coordinates, NormalCoordinates};
pub use sensitivity::{sensitivity_experiment, SensitivityOptions, SensitivityPoint, SensitivityReport};
pub use sff::{convexity_probe, recover_sff, second_fundamental_form, DirectionEstimate, SffOptions, SffRecovery};
pub use normalize::{normalize_pair, synthetic_pair, NormalizeOptions, NormalizedPair, SyntheticPair};




/// Default tolerance of normal-block residuals and jet agreement.
pub const TOL_JET: f64 = 1e-8;

/// Taylor coefficients in the normal variable of the tangential block of a
/// metric in boundary normal form, at a boundary base point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JetTable {
    pub base_point: Vec<f64>,
    pub order: usize,
    /// `coeffs[k][α][β]`: coefficient of `s^k` in `g_{αβ}`.
    pub coeffs: Vec<Vec<Vec<f64>>>,
    /// `max |g_{in} − δ_{in}|` over all coefficients up to `order`.
    pub normal_block_residual: f64,
}

impl JetTable {
    /// Reads the table off a metric series whose last variable is the normal
    /// one and whose other variables vanish at the base point.
    pub fn from_series(base_point: Vec<f64>, g: &SeriesMatrix, order: usize) -> Self {
        let d = g.nrows();
        let n = d - 1;
        let coeffs = (0..=order)
            .map(|k| {
                let mut e = vec![0; d];
                e[n] = k as u32;
                (0..n).map(|a| (0..n).map(|b| g.get(a, b).coeff(&e)).collect()).collect()
            })
            .collect();
        let mut residual: f64 = 0.0;
        for i in 0..d {
            let target = if i == n { 1.0 } else { 0.0 };
            let defect = g.get(i, n).add_constant(-target);
            for (e, c) in defect.terms() {
                if e.iter().sum::<u32>() as usize <= order {
                    residual = residual.max(c.abs());
                }
            }
        }
        Self { base_point, order, coeffs, normal_block_residual: residual }
    }

    pub fn tangential_dim(&self) -> usize {
        self.coeffs.first().map_or(0, |c| c.len())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("jet tables serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("jet table: {e}")))
    }

    /// Largest coefficient difference at order `k`.
    pub fn order_diff(&self, other: &Self, k: usize) -> Result<f64> {
        let (a, b) = match (self.coeffs.get(k), other.coeffs.get(k)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::InvalidInput(format!("jet order {k} not present in both tables"))),
        };
        if a.len() != b.len() {
            return Err(Error::ShapeMismatch(format!("jet blocks {} vs {}", a.len(), b.len())));
        }
        Ok(a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderComparison {
    pub k: usize,
    pub max_diff: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JetComparison {
    pub orders: Vec<OrderComparison>,
    pub first_mismatch: Option<usize>,
    pub pass: bool,
}

/// Tolerance at order `k`: `base · 10^{k/2}`; higher coefficients come from
/// more differentiations and carry larger rounding.
pub fn jet_tolerance(base: f64, k: usize) -> f64 {
    base * 10f64.powf(k as f64 / 2.0)
}

/// Compares two jet tables order by order up to `order`.
pub fn jet_compare(a: &JetTable, b: &JetTable, order: usize, base_tol: f64) -> Result<JetComparison> {
    let mut orders = Vec::with_capacity(order + 1);
    for k in 0..=order {
        let max_diff = a.order_diff(b, k)?;
        let tolerance = jet_tolerance(base_tol, k);
        orders.push(OrderComparison { k, max_diff, tolerance, pass: max_diff <= tolerance });
    }
    let first_mismatch = orders.iter().find(|o| !o.pass).map(|o| o.k);
    Ok(JetComparison { orders, first_mismatch, pass: first_mismatch.is_none() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pseries::TruncatedSeries;

    fn table(c1: f64) -> JetTable {
        let g = SeriesMatrix::from_fn(2, 2, |i, j| {
            let mut s = TruncatedSeries::constant(2, 3, if i == j { if i == 0 { -1.0 } else { 1.0 } } else { 0.0 });
            if i == 0 && j == 0 {
                s.set_coeff(&[0, 1], c1);
            }
            s
        });
        JetTable::from_series(vec![0.0, 0.0], &g, 3)
    }

    #[test]
    fn table_reads_normal_axis() {
        let t = table(0.5);
        assert_eq!(t.coeffs[0][0][0], -1.0);
        assert_eq!(t.coeffs[1][0][0], 0.5);
        assert_eq!(t.normal_block_residual, 0.0);
        assert_eq!(t.tangential_dim(), 1);
    }

    #[test]
    fn json_round_trip() {
        let t = table(0.25);
        assert_eq!(JetTable::from_json(&t.to_json()).unwrap(), t);
    }

    #[test]
    fn compare_finds_first_mismatch() {
        let r = jet_compare(&table(0.5), &table(0.5 + 1e-3), 3, 1e-6).unwrap();
        assert_eq!(r.first_mismatch, Some(1));
        assert!(!r.pass);
        let r = jet_compare(&table(0.5), &table(0.5 + 1e-9), 3, 1e-6).unwrap();
        assert!(r.pass);
    }
}
