use nalgebra::DMatrix;

use super::TruncatedSeries;
use crate::error::{Error, Result};

/// Dense matrix whose entries are truncated series of a common shape.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<TruncatedSeries>,
}

impl SeriesMatrix {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> TruncatedSeries) -> Self {
        let mut entries = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                entries.push(f(i, j));
            }
        }
        Self { rows, cols, entries }
    }

    pub fn from_constant(m: &DMatrix<f64>, num_vars: usize, degree: u32) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| TruncatedSeries::constant(num_vars, degree, m[(i, j)]))
    }

    pub fn identity(n: usize, num_vars: usize, degree: u32) -> Self {
        Self::from_constant(&DMatrix::identity(n, n), num_vars, degree)
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &TruncatedSeries {
        &self.entries[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, s: TruncatedSeries) {
        self.entries[i * self.cols + j] = s;
    }

    pub fn entries(&self) -> &[TruncatedSeries] {
        &self.entries
    }

    pub fn map(&self, f: impl Fn(&TruncatedSeries) -> TruncatedSeries) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(f).collect(),
        }
    }

    pub fn try_map(&self, f: impl Fn(&TruncatedSeries) -> Result<TruncatedSeries>) -> Result<Self> {
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(f).collect::<Result<_>>()?,
        })
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).clone())
    }

    pub fn column(&self, j: usize) -> Vec<TruncatedSeries> {
        (0..self.rows).map(|i| self.get(i, j).clone()).collect()
    }

    pub fn from_columns(cols: &[Vec<TruncatedSeries>]) -> Self {
        let rows = cols.first().map_or(0, Vec::len);
        Self::from_fn(rows, cols.len(), |i, j| cols[j][i].clone())
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a.checked_add(b))
                .collect::<Result<_>>()?,
        })
    }

    pub fn checked_sub(&self, other: &Self) -> Result<Self> {
        self.checked_add(&other.scale(-1.0))
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|s| s.scale(k))
    }

    pub fn scale_series(&self, s: &TruncatedSeries) -> Result<Self> {
        self.try_map(|e| e.checked_mul(s))
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch(format!(
                "matrix {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    pub fn checked_mul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "matrix product {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut entries = Vec::with_capacity(self.rows * other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = self.get(i, 0).checked_mul(other.get(0, j))?;
                for k in 1..self.cols {
                    acc = acc.checked_add(&self.get(i, k).checked_mul(other.get(k, j))?)?;
                }
                entries.push(acc);
            }
        }
        Ok(Self { rows: self.rows, cols: other.cols, entries })
    }

    /// Matrix-vector product with a vector of series.
    pub fn apply(&self, v: &[TruncatedSeries]) -> Result<Vec<TruncatedSeries>> {
        if v.len() != self.cols {
            return Err(Error::ShapeMismatch(format!("apply: {} columns, vector of {}", self.cols, v.len())));
        }
        (0..self.rows)
            .map(|i| {
                let mut acc = self.get(i, 0).checked_mul(&v[0])?;
                for k in 1..self.cols {
                    acc = acc.checked_add(&self.get(i, k).checked_mul(&v[k])?)?;
                }
                Ok(acc)
            })
            .collect()
    }

    /// Bilinear form `uᵀ M w`.
    pub fn bilinear(&self, u: &[TruncatedSeries], w: &[TruncatedSeries]) -> Result<TruncatedSeries> {
        let mw = self.apply(w)?;
        let mut acc = u[0].checked_mul(&mw[0])?;
        for k in 1..u.len() {
            acc = acc.checked_add(&u[k].checked_mul(&mw[k])?)?;
        }
        Ok(acc)
    }

    pub fn constant_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).constant_term())
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).eval(x))
    }

    pub fn partial(&self, var: usize) -> Result<Self> {
        self.try_map(|s| s.partial(var))
    }

    pub fn with_degree(&self, degree: u32) -> Self {
        self.map(|s| s.with_degree(degree))
    }

    pub fn compose(&self, args: &[TruncatedSeries]) -> Result<Self> {
        let entries = TruncatedSeries::compose_many(&self.entries, args)?;
        Ok(Self { rows: self.rows, cols: self.cols, entries })
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_same(other)?;
        self.entries
            .iter()
            .zip(&other.entries)
            .try_fold(0.0f64, |m, (a, b)| Ok(m.max(a.max_abs_diff(b)?)))
    }

    /// Inverse of a square matrix with invertible constant part, by Newton
    /// iteration `X ← X (2I − M X)` from the inverse of the constant part.
    pub fn inverse(&self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(Error::ShapeMismatch(format!("inverse of {}x{} matrix", self.rows, self.cols)));
        }
        let Some(first) = self.entries.first() else {
            return Ok(self.clone());
        };
        let (nvars, degree) = (first.num_vars(), first.max_total_degree());
        let c = self.constant_matrix();
        let c_inv = c
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SingularInput(format!("constant part not invertible: {c}")))?;
        let mut x = Self::from_constant(&c_inv, nvars, degree);
        let two = Self::identity(self.rows, nvars, degree).scale(2.0);
        // precision doubles per step: 1, 2, 4, ...
        let mut reached = 1u32;
        while reached <= degree {
            let mx = self.checked_mul(&x)?;
            x = x.checked_mul(&two.checked_sub(&mx)?)?;
            reached *= 2;
        }
        let reliable = self
            .entries
            .iter()
            .map(TruncatedSeries::reliable_degree)
            .fold(Some(degree), |a, b| match (a, b) {
                (Some(x), Some(y)) => Some(x.min(y)),
                _ => None,
            });
        Ok(x.map(|s| s.clone().with_reliable_degree(reliable)))
    }

    /// Determinant by cofactor expansion (intended for dimensions up to five).
    pub fn det(&self) -> Result<TruncatedSeries> {
        if self.rows != self.cols || self.rows == 0 {
            return Err(Error::ShapeMismatch(format!("det of {}x{} matrix", self.rows, self.cols)));
        }
        let idx: Vec<usize> = (0..self.rows).collect();
        self.det_sub(&idx, &idx)
    }

    fn det_sub(&self, rows: &[usize], cols: &[usize]) -> Result<TruncatedSeries> {
        if rows.len() == 1 {
            return Ok(self.get(rows[0], cols[0]).clone());
        }
        let r0 = rows[0];
        let rest: Vec<usize> = rows[1..].to_vec();
        let mut acc: Option<TruncatedSeries> = None;
        for (k, &c) in cols.iter().enumerate() {
            let entry = self.get(r0, c);
            if entry.is_zero() {
                continue;
            }
            let sub_cols: Vec<usize> = cols.iter().copied().filter(|&j| j != c).collect();
            let term = entry.checked_mul(&self.det_sub(&rest, &sub_cols)?)?;
            let term = if k % 2 == 0 { term } else { term.scale(-1.0) };
            acc = Some(match acc {
                None => term,
                Some(a) => a.checked_add(&term)?,
            });
        }
        Ok(acc.unwrap_or_else(|| {
            let e = self.get(r0, cols[0]);
            TruncatedSeries::zero(e.num_vars(), e.max_total_degree())
        }))
    }
}
