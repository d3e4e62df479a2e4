//! Multivariate truncated power series.
//!
//! A [`TruncatedSeries`] holds the Taylor coefficients of a function of
//! `num_vars` variables at a base point, for all monomials of total degree
//! `<= max_total_degree`. Arithmetic discards every term above the cap, so the
//! ring operations are exact at truncation. Shapes with at most four variables
//! and degree at most eight are stored densely over a shared graded layout;
//! larger shapes use a sparse map.
//!
//! Every series also tracks the degree through which its coefficients are
//! reliable. Differentiation lowers it by one (the top-degree coefficients of
//! `∂f` would need the truncated terms of `f`); products and compositions
//! take the minimum over their operands.

mod layout;
mod matrix;
mod text;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use crate::error::{Error, Result};
use layout::{is_dense_shape, Layout};

pub use layout::Exponent;
pub use matrix::SeriesMatrix;

#[derive(Clone)]
enum Coeffs {
    Dense(Arc<Layout>, Vec<f64>),
    Sparse(BTreeMap<Exponent, f64>),
}

/// Truncated Taylor polynomial in `num_vars` variables.
#[derive(Clone)]
pub struct TruncatedSeries {
    nvars: usize,
    degree: u32,
    reliable: Option<u32>,
    coeffs: Coeffs,
}

impl fmt::Debug for TruncatedSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TruncatedSeries")
            .field("num_vars", &self.nvars)
            .field("max_total_degree", &self.degree)
            .field("reliable_degree", &self.reliable)
            .field("terms", &self.terms())
            .finish()
    }
}

impl PartialEq for TruncatedSeries {
    fn eq(&self, other: &Self) -> bool {
        self.nvars == other.nvars && self.degree == other.degree && self.terms() == other.terms()
    }
}

fn total_degree(e: &[u32]) -> u32 {
    e.iter().sum()
}

impl TruncatedSeries {
    pub fn zero(num_vars: usize, max_total_degree: u32) -> Self {
        let coeffs = if is_dense_shape(num_vars, max_total_degree) {
            let l = layout::layout(num_vars, max_total_degree);
            let n = l.len();
            Coeffs::Dense(l, vec![0.0; n])
        } else {
            Coeffs::Sparse(BTreeMap::new())
        };
        Self {
            nvars: num_vars,
            degree: max_total_degree,
            reliable: Some(max_total_degree),
            coeffs,
        }
    }

    pub fn constant(num_vars: usize, max_total_degree: u32, c: f64) -> Self {
        let mut s = Self::zero(num_vars, max_total_degree);
        s.set_coeff(&vec![0; num_vars], c);
        s
    }

    /// The coordinate function `x_var`.
    pub fn variable(num_vars: usize, max_total_degree: u32, var: usize) -> Self {
        assert!(var < num_vars, "variable index {var} out of range for {num_vars} vars");
        let mut s = Self::zero(num_vars, max_total_degree);
        if max_total_degree >= 1 {
            let mut e = vec![0; num_vars];
            e[var] = 1;
            s.set_coeff(&e, 1.0);
        }
        s
    }

    /// Builds a series from `(exponent, coefficient)` pairs; repeated exponents
    /// accumulate and terms above the cap are dropped.
    pub fn from_terms<I>(num_vars: usize, max_total_degree: u32, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Exponent, f64)>,
    {
        let mut s = Self::zero(num_vars, max_total_degree);
        for (e, c) in terms {
            if e.len() != num_vars {
                return Err(Error::ShapeMismatch(format!(
                    "exponent {e:?} has length {} but series has {num_vars} variables",
                    e.len()
                )));
            }
            if total_degree(&e) <= max_total_degree {
                let old = s.coeff(&e);
                s.set_coeff(&e, old + c);
            }
        }
        Ok(s)
    }

    pub fn num_vars(&self) -> usize {
        self.nvars
    }

    pub fn max_total_degree(&self) -> u32 {
        self.degree
    }

    /// Degree through which all coefficients are exact; `None` when not even
    /// the constant term is.
    pub fn reliable_degree(&self) -> Option<u32> {
        self.reliable
    }

    pub fn with_reliable_degree(mut self, reliable: Option<u32>) -> Self {
        self.reliable = reliable.map(|r| r.min(self.degree));
        self
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.coeffs, Coeffs::Dense(..))
    }

    pub fn coeff(&self, e: &[u32]) -> f64 {
        match &self.coeffs {
            Coeffs::Dense(l, v) => l.index.get(e).map_or(0.0, |&i| v[i]),
            Coeffs::Sparse(m) => m.get(e).copied().unwrap_or(0.0),
        }
    }

    /// Sets one coefficient. Panics if the exponent is outside the shape.
    pub fn set_coeff(&mut self, e: &[u32], c: f64) {
        assert!(
            e.len() == self.nvars && total_degree(e) <= self.degree,
            "exponent {e:?} outside shape ({} vars, degree {})",
            self.nvars,
            self.degree
        );
        match &mut self.coeffs {
            Coeffs::Dense(l, v) => v[l.index[e]] = c,
            Coeffs::Sparse(m) => {
                if c == 0.0 {
                    m.remove(e);
                } else {
                    m.insert(e.to_vec(), c);
                }
            }
        }
    }

    pub fn constant_term(&self) -> f64 {
        match &self.coeffs {
            Coeffs::Dense(_, v) => v[0],
            Coeffs::Sparse(m) => m.get(&vec![0; self.nvars]).copied().unwrap_or(0.0),
        }
    }

    /// Non-zero terms in lexicographic exponent order.
    pub fn terms(&self) -> Vec<(Exponent, f64)> {
        match &self.coeffs {
            Coeffs::Dense(l, v) => {
                let mut t: Vec<_> = l
                    .exps
                    .iter()
                    .zip(v)
                    .filter(|(_, c)| **c != 0.0)
                    .map(|(e, c)| (e.clone(), *c))
                    .collect();
                t.sort_by(|a, b| a.0.cmp(&b.0));
                t
            }
            Coeffs::Sparse(m) => m.iter().filter(|(_, c)| **c != 0.0).map(|(e, c)| (e.clone(), *c)).collect(),
        }
    }

    /// Highest total degree carrying a non-zero coefficient.
    pub fn actual_degree(&self) -> Option<u32> {
        self.terms().iter().map(|(e, _)| total_degree(e)).max()
    }

    pub fn is_zero(&self) -> bool {
        self.terms().is_empty()
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms().iter().fold(0.0, |m, (_, c)| m.max(c.abs()))
    }

    /// Largest coefficient difference over all monomials (shapes must match).
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        Ok(self.checked_sub(other)?.max_abs_coeff())
    }

    fn check_same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.nvars != other.nvars || self.degree != other.degree {
            return Err(Error::ShapeMismatch(format!(
                "{op}: ({} vars, degree {}) vs ({} vars, degree {})",
                self.nvars, self.degree, other.nvars, other.degree
            )));
        }
        Ok(())
    }

    fn min_reliable(a: Option<u32>, b: Option<u32>) -> Option<u32> {
        match (a, b) {
            (Some(x), Some(y)) => Some(x.min(y)),
            _ => None,
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        let coeffs = match (&self.coeffs, &other.coeffs) {
            (Coeffs::Dense(l, a), Coeffs::Dense(_, b)) => {
                Coeffs::Dense(l.clone(), a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect())
            }
            (Coeffs::Sparse(a), Coeffs::Sparse(b)) => {
                let mut m = BTreeMap::new();
                for e in a.keys().chain(b.keys()) {
                    if m.contains_key(e) {
                        continue;
                    }
                    let v = f(a.get(e).copied().unwrap_or(0.0), b.get(e).copied().unwrap_or(0.0));
                    if v != 0.0 {
                        m.insert(e.clone(), v);
                    }
                }
                Coeffs::Sparse(m)
            }
            _ => unreachable!("storage is determined by shape"),
        };
        Self {
            nvars: self.nvars,
            degree: self.degree,
            reliable: Self::min_reliable(self.reliable, other.reliable),
            coeffs,
        }
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "add")?;
        Ok(self.zip_with(other, |a, b| a + b))
    }

    pub fn checked_sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "sub")?;
        Ok(self.zip_with(other, |a, b| a - b))
    }

    /// Cauchy product with every term above the degree cap discarded.
    pub fn checked_mul(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "mul")?;
        let coeffs = match (&self.coeffs, &other.coeffs) {
            (Coeffs::Dense(l, a), Coeffs::Dense(_, b)) => {
                let mut out = vec![0.0; a.len()];
                for &(i, j, k) in l.mul_table() {
                    let x = a[i as usize];
                    if x != 0.0 {
                        out[k as usize] += x * b[j as usize];
                    }
                }
                Coeffs::Dense(l.clone(), out)
            }
            (Coeffs::Sparse(a), Coeffs::Sparse(b)) => {
                let mut m: BTreeMap<Exponent, f64> = BTreeMap::new();
                for (ea, ca) in a {
                    let da = total_degree(ea);
                    for (eb, cb) in b {
                        if da + total_degree(eb) > self.degree {
                            continue;
                        }
                        let e: Exponent = ea.iter().zip(eb).map(|(x, y)| x + y).collect();
                        *m.entry(e).or_insert(0.0) += ca * cb;
                    }
                }
                m.retain(|_, c| *c != 0.0);
                Coeffs::Sparse(m)
            }
            _ => unreachable!("storage is determined by shape"),
        };
        Ok(Self {
            nvars: self.nvars,
            degree: self.degree,
            reliable: Self::min_reliable(self.reliable, other.reliable),
            coeffs,
        })
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map_coeffs(|c| c * k)
    }

    pub fn add_constant(&self, c: f64) -> Self {
        let mut s = self.clone();
        let z = vec![0; self.nvars];
        s.set_coeff(&z, self.constant_term() + c);
        s
    }

    fn map_coeffs(&self, f: impl Fn(f64) -> f64) -> Self {
        let coeffs = match &self.coeffs {
            Coeffs::Dense(l, v) => Coeffs::Dense(l.clone(), v.iter().map(|c| f(*c)).collect()),
            Coeffs::Sparse(m) => {
                Coeffs::Sparse(m.iter().map(|(e, c)| (e.clone(), f(*c))).filter(|(_, c)| *c != 0.0).collect())
            }
        };
        Self { coeffs, ..self.clone() }
    }

    /// `f(a₀ + u) = Σ_k taylor[k] u^k` evaluated with `u = self - a₀`, which has
    /// zero constant term so the sum terminates at the degree cap.
    pub fn apply_univariate(&self, taylor: &[f64]) -> Self {
        let a0 = self.constant_term();
        let u = self.add_constant(-a0);
        let order = (self.degree as usize).min(taylor.len().saturating_sub(1));
        let mut acc = Self::constant(self.nvars, self.degree, taylor.get(order).copied().unwrap_or(0.0))
            .with_reliable_degree(self.reliable);
        for k in (0..order).rev() {
            acc = acc.checked_mul(&u).expect("same shape").add_constant(taylor[k]);
        }
        acc
    }

    /// Square root with positive constant term.
    pub fn sqrt(&self) -> Result<Self> {
        let a0 = self.constant_term();
        if !(a0 > 0.0) {
            return Err(Error::SingularInput(format!(
                "square root needs a positive constant term, got {a0:e}"
            )));
        }
        // sqrt(a0 + u) = sqrt(a0) Σ binom(1/2, k) (u/a0)^k
        let mut taylor = Vec::with_capacity(self.degree as usize + 1);
        let mut binom = 1.0;
        for k in 0..=self.degree as usize {
            taylor.push(a0.sqrt() * binom / a0.powi(k as i32));
            binom *= (0.5 - k as f64) / (k as f64 + 1.0);
        }
        Ok(self.apply_univariate(&taylor))
    }

    pub fn recip(&self) -> Result<Self> {
        let a0 = self.constant_term();
        if a0 == 0.0 || !a0.is_finite() {
            return Err(Error::SingularInput("reciprocal of a series with vanishing constant term".into()));
        }
        let taylor: Vec<f64> = (0..=self.degree as i32)
            .map(|k| if k % 2 == 0 { 1.0 } else { -1.0 } / a0.powi(k + 1))
            .collect();
        Ok(self.apply_univariate(&taylor))
    }

    pub fn checked_div(&self, other: &Self) -> Result<Self> {
        self.checked_mul(&other.recip()?)
    }

    pub fn powi(&self, n: u32) -> Self {
        let mut acc = Self::constant(self.nvars, self.degree, 1.0).with_reliable_degree(self.reliable);
        for _ in 0..n {
            acc = acc.checked_mul(self).expect("same shape");
        }
        acc
    }

    /// Formal partial derivative in `var`. The shape is kept; the reliable
    /// degree drops by one.
    pub fn partial(&self, var: usize) -> Result<Self> {
        if var >= self.nvars {
            return Err(Error::InvalidInput(format!(
                "partial: variable {var} out of range for {} vars",
                self.nvars
            )));
        }
        let coeffs = match &self.coeffs {
            Coeffs::Dense(l, v) => {
                let mut out = vec![0.0; v.len()];
                for &(src, dst, f) in l.partial_table(var) {
                    out[dst as usize] += f * v[src as usize];
                }
                Coeffs::Dense(l.clone(), out)
            }
            Coeffs::Sparse(m) => {
                let mut out = BTreeMap::new();
                for (e, c) in m {
                    if e[var] > 0 {
                        let mut lower = e.clone();
                        lower[var] -= 1;
                        out.insert(lower, c * e[var] as f64);
                    }
                }
                Coeffs::Sparse(out)
            }
        };
        Ok(Self {
            nvars: self.nvars,
            degree: self.degree,
            reliable: self.reliable.and_then(|r| r.checked_sub(1)),
            coeffs,
        })
    }

    /// Antiderivative in `var` vanishing on `x_var = 0`; terms pushed above the
    /// cap are dropped.
    pub fn integrate(&self, var: usize) -> Result<Self> {
        if var >= self.nvars {
            return Err(Error::InvalidInput(format!(
                "integrate: variable {var} out of range for {} vars",
                self.nvars
            )));
        }
        let coeffs = match &self.coeffs {
            Coeffs::Dense(l, v) => {
                let mut out = vec![0.0; v.len()];
                for &(src, dst, f) in l.integral_table(var) {
                    out[dst as usize] += f * v[src as usize];
                }
                Coeffs::Dense(l.clone(), out)
            }
            Coeffs::Sparse(m) => {
                let mut out = BTreeMap::new();
                for (e, c) in m {
                    if total_degree(e) < self.degree {
                        let mut upper = e.clone();
                        upper[var] += 1;
                        out.insert(upper.clone(), c / upper[var] as f64);
                    }
                }
                Coeffs::Sparse(out)
            }
        };
        Ok(Self {
            nvars: self.nvars,
            degree: self.degree,
            reliable: self.reliable.map(|r| (r + 1).min(self.degree)),
            coeffs,
        })
    }

    /// Re-truncates or zero-pads to a new degree cap. Padding keeps the
    /// reliable degree, so padded coefficients are only trustworthy for
    /// polynomials whose true degree fits the old cap.
    pub fn with_degree(&self, degree: u32) -> Self {
        let mut s = Self::zero(self.nvars, degree);
        for (e, c) in self.terms() {
            if total_degree(&e) <= degree {
                s.set_coeff(&e, c);
            }
        }
        s.reliable = self.reliable.map(|r| r.min(degree));
        s
    }

    /// Marks a series that represents a polynomial exactly (every coefficient
    /// up to the cap is exact).
    pub fn into_exact(mut self) -> Self {
        self.reliable = Some(self.degree);
        self
    }

    /// Embeds the series into more variables: variable `i` goes to `map[i]`.
    pub fn embed(&self, num_vars: usize, map: &[usize]) -> Result<Self> {
        if map.len() != self.nvars || map.iter().any(|&m| m >= num_vars) {
            return Err(Error::ShapeMismatch(format!("embed: map {map:?} into {num_vars} vars")));
        }
        let mut s = Self::zero(num_vars, self.degree);
        for (e, c) in self.terms() {
            let mut f = vec![0; num_vars];
            for (i, p) in e.iter().enumerate() {
                f[map[i]] += p;
            }
            let old = s.coeff(&f);
            s.set_coeff(&f, old + c);
        }
        s.reliable = self.reliable;
        Ok(s)
    }

    /// Sets variable `var` to zero (keeps the number of variables).
    pub fn restrict_zero(&self, var: usize) -> Self {
        let mut s = Self::zero(self.nvars, self.degree);
        for (e, c) in self.terms() {
            if e[var] == 0 {
                s.set_coeff(&e, c);
            }
        }
        s.reliable = self.reliable;
        s
    }

    /// Coefficients of `x_var^k` with all other exponents zero, `k = 0..=degree`.
    pub fn axis_coeffs(&self, var: usize) -> Vec<f64> {
        (0..=self.degree)
            .map(|k| {
                let mut e = vec![0; self.nvars];
                e[var] = k;
                self.coeff(&e)
            })
            .collect()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nvars, "eval: point dimension");
        let powers = self.powers(x);
        self.terms_iter_fold(0.0, |acc, e, c| {
            acc + c * e.iter().enumerate().map(|(v, p)| powers[v][*p as usize]).product::<f64>()
        })
    }

    /// Value and gradient at `x`.
    pub fn eval_with_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        assert_eq!(x.len(), self.nvars, "eval: point dimension");
        let powers = self.powers(x);
        let mut grad = vec![0.0; self.nvars];
        let value = self.terms_iter_fold(0.0, |acc, e, c| {
            for v in 0..e.len() {
                if e[v] == 0 {
                    continue;
                }
                let mut p = c * e[v] as f64 * powers[v][e[v] as usize - 1];
                for (w, q) in e.iter().enumerate() {
                    if w != v {
                        p *= powers[w][*q as usize];
                    }
                }
                grad[v] += p;
            }
            acc + c * e.iter().enumerate().map(|(v, p)| powers[v][*p as usize]).product::<f64>()
        });
        (value, grad)
    }

    fn powers(&self, x: &[f64]) -> Vec<Vec<f64>> {
        x.iter()
            .map(|xi| {
                let mut p = Vec::with_capacity(self.degree as usize + 1);
                let mut acc = 1.0;
                for _ in 0..=self.degree {
                    p.push(acc);
                    acc *= xi;
                }
                p
            })
            .collect()
    }

    fn terms_iter_fold<F>(&self, init: f64, mut f: F) -> f64
    where
        F: FnMut(f64, &[u32], f64) -> f64,
    {
        match &self.coeffs {
            Coeffs::Dense(l, v) => {
                let mut acc = init;
                for (e, c) in l.exps.iter().zip(v) {
                    if *c != 0.0 {
                        acc = f(acc, e, *c);
                    }
                }
                acc
            }
            Coeffs::Sparse(m) => m.iter().fold(init, |acc, (e, c)| f(acc, e, *c)),
        }
    }

    /// Exact polynomial shift `y ↦ self(c + y)`, keeping the shape.
    pub fn shifted(&self, c: &[f64]) -> Self {
        assert_eq!(c.len(), self.nvars, "shift: point dimension");
        if c.iter().all(|v| *v == 0.0) {
            return self.clone();
        }
        let mut out = Self::zero(self.nvars, self.degree);
        out.reliable = self.reliable;
        let mut acc: HashMap<Exponent, f64> = HashMap::new();
        for (e, coef) in self.terms() {
            // expand Π (c_v + y_v)^{e_v}
            let mut partial: Vec<(Exponent, f64)> = vec![(Vec::with_capacity(self.nvars), coef)];
            for (v, &p) in e.iter().enumerate() {
                let mut next = Vec::with_capacity(partial.len() * (p as usize + 1));
                let mut binom = 1.0;
                for k in 0..=p {
                    let w = binom * c[v].powi((p - k) as i32);
                    if w != 0.0 {
                        for (ex, val) in &partial {
                            let mut ex2 = ex.clone();
                            ex2.push(k);
                            next.push((ex2, val * w));
                        }
                    }
                    binom = binom * (p - k) as f64 / (k + 1) as f64;
                }
                partial = next;
            }
            for (ex, val) in partial {
                *acc.entry(ex).or_insert(0.0) += val;
            }
        }
        for (e, v) in acc {
            if v != 0.0 {
                out.set_coeff(&e, v);
            }
        }
        out
    }

    /// Taylor expansion of `self ∘ args`, truncated at the degree of `args`.
    ///
    /// Arguments may carry non-zero constant terms; `self` is then recentered
    /// at that point by an exact polynomial shift, so the result is the
    /// expansion of the truncated polynomial, not of the function it came from.
    pub fn compose(&self, args: &[TruncatedSeries]) -> Result<Self> {
        Ok(Self::compose_many(std::slice::from_ref(self), args)?.pop().expect("one output"))
    }

    /// Composes several series with the same argument list, sharing the
    /// monomial products of the arguments.
    pub fn compose_many(fs: &[TruncatedSeries], args: &[TruncatedSeries]) -> Result<Vec<Self>> {
        let Some(first) = args.first() else {
            return Err(Error::Arity { expected: fs.first().map_or(1, |f| f.nvars), got: 0 });
        };
        for f in fs {
            if f.nvars != args.len() {
                return Err(Error::Arity { expected: f.nvars, got: args.len() });
            }
        }
        for a in args {
            first.check_same_shape(a, "compose arguments")?;
        }
        let (p, k) = (first.nvars, first.degree);
        let center: Vec<f64> = args.iter().map(|a| a.constant_term()).collect();
        let deltas: Vec<Self> = args.iter().zip(&center).map(|(a, c)| a.add_constant(-c)).collect();
        let arg_reliable = args.iter().fold(Some(k), |r, a| Self::min_reliable(r, a.reliable));

        let m = args.len();
        let fdeg = fs.iter().map(|f| f.degree).max().unwrap_or(0).min(k);
        let shifted: Vec<Self> = fs.iter().map(|f| f.shifted(&center)).collect();
        let mut outs: Vec<Self> = shifted
            .iter()
            .map(|f| Self::zero(p, k).with_reliable_degree(Self::min_reliable(f.reliable, arg_reliable)))
            .collect();

        if is_dense_shape(m, fdeg) {
            let l = layout::layout(m, fdeg);
            let mut prods: Vec<Self> = Vec::with_capacity(l.len());
            for i in 0..l.len() {
                let prod = match l.parent[i] {
                    None => Self::constant(p, k, 1.0),
                    Some((v, j)) => prods[j].checked_mul(&deltas[v])?,
                };
                prods.push(prod);
            }
            for (f, out) in shifted.iter().zip(outs.iter_mut()) {
                for (e, c) in f.terms() {
                    if let Some(&i) = l.index.get(&e) {
                        out.axpy_in_place(c, &prods[i]);
                    }
                }
            }
        } else {
            let mut memo: HashMap<Exponent, Self> = HashMap::new();
            memo.insert(vec![0; m], Self::constant(p, k, 1.0));
            for (f, out) in shifted.iter().zip(outs.iter_mut()) {
                for (e, c) in f.terms() {
                    if total_degree(&e) > k {
                        continue;
                    }
                    let prod = Self::monomial_product(&e, &deltas, &mut memo)?;
                    out.axpy_in_place(c, &prod);
                }
            }
        }
        Ok(outs)
    }

    fn monomial_product(e: &[u32], deltas: &[Self], memo: &mut HashMap<Exponent, Self>) -> Result<Self> {
        if let Some(s) = memo.get(e) {
            return Ok(s.clone());
        }
        let v = e.iter().position(|&q| q > 0).expect("non-constant monomial");
        let mut lower = e.to_vec();
        lower[v] -= 1;
        let prod = Self::monomial_product(&lower, deltas, memo)?.checked_mul(&deltas[v])?;
        memo.insert(e.to_vec(), prod.clone());
        Ok(prod)
    }

    /// `self += k * other` for series of identical shape.
    fn axpy_in_place(&mut self, k: f64, other: &Self) {
        match (&mut self.coeffs, &other.coeffs) {
            (Coeffs::Dense(_, a), Coeffs::Dense(_, b)) => {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += k * y;
                }
            }
            (Coeffs::Sparse(a), Coeffs::Sparse(b)) => {
                for (e, y) in b {
                    *a.entry(e.clone()).or_insert(0.0) += k * y;
                }
                a.retain(|_, c| *c != 0.0);
            }
            _ => unreachable!("storage is determined by shape"),
        }
    }
}

macro_rules! forward_binop {
    ($trait:ident, $method:ident, $checked:ident) => {
        impl $trait for &TruncatedSeries {
            type Output = TruncatedSeries;
            /// Panics on a shape mismatch; use the `checked_*` form to get an error.
            fn $method(self, rhs: &TruncatedSeries) -> TruncatedSeries {
                self.$checked(rhs).unwrap_or_else(|e| panic!("{e}"))
            }
        }
        impl $trait for TruncatedSeries {
            type Output = TruncatedSeries;
            fn $method(self, rhs: TruncatedSeries) -> TruncatedSeries {
                (&self).$method(&rhs)
            }
        }
    };
}

forward_binop!(Add, add, checked_add);
forward_binop!(Sub, sub, checked_sub);
forward_binop!(Mul, mul, checked_mul);

impl Neg for &TruncatedSeries {
    type Output = TruncatedSeries;
    fn neg(self) -> TruncatedSeries {
        self.scale(-1.0)
    }
}

impl Mul<f64> for &TruncatedSeries {
    type Output = TruncatedSeries;
    fn mul(self, k: f64) -> TruncatedSeries {
        self.scale(k)
    }
}
