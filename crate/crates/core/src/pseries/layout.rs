//! Graded monomial layouts shared by all dense series of a given shape.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Multi-index of a monomial.
pub type Exponent = Vec<u32>;

/// Largest shapes stored densely; anything bigger uses a sparse map.
pub(crate) const DENSE_MAX_VARS: usize = 4;
pub(crate) const DENSE_MAX_DEGREE: u32 = 8;

pub(crate) fn is_dense_shape(nvars: usize, degree: u32) -> bool {
    nvars <= DENSE_MAX_VARS && degree <= DENSE_MAX_DEGREE
}

/// Monomials of total degree `<= degree` in `nvars` variables, in graded order
/// (by total degree, then lexicographically descending within a degree).
pub(crate) struct Layout {
    pub nvars: usize,
    pub degree: u32,
    pub exps: Vec<Exponent>,
    pub total: Vec<u32>,
    pub index: HashMap<Exponent, usize>,
    /// For every non-constant monomial: the first variable with a positive
    /// exponent and the index of the monomial with that exponent lowered by one.
    pub parent: Vec<Option<(usize, usize)>>,
    /// `start[d]` is the index of the first monomial of total degree `d`.
    pub start: Vec<usize>,
    mul_table: OnceLock<Vec<(u32, u32, u32)>>,
    partial_tables: OnceLock<Vec<Vec<(u32, u32, f64)>>>,
    integral_tables: OnceLock<Vec<Vec<(u32, u32, f64)>>>,
}

fn compositions(total: u32, nvars: usize, prefix: &mut Exponent, out: &mut Vec<Exponent>) {
    if prefix.len() + 1 == nvars {
        prefix.push(total);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for first in (0..=total).rev() {
        prefix.push(first);
        compositions(total - first, nvars, prefix, out);
        prefix.pop();
    }
}

impl Layout {
    fn build(nvars: usize, degree: u32) -> Self {
        let mut exps = Vec::new();
        let mut start = Vec::with_capacity(degree as usize + 2);
        for d in 0..=degree {
            start.push(exps.len());
            if nvars == 0 {
                if d == 0 {
                    exps.push(Vec::new());
                }
                continue;
            }
            compositions(d, nvars, &mut Vec::with_capacity(nvars), &mut exps);
        }
        start.push(exps.len());
        let total: Vec<u32> = exps.iter().map(|e| e.iter().sum()).collect();
        let index: HashMap<Exponent, usize> =
            exps.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        let parent = exps
            .iter()
            .map(|e| {
                let v = e.iter().position(|&p| p > 0)?;
                let mut lower = e.clone();
                lower[v] -= 1;
                Some((v, index[&lower]))
            })
            .collect();
        Self {
            nvars,
            degree,
            exps,
            total,
            index,
            parent,
            start,
            mul_table: OnceLock::new(),
            partial_tables: OnceLock::new(),
            integral_tables: OnceLock::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    /// Triples `(i, j, k)` with `exps[i] + exps[j] = exps[k]`.
    pub fn mul_table(&self) -> &[(u32, u32, u32)] {
        self.mul_table.get_or_init(|| {
            let mut table = Vec::new();
            let mut sum = vec![0u32; self.nvars];
            for i in 0..self.len() {
                let room = self.degree - self.total[i];
                for j in 0..self.start[room as usize + 1] {
                    for (v, s) in sum.iter_mut().enumerate() {
                        *s = self.exps[i][v] + self.exps[j][v];
                    }
                    table.push((i as u32, j as u32, self.index[&sum] as u32));
                }
            }
            table
        })
    }

    /// Per variable: `(src, dst, factor)` with `d/dx_v (x^src) = factor x^dst`.
    pub fn partial_table(&self, var: usize) -> &[(u32, u32, f64)] {
        &self.partial_tables.get_or_init(|| {
            (0..self.nvars)
                .map(|v| {
                    let mut t = Vec::new();
                    for (i, e) in self.exps.iter().enumerate() {
                        if e[v] > 0 {
                            let mut lower = e.clone();
                            lower[v] -= 1;
                            t.push((i as u32, self.index[&lower] as u32, e[v] as f64));
                        }
                    }
                    t
                })
                .collect()
        })[var]
    }

    /// Per variable: `(src, dst, factor)` with `∫ x^src dx_v = factor x^dst`,
    /// restricted to results inside the layout.
    pub fn integral_table(&self, var: usize) -> &[(u32, u32, f64)] {
        &self.integral_tables.get_or_init(|| {
            (0..self.nvars)
                .map(|v| {
                    let mut t = Vec::new();
                    for (i, e) in self.exps.iter().enumerate() {
                        if self.total[i] < self.degree {
                            let mut upper = e.clone();
                            upper[v] += 1;
                            let f = 1.0 / (upper[v] as f64);
                            t.push((i as u32, self.index[&upper] as u32, f));
                        }
                    }
                    t
                })
                .collect()
        })[var]
    }
}

type LayoutCache = Mutex<HashMap<(usize, u32), Arc<Layout>>>;

pub(crate) fn layout(nvars: usize, degree: u32) -> Arc<Layout> {
    static CACHE: OnceLock<LayoutCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("layout cache poisoned");
    guard
        .entry((nvars, degree))
        .or_insert_with(|| Arc::new(Layout::build(nvars, degree)))
        .clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binomial(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn monomial_count_matches_binomial() {
        for nvars in 1..=4 {
            for degree in 0..=6u32 {
                let l = layout(nvars, degree);
                assert_eq!(l.len(), binomial(nvars + degree as usize, nvars));
            }
        }
    }

    #[test]
    fn graded_order_and_parents() {
        let l = layout(3, 4);
        assert!(l.total.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(l.exps[0], vec![0, 0, 0]);
        assert_eq!(l.exps[1], vec![1, 0, 0]);
        for (i, p) in l.parent.iter().enumerate().skip(1) {
            let (v, j) = p.unwrap();
            let mut e = l.exps[j].clone();
            e[v] += 1;
            assert_eq!(e, l.exps[i]);
        }
    }

    #[test]
    fn mul_table_is_complete() {
        let l = layout(2, 3);
        // pairs with total degree <= 3 in 2 vars == monomials of degree <= 3 in 4 vars
        assert_eq!(l.mul_table().len(), binomial(4 + 3, 4));
    }
}
