//! Line-oriented text form: a `# vars=N degree=K` header followed by one line
//! per non-zero term, `e0 e1 ... ek : coeff`, in lexicographic exponent order.

use std::fmt::Write as _;

use super::TruncatedSeries;
use crate::error::{Error, Result};

impl TruncatedSeries {
    pub fn to_text(&self) -> String {
        let mut out = format!("# vars={} degree={}\n", self.num_vars(), self.max_total_degree());
        for (e, c) in self.terms() {
            let exps: Vec<String> = e.iter().map(u32::to_string).collect();
            writeln!(out, "{} : {:e}", exps.join(" "), c).expect("write to string");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidInput("empty series text".into()))?;
        let (nvars, degree) = parse_header(header)?;
        let mut terms = Vec::new();
        for line in lines {
            let (lhs, rhs) = line
                .split_once(':')
                .ok_or_else(|| Error::InvalidInput(format!("missing ':' in term line {line:?}")))?;
            let e = lhs
                .split_whitespace()
                .map(|t| t.parse::<u32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|err| Error::InvalidInput(format!("bad exponent in {line:?}: {err}")))?;
            let c: f64 = rhs
                .trim()
                .parse()
                .map_err(|err| Error::InvalidInput(format!("bad coefficient in {line:?}: {err}")))?;
            if e.iter().sum::<u32>() > degree {
                return Err(Error::InvalidInput(format!("term {line:?} exceeds degree {degree}")));
            }
            terms.push((e, c));
        }
        Self::from_terms(nvars, degree, terms)
    }
}

fn parse_header(header: &str) -> Result<(usize, u32)> {
    let bad = || Error::InvalidInput(format!("bad series header {header:?}"));
    let body = header.strip_prefix('#').ok_or_else(bad)?;
    let mut nvars = None;
    let mut degree = None;
    for tok in body.split_whitespace() {
        match tok.split_once('=') {
            Some(("vars", v)) => nvars = v.parse().ok(),
            Some(("degree", v)) => degree = v.parse().ok(),
            _ => return Err(bad()),
        }
    }
    Ok((nvars.ok_or_else(bad)?, degree.ok_or_else(bad)?))
}
