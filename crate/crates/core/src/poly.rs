//! Sparse multivariate polynomials over monomial multi-indices.
//!
//! These carry the symbolic side of the crate: polynomial vector fields,
//! chain-rule derivatives of monomial observables and closure checks.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Exponent multi-index `x_1^{e_1} ⋯ x_n^{e_n}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Monomial(pub Vec<u32>);

impl Monomial {
    pub fn one(n: usize) -> Self {
        Self(vec![0; n])
    }

    /// The coordinate monomial `x_i` (0-based).
    pub fn var(n: usize, i: usize) -> Self {
        let mut e = vec![0; n];
        e[i] = 1;
        Self(e)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Returns the coordinate index if this monomial is a bare state variable.
    pub fn as_var(&self) -> Option<usize> {
        if self.degree() != 1 {
            return None;
        }
        self.0.iter().position(|&e| e == 1)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .fold(1.0, |acc, (&e, &xi)| acc * xi.powi(e as i32))
    }

    pub fn times(&self, other: &Monomial) -> Monomial {
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }
}

/// Graded ordering: ascending total degree, then descending exponent tuple,
/// so `x1 < x2 < x1^2 < x1 x2 < x2^2`.
impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let single = self.dim() == 1;
        let mut first = true;
        for (i, &e) in self.0.iter().enumerate() {
            if e == 0 {
                continue;
            }
            if !first {
                f.write_str(" ")?;
            }
            first = false;
            if single {
                f.write_str("x")?;
            } else {
                write!(f, "x{}", i + 1)?;
            }
            if e > 1 {
                write!(f, "^{e}")?;
            }
        }
        if first {
            f.write_str("1")?;
        }
        Ok(())
    }
}

/// All monomials in `n` variables with total degree `1..=max_degree`, in
/// graded order.
pub fn monomials_up_to(n: usize, max_degree: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    for d in 1..=max_degree {
        let mut level = Vec::new();
        let mut buf = vec![0u32; n];
        fill(&mut buf, 0, d, &mut level);
        level.sort();
        out.extend(level);
    }
    out
}

fn fill(buf: &mut Vec<u32>, i: usize, remaining: u32, out: &mut Vec<Monomial>) {
    if i + 1 == buf.len() {
        buf[i] = remaining;
        out.push(Monomial(buf.clone()));
        return;
    }
    for e in (0..=remaining).rev() {
        buf[i] = e;
        fill(buf, i + 1, remaining - e, out);
    }
}

/// Polynomial as a map from monomial to coefficient. Zero coefficients are
/// never stored.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(into = "PolyRepr", from = "PolyRepr")]
pub struct Polynomial {
    dim: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        let mut p = Self::zero(dim);
        p.add_term(Monomial::one(dim), c);
        p
    }

    pub fn var(dim: usize, i: usize) -> Self {
        Self::monomial(Monomial::var(dim, i), 1.0)
    }

    pub fn monomial(m: Monomial, c: f64) -> Self {
        let mut p = Self::zero(m.dim());
        p.add_term(m, c);
        p
    }

    pub fn from_terms(dim: usize, terms: impl IntoIterator<Item = (f64, Vec<u32>)>) -> Self {
        let mut p = Self::zero(dim);
        for (c, e) in terms {
            assert_eq!(e.len(), dim, "exponent length must equal dimension");
            p.add_term(Monomial(e), c);
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Adds `c * m`, merging with an existing term.
    pub fn add_term(&mut self, m: Monomial, c: f64) {
        if c == 0.0 {
            return;
        }
        let slot = self.terms.entry(m.clone()).or_insert(0.0);
        *slot += c;
        if *slot == 0.0 {
            self.terms.remove(&m);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(m, c)| c * m.eval(x)).sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = Self::zero(self.dim);
        for (m, c) in &self.terms {
            out.add_term(m.clone(), c * s);
        }
        out
    }

    /// `∂p/∂x_i`.
    pub fn derivative(&self, i: usize) -> Self {
        let mut out = Self::zero(self.dim);
        for (m, &c) in &self.terms {
            let e = m.0[i];
            if e == 0 {
                continue;
            }
            let mut dm = m.clone();
            dm.0[i] -= 1;
            out.add_term(dm, c * e as f64);
        }
        out
    }

    /// Lie derivative `∇p · f` along a polynomial vector field.
    pub fn lie_derivative(&self, field: &[Polynomial]) -> Self {
        let mut out = Self::zero(self.dim);
        for (i, fi) in field.iter().enumerate() {
            let d = self.derivative(i);
            if !d.is_zero() {
                out = out + &d * fi;
            }
        }
        out
    }

    /// `p^k` by repeated multiplication, left to right.
    pub fn pow(&self, k: u32) -> Self {
        let mut out = Self::constant(self.dim, 1.0);
        for _ in 0..k {
            out = &out * self;
        }
        out
    }

    /// Substitutes `x_i ↦ subs[i]`.
    pub fn compose(&self, subs: &[Polynomial]) -> Self {
        let dim = subs.first().map_or(self.dim, Polynomial::dim);
        let mut out = Self::zero(dim);
        for (m, &c) in &self.terms {
            let mut term = Self::constant(dim, c);
            for (i, &e) in m.0.iter().enumerate() {
                if e > 0 {
                    term = &term * &subs[i].pow(e);
                }
            }
            out = out + term;
        }
        out
    }
}

/// Wire form: `{"dim": n, "terms": [[coeff, [exponents…]], …]}`.
#[derive(Serialize, Deserialize)]
struct PolyRepr {
    dim: usize,
    terms: Vec<(f64, Vec<u32>)>,
}

impl From<Polynomial> for PolyRepr {
    fn from(p: Polynomial) -> Self {
        PolyRepr {
            dim: p.dim,
            terms: p.terms.into_iter().map(|(m, c)| (c, m.0)).collect(),
        }
    }
}

impl From<PolyRepr> for Polynomial {
    fn from(r: PolyRepr) -> Self {
        let mut p = Polynomial::zero(r.dim);
        for (c, e) in r.terms {
            p.add_term(Monomial(e), c);
        }
        p
    }
}

impl Add for Polynomial {
    type Output = Polynomial;
    fn add(mut self, rhs: Polynomial) -> Polynomial {
        for (m, c) in rhs.terms {
            self.add_term(m, c);
        }
        self
    }
}

impl Sub for Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: Polynomial) -> Polynomial {
        self + (-rhs)
    }
}

impl Neg for Polynomial {
    type Output = Polynomial;
    fn neg(mut self) -> Polynomial {
        for c in self.terms.values_mut() {
            *c = -*c;
        }
        self
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        let mut out = Polynomial::zero(self.dim);
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &rhs.terms {
                out.add_term(ma.times(mb), ca * cb);
            }
        }
        out
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (i, (m, c)) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str(if *c < 0.0 { " - " } else { " + " })?;
                write!(f, "{} {m}", c.abs())?;
            } else {
                write!(f, "{c} {m}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graded_order_two_vars() {
        let got: Vec<String> = monomials_up_to(2, 2).iter().map(|m| m.to_string()).collect();
        assert_eq!(got, ["x1", "x2", "x1^2", "x1 x2", "x2^2"]);
    }

    #[test]
    fn graded_order_one_var() {
        let got: Vec<String> = monomials_up_to(1, 4).iter().map(|m| m.to_string()).collect();
        assert_eq!(got, ["x", "x^2", "x^3", "x^4"]);
    }

    #[test]
    fn three_vars_degree_two_count() {
        assert_eq!(monomials_up_to(3, 2).len(), 9);
    }

    #[test]
    fn duplicate_terms_merge() {
        let p = Polynomial::from_terms(1, [(1.0, vec![2]), (2.0, vec![2]), (-3.0, vec![2])]);
        assert!(p.is_zero());
    }

    #[test]
    fn chain_rule_on_square() {
        // d/dt x^2 along x' = x^2 is 2 x^3
        let x = Polynomial::var(1, 0);
        let field = vec![x.pow(2)];
        let d = x.pow(2).lie_derivative(&field);
        assert_eq!(d, Polynomial::from_terms(1, [(2.0, vec![3])]));
    }

    #[test]
    fn compose_logistic_square() {
        let r = 3.5;
        let x = Polynomial::var(1, 0);
        let f = x.scale(r) - x.pow(2).scale(r);
        let sq = x.pow(2).compose(&[f]);
        assert_eq!(sq.coeff(&Monomial(vec![2])), r * r);
        assert_eq!(sq.coeff(&Monomial(vec![3])), -2.0 * r * r);
        assert_eq!(sq.coeff(&Monomial(vec![4])), r * r);
    }
}
