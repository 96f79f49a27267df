//! Polynomials with rational coefficients: one variable (time on an interval)
//! and two variables (affine coordinates on the 2-simplex).

use std::collections::BTreeMap;
use std::fmt;

use num_traits::{One, Zero};

use crate::ring::{q_to_string, qi, Coeff, Q};

/// Polynomial in a single variable `t`, dense coefficient vector, lowest
/// degree first, no trailing zeros.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Poly {
    coeffs: Vec<Q>,
}

impl Poly {
    pub fn new(mut coeffs: Vec<Q>) -> Self {
        while coeffs.last().is_some_and(|c| c.is_zero()) {
            coeffs.pop();
        }
        Poly { coeffs }
    }

    pub fn constant(c: Q) -> Self {
        Poly::new(vec![c])
    }

    /// The monomial `c t^k`.
    pub fn monomial(c: Q, k: usize) -> Self {
        let mut v = vec![Q::zero(); k + 1];
        v[k] = c;
        Poly::new(v)
    }

    pub fn t() -> Self {
        Poly::monomial(Q::one(), 1)
    }

    pub fn coeffs(&self) -> &[Q] {
        &self.coeffs
    }

    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn eval(&self, t: &Q) -> Q {
        let mut acc = Q::zero();
        for c in self.coeffs.iter().rev() {
            acc = acc * t + c;
        }
        acc
    }

    pub fn derivative(&self) -> Poly {
        Poly::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| c * qi(k as i64))
                .collect(),
        )
    }

    /// Antiderivative vanishing at `t = 0`.
    pub fn antiderivative(&self) -> Poly {
        let mut v = Vec::with_capacity(self.coeffs.len() + 1);
        v.push(Q::zero());
        for (k, c) in self.coeffs.iter().enumerate() {
            v.push(c / qi(k as i64 + 1));
        }
        Poly::new(v)
    }

    /// `∫_a^t self(s) ds` as a polynomial in `t`.
    pub fn integral_from(&self, a: &Q) -> Poly {
        let anti = self.antiderivative();
        let at_a = anti.eval(a);
        anti.minus(&Poly::constant(at_a))
    }

    /// Substitution `t ↦ scale·t + shift`.
    pub fn compose_affine(&self, scale: &Q, shift: &Q) -> Poly {
        let lin = Poly::new(vec![shift.clone(), scale.clone()]);
        let mut acc = Poly::nil();
        for c in self.coeffs.iter().rev() {
            acc = acc.times(&lin).plus(&Poly::constant(c.clone()));
        }
        acc
    }
}

impl Coeff for Poly {
    fn nil() -> Self {
        Poly { coeffs: Vec::new() }
    }
    fn unit() -> Self {
        Poly::constant(Q::one())
    }
    fn is_nil(&self) -> bool {
        self.coeffs.is_empty()
    }
    fn plus(&self, other: &Self) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut v = Vec::with_capacity(n);
        for k in 0..n {
            let a = self.coeffs.get(k);
            let b = other.coeffs.get(k);
            v.push(match (a, b) {
                (Some(a), Some(b)) => a + b,
                (Some(a), None) => a.clone(),
                (None, Some(b)) => b.clone(),
                (None, None) => unreachable!(),
            });
        }
        Poly::new(v)
    }
    fn times(&self, other: &Self) -> Self {
        if self.is_nil() || other.is_nil() {
            return Poly::nil();
        }
        let mut v = vec![Q::zero(); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in other.coeffs.iter().enumerate() {
                v[i + j] += a * b;
            }
        }
        Poly::new(v)
    }
    fn negated(&self) -> Self {
        Poly {
            coeffs: self.coeffs.iter().map(|c| -c).collect(),
        }
    }
    fn scaled(&self, c: &Q) -> Self {
        Poly::new(self.coeffs.iter().map(|a| a * c).collect())
    }
    fn from_q(c: Q) -> Self {
        Poly::constant(c)
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl fmt::Debug for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.coeffs.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (k, c) in self.coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            match k {
                0 => write!(f, "{}", q_to_string(c))?,
                1 => write!(f, "({})t", q_to_string(c))?,
                _ => write!(f, "({})t^{k}", q_to_string(c))?,
            }
        }
        Ok(())
    }
}

/// Polynomial in two variables `(s, u)`, the affine coordinates of the
/// 2-simplex `{s, u ≥ 0, s + u ≤ 1}`.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct Poly2 {
    terms: BTreeMap<(u32, u32), Q>,
}

impl Poly2 {
    pub fn from_terms(terms: impl IntoIterator<Item = ((u32, u32), Q)>) -> Self {
        let mut p = Poly2::default();
        for (k, c) in terms {
            p.add_term(k, c);
        }
        p
    }

    pub fn constant(c: Q) -> Self {
        Poly2::from_terms([((0, 0), c)])
    }

    pub fn s() -> Self {
        Poly2::from_terms([((1, 0), Q::one())])
    }

    pub fn u() -> Self {
        Poly2::from_terms([((0, 1), Q::one())])
    }

    fn add_term(&mut self, k: (u32, u32), c: Q) {
        if c.is_zero() {
            return;
        }
        let e = self.terms.entry(k).or_insert_with(Q::zero);
        *e += c;
        if e.is_zero() {
            self.terms.remove(&k);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&(u32, u32), &Q)> {
        self.terms.iter()
    }

    pub fn d_s(&self) -> Poly2 {
        Poly2::from_terms(
            self.terms
                .iter()
                .filter(|((a, _), _)| *a > 0)
                .map(|(&(a, b), c)| ((a - 1, b), c * qi(a as i64))),
        )
    }

    pub fn d_u(&self) -> Poly2 {
        Poly2::from_terms(
            self.terms
                .iter()
                .filter(|((_, b), _)| *b > 0)
                .map(|(&(a, b), c)| ((a, b - 1), c * qi(b as i64))),
        )
    }

    /// `∫₀^s p(σ, u) dσ`.
    pub fn integral_s(&self) -> Poly2 {
        Poly2::from_terms(self.terms.iter().map(|(&(a, b), c)| ((a + 1, b), c / qi(a as i64 + 1))))
    }

    /// `∫₀^u p(s, υ) dυ`.
    pub fn integral_u(&self) -> Poly2 {
        Poly2::from_terms(self.terms.iter().map(|(&(a, b), c)| ((a, b + 1), c / qi(b as i64 + 1))))
    }

    /// `p(s, 0)`.
    pub fn at_u_zero(&self) -> Poly2 {
        Poly2::from_terms(self.terms.iter().filter(|((_, b), _)| *b == 0).map(|(k, c)| (*k, c.clone())))
    }

    /// Restriction to the affine line `t ↦ (s0 + s1 t, u0 + u1 t)`.
    pub fn pullback_line(&self, s0: &Q, s1: &Q, u0: &Q, u1: &Q) -> Poly {
        let ls = Poly::new(vec![s0.clone(), s1.clone()]);
        let lu = Poly::new(vec![u0.clone(), u1.clone()]);
        let mut acc = Poly::nil();
        for (&(a, b), c) in &self.terms {
            let mut term = Poly::constant(c.clone());
            for _ in 0..a {
                term = term.times(&ls);
            }
            for _ in 0..b {
                term = term.times(&lu);
            }
            acc = acc.plus(&term);
        }
        acc
    }

    pub fn eval(&self, s: &Q, u: &Q) -> Q {
        self.pullback_line(s, &Q::zero(), u, &Q::zero()).eval(&Q::zero())
    }
}

impl Coeff for Poly2 {
    fn nil() -> Self {
        Poly2::default()
    }
    fn unit() -> Self {
        Poly2::constant(Q::one())
    }
    fn is_nil(&self) -> bool {
        self.terms.is_empty()
    }
    fn plus(&self, other: &Self) -> Self {
        let mut r = self.clone();
        for (k, c) in &other.terms {
            r.add_term(*k, c.clone());
        }
        r
    }
    fn times(&self, other: &Self) -> Self {
        let mut r = Poly2::default();
        for (&(a, b), c) in &self.terms {
            for (&(x, y), d) in &other.terms {
                r.add_term((a + x, b + y), c * d);
            }
        }
        r
    }
    fn negated(&self) -> Self {
        Poly2 {
            terms: self.terms.iter().map(|(k, c)| (*k, -c)).collect(),
        }
    }
    fn scaled(&self, c: &Q) -> Self {
        Poly2::from_terms(self.terms.iter().map(|(k, a)| (*k, a * c)))
    }
    fn from_q(c: Q) -> Self {
        Poly2::constant(c)
    }
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl fmt::Debug for Poly2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|((a, b), c)| format!("({})s^{a}u^{b}", q_to_string(c)))
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}
