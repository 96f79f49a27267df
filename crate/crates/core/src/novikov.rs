//! Novikov-field arithmetic modulo an energy cutoff.
//!
//! A [`Nov`] is a finite sum `Σ aᵢ T^{λᵢ}` with rational coefficients and
//! rational energies. It optionally carries a cutoff `E`: terms of energy
//! above `E` are unknown and identified with zero.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ring::{factorial, q_to_string, Coeff, RatRepr, Q};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NovikovError {
    #[error("monoid generator {0} is not strictly positive")]
    NonPositiveGenerator(String),
    #[error("division by zero at the working truncation")]
    ZeroDivision,
    #[error("exponential needs strictly positive valuation, got {0}")]
    PositivityViolation(String),
    #[error("operation needs a finite cutoff but the scalar is untruncated")]
    Untruncated,
}

/// Submonoid of `Q≥0` generated by finitely many positive energies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnergyMonoid {
    generators: Vec<Q>,
}

impl EnergyMonoid {
    pub fn new(generators: impl IntoIterator<Item = Q>) -> Result<Self, NovikovError> {
        let mut gens: Vec<Q> = generators.into_iter().collect();
        if let Some(bad) = gens.iter().find(|g| !g.is_positive()) {
            return Err(NovikovError::NonPositiveGenerator(q_to_string(bad)));
        }
        gens.sort();
        gens.dedup();
        Ok(EnergyMonoid { generators: gens })
    }

    pub fn trivial() -> Self {
        EnergyMonoid { generators: Vec::new() }
    }

    pub fn generators(&self) -> &[Q] {
        &self.generators
    }

    /// Smallest positive element, if any.
    pub fn min_positive(&self) -> Option<&Q> {
        self.generators.first()
    }

    /// `G ∩ [0, E]` in increasing order; always starts with 0.
    pub fn enumerate(&self, cutoff: &Q) -> Vec<Q> {
        let mut seen: BTreeSet<Q> = BTreeSet::new();
        if cutoff.is_negative() {
            return Vec::new();
        }
        seen.insert(Q::zero());
        let mut frontier = vec![Q::zero()];
        while let Some(x) = frontier.pop() {
            for g in &self.generators {
                let y = &x + g;
                if &y <= cutoff && seen.insert(y.clone()) {
                    frontier.push(y);
                }
            }
        }
        seen.into_iter().collect()
    }

    pub fn contains(&self, beta: &Q) -> bool {
        self.enumerate(beta).last() == Some(beta)
    }
}

/// Valuation value: a rational or the distinguished `+∞` of the zero scalar.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Valuation {
    Finite(Q),
    Infinite,
}

impl Valuation {
    pub fn finite(&self) -> Option<&Q> {
        match self {
            Valuation::Finite(v) => Some(v),
            Valuation::Infinite => None,
        }
    }

    pub fn add(&self, other: &Valuation) -> Valuation {
        match (self, other) {
            (Valuation::Finite(a), Valuation::Finite(b)) => Valuation::Finite(a + b),
            _ => Valuation::Infinite,
        }
    }
}

impl fmt::Display for Valuation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Valuation::Finite(v) => write!(f, "{}", q_to_string(v)),
            Valuation::Infinite => write!(f, "+inf"),
        }
    }
}

/// Truncated Novikov scalar. Terms are sorted by strictly increasing energy
/// and carry nonzero coefficients. `cutoff = None` means the value is an
/// exact finite sum.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Nov {
    terms: Vec<(Q, Q)>,
    cutoff: Option<Q>,
}

fn min_cutoff(a: &Option<Q>, b: &Option<Q>) -> Option<Q> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y).clone()),
        (Some(x), None) | (None, Some(x)) => Some(x.clone()),
        (None, None) => None,
    }
}

impl Nov {
    /// Builds a scalar from arbitrary `(energy, coefficient)` pairs; equal
    /// energies are merged.
    pub fn from_terms(terms: impl IntoIterator<Item = (Q, Q)>, cutoff: Option<Q>) -> Self {
        let mut v: Vec<(Q, Q)> = terms.into_iter().collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        let mut merged: Vec<(Q, Q)> = Vec::with_capacity(v.len());
        for (e, c) in v {
            match merged.last_mut() {
                Some((le, lc)) if *le == e => *lc += c,
                _ => merged.push((e, c)),
            }
        }
        let mut r = Nov { terms: merged, cutoff };
        r.normalize();
        r
    }

    fn normalize(&mut self) {
        self.terms.retain(|(_, c)| !c.is_zero());
        if let Some(e) = &self.cutoff {
            self.terms.retain(|(en, _)| en <= e);
        }
    }

    /// `c T^energy`, exact.
    pub fn monomial(coeff: Q, energy: Q) -> Self {
        Nov::from_terms([(energy, coeff)], None)
    }

    pub fn constant(c: Q) -> Self {
        Nov::monomial(c, Q::zero())
    }

    pub fn zero_at(cutoff: Option<Q>) -> Self {
        Nov { terms: Vec::new(), cutoff }
    }

    pub fn terms(&self) -> &[(Q, Q)] {
        &self.terms
    }

    pub fn cutoff(&self) -> Option<&Q> {
        self.cutoff.as_ref()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn val(&self) -> Valuation {
        match self.terms.first() {
            Some((e, _)) => Valuation::Finite(e.clone()),
            None => Valuation::Infinite,
        }
    }

    /// Coefficient of `T^energy`.
    pub fn coeff(&self, energy: &Q) -> Q {
        self.terms
            .iter()
            .find(|(e, _)| e == energy)
            .map(|(_, c)| c.clone())
            .unwrap_or_else(Q::zero)
    }

    /// Re-truncates at `min(cutoff, e)`.
    pub fn truncate(&self, e: &Q) -> Nov {
        let mut r = Nov {
            terms: self.terms.clone(),
            cutoff: min_cutoff(&self.cutoff, &Some(e.clone())),
        };
        r.normalize();
        r
    }

    pub fn with_cutoff(mut self, cutoff: Option<Q>) -> Nov {
        self.cutoff = cutoff;
        self.normalize();
        self
    }

    /// Equality of the two scalars modulo `T^{>e}`.
    pub fn eq_mod(&self, other: &Nov, e: &Q) -> bool {
        self.truncate(e).terms == other.truncate(e).terms
    }

    pub fn add(&self, other: &Nov) -> Nov {
        let cutoff = min_cutoff(&self.cutoff, &other.cutoff);
        let mut out = Vec::with_capacity(self.terms.len() + other.terms.len());
        let (mut i, mut j) = (0, 0);
        while i < self.terms.len() || j < other.terms.len() {
            let ord = match (self.terms.get(i), other.terms.get(j)) {
                (Some(a), Some(b)) => a.0.cmp(&b.0),
                (Some(_), None) => Ordering::Less,
                _ => Ordering::Greater,
            };
            match ord {
                Ordering::Less => {
                    out.push(self.terms[i].clone());
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(other.terms[j].clone());
                    j += 1;
                }
                Ordering::Equal => {
                    let c = &self.terms[i].1 + &other.terms[j].1;
                    out.push((self.terms[i].0.clone(), c));
                    i += 1;
                    j += 1;
                }
            }
        }
        let mut r = Nov { terms: out, cutoff };
        r.normalize();
        r
    }

    pub fn neg(&self) -> Nov {
        Nov {
            terms: self.terms.iter().map(|(e, c)| (e.clone(), -c)).collect(),
            cutoff: self.cutoff.clone(),
        }
    }

    pub fn sub(&self, other: &Nov) -> Nov {
        self.add(&other.neg())
    }

    /// Cutoff of a product: the minimum of both cutoffs, lowered further when
    /// a factor has negative valuation so that no unknown term leaks in.
    fn product_cutoff(&self, other: &Nov) -> Option<Q> {
        let mut c = min_cutoff(&self.cutoff, &other.cutoff);
        if let (Some(ea), Valuation::Finite(vb)) = (&self.cutoff, other.val()) {
            c = min_cutoff(&c, &Some(ea + vb));
        }
        if let (Some(eb), Valuation::Finite(va)) = (&other.cutoff, self.val()) {
            c = min_cutoff(&c, &Some(eb + va));
        }
        c
    }

    pub fn mul(&self, other: &Nov) -> Nov {
        let cutoff = self.product_cutoff(other);
        let mut prods = Vec::with_capacity(self.terms.len() * other.terms.len());
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let e = ea + eb;
                if cutoff.as_ref().is_some_and(|c| &e > c) {
                    continue;
                }
                prods.push((e, ca * cb));
            }
        }
        Nov::from_terms(prods, cutoff)
    }

    pub fn scale(&self, c: &Q) -> Nov {
        let mut r = Nov {
            terms: self.terms.iter().map(|(e, a)| (e.clone(), a * c)).collect(),
            cutoff: self.cutoff.clone(),
        };
        r.normalize();
        r
    }

    /// Multiplication by `T^shift`; the cutoff shifts along.
    pub fn shift(&self, shift: &Q) -> Nov {
        Nov {
            terms: self.terms.iter().map(|(e, c)| (e + shift, c.clone())).collect(),
            cutoff: self.cutoff.as_ref().map(|c| c + shift),
        }
    }

    pub fn pow(&self, k: u32) -> Nov {
        let mut acc = Nov::unit().with_cutoff(self.cutoff.clone());
        for _ in 0..k {
            acc = acc.mul(self);
        }
        acc
    }

    /// Multiplicative inverse. A scalar `cT^v(1 + r)` with cutoff `E` has
    /// relative precision `E − v`, so the inverse is known up to `E − 2v`.
    /// Monomials without cutoff invert exactly.
    pub fn invert(&self) -> Result<Nov, NovikovError> {
        let (v, c) = self.terms.first().ok_or(NovikovError::ZeroDivision)?.clone();
        let lead_inv = Nov::monomial(c.recip(), -v.clone());
        let target = match &self.cutoff {
            Some(e) => Some(e - &v - &v),
            None if self.terms.len() == 1 => None,
            None => return Err(NovikovError::Untruncated),
        };
        let Some(target) = target else {
            return Ok(lead_inv);
        };
        // self = cT^v (1 + r), val(r) > 0; (1 + r)^{-1} = Σ (−r)^n mod T^{>target+v}
        let rel_cut = &target + &v;
        let normalized = Nov::from_terms(
            self.terms.iter().map(|(e, a)| (e - &v, a / &c)),
            Some(rel_cut.clone()),
        );
        let minus_r = normalized.sub(&Nov::unit()).neg();
        let mut sum = Nov::unit().with_cutoff(Some(rel_cut.clone()));
        let mut power = Nov::unit().with_cutoff(Some(rel_cut.clone()));
        loop {
            power = power.mul(&minus_r);
            if power.is_zero() {
                break;
            }
            sum = sum.add(&power);
        }
        Ok(sum.mul(&lead_inv).with_cutoff(Some(target)))
    }

    /// `Σ a^k / k!` for `val(a) > 0`, truncated at the scalar's cutoff.
    pub fn exp(&self) -> Result<Nov, NovikovError> {
        match self.val() {
            Valuation::Infinite => return Ok(Nov::unit().with_cutoff(self.cutoff.clone())),
            Valuation::Finite(v) if !v.is_positive() => {
                return Err(NovikovError::PositivityViolation(q_to_string(&v)))
            }
            _ => {}
        }
        if self.cutoff.is_none() {
            return Err(NovikovError::Untruncated);
        }
        let mut sum = Nov::unit().with_cutoff(self.cutoff.clone());
        let mut power = sum.clone();
        let mut k = 0usize;
        loop {
            k += 1;
            power = power.mul(self);
            if power.is_zero() {
                break;
            }
            sum = sum.add(&power.scale(&factorial(k).recip()));
        }
        Ok(sum)
    }

    pub fn to_quads(&self) -> NovRepr {
        NovRepr {
            terms: self
                .terms
                .iter()
                .map(|(e, c)| [RatRepr(e.clone()), RatRepr(c.clone())])
                .collect(),
            cutoff: self.cutoff.clone().map(RatRepr),
        }
    }
}

impl Coeff for Nov {
    fn nil() -> Self {
        Nov::default()
    }
    fn unit() -> Self {
        Nov::constant(Q::one())
    }
    fn is_nil(&self) -> bool {
        self.terms.is_empty()
    }
    fn plus(&self, other: &Self) -> Self {
        self.add(other)
    }
    fn times(&self, other: &Self) -> Self {
        self.mul(other)
    }
    fn negated(&self) -> Self {
        self.neg()
    }
    fn scaled(&self, c: &Q) -> Self {
        self.scale(c)
    }
    fn from_q(c: Q) -> Self {
        Nov::constant(c)
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Nov {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            write!(f, "0")?;
        }
        for (i, (e, c)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            if e.is_zero() {
                write!(f, "{}", q_to_string(c))?;
            } else {
                write!(f, "({})T^{}", q_to_string(c), q_to_string(e))?;
            }
        }
        if let Some(e) = &self.cutoff {
            write!(f, " mod T^>{}", q_to_string(e))?;
        }
        Ok(())
    }
}

impl fmt::Debug for Nov {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// Wire form of a scalar: `(energy, coefficient)` rational pairs, i.e. the
/// integer quadruple `[[e_num, e_den], [c_num, c_den]]` per term.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NovRepr {
    pub terms: Vec<[RatRepr; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<RatRepr>,
}

impl From<&NovRepr> for Nov {
    fn from(r: &NovRepr) -> Nov {
        Nov::from_terms(
            r.terms.iter().map(|[e, c]| (e.0.clone(), c.0.clone())),
            r.cutoff.as_ref().map(|c| c.0.clone()),
        )
    }
}
