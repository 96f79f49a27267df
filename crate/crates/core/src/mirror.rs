//! Non-Archimedean charts: Tate series on rational polytopes, disk-class
//! monomials `Z_β`, wall-crossing substitutions and transition maps between
//! charts, and the checks that glue them into a space.
//!
//! A series is stored as finitely many terms `a_k z^k` with exact Novikov
//! coefficients. Its weight at a term is `val(a_k) + min_{x∈U} ⟨k, x⟩`, the
//! minimum being taken over the vertices of the domain `U`. A series with
//! cutoff `E` is known modulo terms of weight `> E`.

use std::collections::{BTreeMap, HashMap};

use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::Matrix;
use crate::novikov::{Nov, NovikovError, Valuation};
use crate::ring::{factorial, q_to_string, Coeff, Q};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MirrorError {
    #[error("domain is empty or not full-dimensional: {0}")]
    EmptyDomain(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("unobstructedness is not declared for this atlas")]
    UnobstructednessNotDeclared,
    #[error("no wall data for overlap ({0}, {1})")]
    MissingWallData(usize, usize),
    #[error("matrix is not in GL_n(Z): {0}")]
    NotUnimodular(String),
    #[error("point ({0}) lies outside the domain")]
    OutsideDomain(String),
    #[error("unknown chart {0}")]
    UnknownChart(usize),
    #[error("disk class area must be positive, got {0}")]
    NonPositiveArea(String),
    #[error("series does not converge on its domain: {0}")]
    NotConvergent(String),
    #[error("series is not invertible on its domain: {0}")]
    NotInvertible(String),
    #[error("series live on different domains")]
    DomainMismatch,
    #[error(transparent)]
    Novikov(#[from] NovikovError),
}

pub type IntMatrix = Vec<Vec<i64>>;

fn point_string(x: &[Q]) -> String {
    x.iter().map(q_to_string).collect::<Vec<_>>().join(", ")
}

fn dot_int(k: &[i64], x: &[Q]) -> Q {
    k.iter().zip(x).map(|(&a, b)| b * Q::from_integer(a.into())).sum()
}

fn dot_q(a: &[Q], x: &[Q]) -> Q {
    a.iter().zip(x).map(|(a, b)| a * b).sum()
}

fn to_q_matrix(a: &IntMatrix) -> Matrix {
    Matrix::from_rows(
        a.iter()
            .map(|r| r.iter().map(|&v| Q::from_integer(v.into())).collect())
            .collect(),
    )
}

/// Inverse of a unimodular integer matrix.
pub fn int_inverse(a: &IntMatrix) -> Result<IntMatrix, MirrorError> {
    let n = a.len();
    if a.iter().any(|r| r.len() != n) || n == 0 {
        return Err(MirrorError::NotUnimodular("matrix is not square".into()));
    }
    let m = to_q_matrix(a);
    let det = m.determinant();
    if det.abs() != Q::one() {
        return Err(MirrorError::NotUnimodular(format!("determinant {}", q_to_string(&det))));
    }
    let inv = m.inverse().expect("unimodular matrices are invertible");
    let mut out = vec![vec![0i64; n]; n];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let e = &inv[(i, j)];
            *v = i64::try_from(e.to_integer()).map_err(|_| {
                MirrorError::NotUnimodular("inverse entries overflow".into())
            })?;
        }
    }
    Ok(out)
}

pub fn int_mat_mul(a: &IntMatrix, b: &IntMatrix) -> IntMatrix {
    let n = b.first().map_or(0, |r| r.len());
    a.iter()
        .map(|row| {
            (0..n)
                .map(|j| row.iter().zip(b).map(|(&x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}

/// `A x` for an integer matrix and a rational vector.
pub fn int_mat_vec(a: &IntMatrix, x: &[Q]) -> Vec<Q> {
    a.iter().map(|row| dot_int(row, x)).collect()
}

/// The integral-affine map `x ↦ to + A(x − from)`.
pub fn affine_map(a: &IntMatrix, from: &[Q], to: &[Q], x: &[Q]) -> Vec<Q> {
    let d: Vec<Q> = x.iter().zip(from).map(|(a, b)| a - b).collect();
    int_mat_vec(a, &d).iter().zip(to).map(|(a, b)| a + b).collect()
}

fn combinations(m: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(n);
    fn rec(start: usize, m: usize, n: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            cur.push(i);
            rec(i + 1, m, n, cur, out);
            cur.pop();
        }
    }
    rec(0, m, n, &mut cur, &mut out);
    out
}

/// Bounded full-dimensional rational polytope, kept both as a facet list
/// `a·x ≤ b` and as its vertex list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RationalDomain {
    dim: usize,
    facets: Vec<(Vec<Q>, Q)>,
    vertices: Vec<Vec<Q>>,
}

fn normalize_facet(a: Vec<Q>, b: Q) -> (Vec<Q>, Q) {
    let scale = a.iter().map(|v| v.abs()).max().expect("nonzero normal");
    (a.iter().map(|v| v / &scale).collect(), b / scale)
}

impl RationalDomain {
    /// Convex hull of the given points.
    pub fn from_vertices(points: Vec<Vec<Q>>) -> Result<Self, MirrorError> {
        let dim = points.first().map(|p| p.len()).unwrap_or(0);
        if dim == 0 {
            return Err(MirrorError::EmptyDomain("no vertices".into()));
        }
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(MirrorError::Dimension { expected: dim, got: p.len() });
        }
        let diffs: Vec<Vec<Q>> = points
            .iter()
            .map(|p| p.iter().zip(&points[0]).map(|(a, b)| a - b).collect())
            .collect();
        if Matrix::from_rows(diffs).rank() < dim {
            return Err(MirrorError::EmptyDomain("vertices span a lower-dimensional set".into()));
        }
        let mut facets = Vec::new();
        for subset in combinations(points.len(), dim) {
            let rows: Vec<Vec<Q>> = subset
                .iter()
                .map(|&i| {
                    let mut r = points[i].clone();
                    r.push(Q::one());
                    r
                })
                .collect();
            let ns = Matrix::from_rows(rows).nullspace();
            if ns.len() != 1 {
                continue;
            }
            let (a, c) = (ns[0][..dim].to_vec(), ns[0][dim].clone());
            let vals: Vec<Q> = points.iter().map(|p| dot_q(&a, p) + &c).collect();
            if vals.iter().all(|v| !v.is_positive()) {
                facets.push(normalize_facet(a, -c));
            } else if vals.iter().all(|v| !v.is_negative()) {
                facets.push(normalize_facet(a.iter().map(|v| -v).collect(), c));
            }
        }
        facets.sort();
        facets.dedup();
        Self::from_facets(dim, facets)
    }

    /// The box `∏ [lo_k, hi_k]`.
    pub fn boxed(lo: &[Q], hi: &[Q]) -> Result<Self, MirrorError> {
        if lo.len() != hi.len() {
            return Err(MirrorError::Dimension { expected: lo.len(), got: hi.len() });
        }
        let dim = lo.len();
        let mut facets = Vec::new();
        for k in 0..dim {
            if lo[k] >= hi[k] {
                return Err(MirrorError::EmptyDomain(format!("interval {k} is degenerate")));
            }
            let mut e = vec![Q::zero(); dim];
            e[k] = Q::one();
            facets.push((e.clone(), hi[k].clone()));
            e[k] = -Q::one();
            facets.push((e, -lo[k].clone()));
        }
        Self::from_facets(dim, facets)
    }

    fn from_facets(dim: usize, facets: Vec<(Vec<Q>, Q)>) -> Result<Self, MirrorError> {
        let mut vertices = Vec::new();
        for subset in combinations(facets.len(), dim) {
            let m = Matrix::from_rows(subset.iter().map(|&i| facets[i].0.clone()).collect());
            if m.rank() < dim {
                continue;
            }
            let b: Vec<Q> = subset.iter().map(|&i| facets[i].1.clone()).collect();
            if let Some(x) = m.solve(&b) {
                if facets.iter().all(|(a, b)| &dot_q(a, &x) <= b) {
                    vertices.push(x);
                }
            }
        }
        vertices.sort();
        vertices.dedup();
        if vertices.len() <= dim {
            return Err(MirrorError::EmptyDomain(format!("{} vertices in dimension {dim}", vertices.len())));
        }
        let diffs: Vec<Vec<Q>> = vertices
            .iter()
            .map(|p| p.iter().zip(&vertices[0]).map(|(a, b)| a - b).collect())
            .collect();
        if Matrix::from_rows(diffs).rank() < dim {
            return Err(MirrorError::EmptyDomain("intersection is lower-dimensional".into()));
        }
        // keep only facets supported by at least `dim` vertices
        let facets = facets
            .into_iter()
            .filter(|(a, b)| vertices.iter().filter(|v| &dot_q(a, v) == b).count() >= dim)
            .collect();
        Ok(RationalDomain { dim, facets, vertices })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertices(&self) -> &[Vec<Q>] {
        &self.vertices
    }

    pub fn facets(&self) -> &[(Vec<Q>, Q)] {
        &self.facets
    }

    pub fn contains(&self, x: &[Q]) -> bool {
        x.len() == self.dim && self.facets.iter().all(|(a, b)| &dot_q(a, x) <= b)
    }

    pub fn on_boundary(&self, x: &[Q]) -> bool {
        self.contains(x) && self.facets.iter().any(|(a, b)| &dot_q(a, x) == b)
    }

    pub fn contains_domain(&self, other: &RationalDomain) -> bool {
        other.vertices.iter().all(|v| self.contains(v))
    }

    /// `min_{x∈U} ⟨k, x⟩`.
    pub fn min_dot(&self, k: &[i64]) -> Q {
        self.vertices.iter().map(|v| dot_int(k, v)).min().expect("nonempty")
    }

    pub fn max_dot(&self, k: &[i64]) -> Q {
        self.vertices.iter().map(|v| dot_int(k, v)).max().expect("nonempty")
    }

    pub fn barycenter(&self) -> Vec<Q> {
        let n = Q::from_integer((self.vertices.len() as i64).into());
        (0..self.dim)
            .map(|k| self.vertices.iter().map(|v| v[k].clone()).sum::<Q>() / &n)
            .collect()
    }

    /// `U − p`.
    pub fn translate(&self, p: &[Q]) -> RationalDomain {
        RationalDomain {
            dim: self.dim,
            facets: self.facets.iter().map(|(a, b)| (a.clone(), b - dot_q(a, p))).collect(),
            vertices: self
                .vertices
                .iter()
                .map(|v| v.iter().zip(p).map(|(a, b)| a - b).collect())
                .collect(),
        }
    }

    /// Image under `x ↦ to + A(x − from)` for unimodular `A`.
    pub fn affine_image(&self, a: &IntMatrix, from: &[Q], to: &[Q]) -> Result<RationalDomain, MirrorError> {
        int_inverse(a)?;
        RationalDomain::from_vertices(self.vertices.iter().map(|v| affine_map(a, from, to, v)).collect())
    }

    pub fn intersect(&self, other: &RationalDomain) -> Result<RationalDomain, MirrorError> {
        if self.dim != other.dim {
            return Err(MirrorError::Dimension { expected: self.dim, got: other.dim });
        }
        let mut facets: Vec<_> = self.facets.iter().chain(&other.facets).cloned().collect();
        facets.sort();
        facets.dedup();
        Self::from_facets(self.dim, facets)
    }
}

/// Laurent series in `z_1 … z_n` with Novikov coefficients on a polytope.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TateSeries {
    domain: RationalDomain,
    terms: BTreeMap<Vec<i64>, Nov>,
    cutoff: Option<Q>,
}

fn min_opt(a: Option<Q>, b: Option<Q>) -> Option<Q> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

impl TateSeries {
    pub fn new(
        domain: RationalDomain,
        terms: impl IntoIterator<Item = (Vec<i64>, Nov)>,
        cutoff: Option<Q>,
    ) -> Result<Self, MirrorError> {
        let mut map: BTreeMap<Vec<i64>, Nov> = BTreeMap::new();
        for (k, a) in terms {
            if k.len() != domain.dim {
                return Err(MirrorError::Dimension { expected: domain.dim, got: k.len() });
            }
            let a = a.with_cutoff(None);
            match map.get_mut(&k) {
                Some(b) => *b = b.add(&a),
                None => {
                    map.insert(k, a);
                }
            }
        }
        let mut s = TateSeries { domain, terms: map, cutoff };
        s.normalize();
        Ok(s)
    }

    fn from_map(domain: RationalDomain, terms: BTreeMap<Vec<i64>, Nov>, cutoff: Option<Q>) -> Self {
        let mut s = TateSeries { domain, terms, cutoff };
        s.normalize();
        s
    }

    fn normalize(&mut self) {
        let cutoff = self.cutoff.clone();
        let domain = &self.domain;
        self.terms = std::mem::take(&mut self.terms)
            .into_iter()
            .filter_map(|(k, a)| {
                let a = match &cutoff {
                    Some(e) => {
                        let bound = e - domain.min_dot(&k);
                        Nov::from_terms(a.terms().iter().filter(|(en, _)| en <= &bound).cloned(), None)
                    }
                    None => a,
                };
                (!a.is_zero()).then_some((k, a))
            })
            .collect();
    }

    pub fn zero(domain: RationalDomain, cutoff: Option<Q>) -> Self {
        TateSeries { domain, terms: BTreeMap::new(), cutoff }
    }

    pub fn constant(domain: RationalDomain, c: Nov, cutoff: Option<Q>) -> Self {
        let n = domain.dim;
        Self::from_map(domain, BTreeMap::from([(vec![0; n], c.with_cutoff(None))]), cutoff)
    }

    /// `c · z^k`.
    pub fn monomial(domain: RationalDomain, k: Vec<i64>, c: Nov, cutoff: Option<Q>) -> Result<Self, MirrorError> {
        Self::new(domain, [(k, c)], cutoff)
    }

    /// The coordinate function `z_l`.
    pub fn coordinate(domain: RationalDomain, l: usize, cutoff: Option<Q>) -> Self {
        let mut k = vec![0; domain.dim];
        k[l] = 1;
        Self::from_map(domain, BTreeMap::from([(k, Nov::unit())]), cutoff)
    }

    pub fn domain(&self) -> &RationalDomain {
        &self.domain
    }

    pub fn terms(&self) -> &BTreeMap<Vec<i64>, Nov> {
        &self.terms
    }

    pub fn cutoff(&self) -> Option<&Q> {
        self.cutoff.as_ref()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, k: &[i64]) -> Nov {
        self.terms.get(k).cloned().unwrap_or_default()
    }

    /// `val(a_k) + min_{x∈U} ⟨k, x⟩`.
    pub fn term_weight(&self, k: &[i64], a: &Nov) -> Valuation {
        match a.val() {
            Valuation::Finite(v) => Valuation::Finite(v + self.domain.min_dot(k)),
            Valuation::Infinite => Valuation::Infinite,
        }
    }

    pub fn min_weight(&self) -> Valuation {
        self.terms
            .iter()
            .map(|(k, a)| self.term_weight(k, a))
            .min()
            .unwrap_or(Valuation::Infinite)
    }

    /// Term of least weight, ties broken by exponent order.
    pub fn leading_term(&self) -> Option<(Vec<i64>, Nov, Q)> {
        self.terms
            .iter()
            .filter_map(|(k, a)| match self.term_weight(k, a) {
                Valuation::Finite(w) => Some((k.clone(), a.clone(), w)),
                Valuation::Infinite => None,
            })
            .min_by(|x, y| x.2.cmp(&y.2))
    }

    pub fn truncate(&self, e: &Q) -> TateSeries {
        Self::from_map(self.domain.clone(), self.terms.clone(), min_opt(self.cutoff.clone(), Some(e.clone())))
    }

    pub fn with_cutoff(&self, cutoff: Option<Q>) -> TateSeries {
        Self::from_map(self.domain.clone(), self.terms.clone(), cutoff)
    }

    /// Same terms on a subdomain. Weights can only grow, so the cutoff is kept.
    pub fn restrict(&self, domain: &RationalDomain) -> Result<TateSeries, MirrorError> {
        if !self.domain.contains_domain(domain) {
            return Err(MirrorError::DomainMismatch);
        }
        Ok(Self::from_map(domain.clone(), self.terms.clone(), self.cutoff.clone()))
    }

    fn check_domain(&self, other: &TateSeries) -> Result<(), MirrorError> {
        if self.domain != other.domain {
            return Err(MirrorError::DomainMismatch);
        }
        Ok(())
    }

    pub fn add(&self, other: &TateSeries) -> Result<TateSeries, MirrorError> {
        self.check_domain(other)?;
        let mut terms = self.terms.clone();
        for (k, a) in &other.terms {
            let e = terms.entry(k.clone()).or_default();
            *e = e.add(a);
        }
        Ok(Self::from_map(self.domain.clone(), terms, min_opt(self.cutoff.clone(), other.cutoff.clone())))
    }

    pub fn neg(&self) -> TateSeries {
        TateSeries {
            domain: self.domain.clone(),
            terms: self.terms.iter().map(|(k, a)| (k.clone(), a.neg())).collect(),
            cutoff: self.cutoff.clone(),
        }
    }

    pub fn sub(&self, other: &TateSeries) -> Result<TateSeries, MirrorError> {
        self.add(&other.neg())
    }

    /// Unknown terms of one factor have weight above its cutoff, so the
    /// product is known up to `min(E₁ + w₂, E₂ + w₁)` with `w` the least
    /// weight of the other factor.
    fn product_cutoff(&self, other: &TateSeries) -> Option<Q> {
        let mut c = min_opt(self.cutoff.clone(), other.cutoff.clone());
        if let (Some(e), Valuation::Finite(w)) = (&self.cutoff, other.min_weight()) {
            c = min_opt(c, Some(e + w));
        }
        if let (Some(e), Valuation::Finite(w)) = (&other.cutoff, self.min_weight()) {
            c = min_opt(c, Some(e + w));
        }
        c
    }

    pub fn mul(&self, other: &TateSeries) -> Result<TateSeries, MirrorError> {
        self.check_domain(other)?;
        let cutoff = self.product_cutoff(other);
        let mut mins: HashMap<Vec<i64>, Q> = HashMap::new();
        let mut terms: BTreeMap<Vec<i64>, Nov> = BTreeMap::new();
        for (k1, a1) in &self.terms {
            let v1 = a1.val();
            for (k2, a2) in &other.terms {
                let k: Vec<i64> = k1.iter().zip(k2).map(|(a, b)| a + b).collect();
                if let (Some(e), Valuation::Finite(v)) = (&cutoff, v1.add(&a2.val())) {
                    let md = mins.entry(k.clone()).or_insert_with(|| self.domain.min_dot(&k));
                    if &(v + &*md) > e {
                        continue;
                    }
                }
                let p = a1.mul(a2);
                let slot = terms.entry(k).or_default();
                *slot = slot.add(&p);
            }
        }
        Ok(Self::from_map(self.domain.clone(), terms, cutoff))
    }

    /// Multiplication by a scalar; the cutoff moves with its valuation.
    pub fn scale(&self, c: &Nov) -> TateSeries {
        let c = c.clone().with_cutoff(None);
        let cutoff = match (&self.cutoff, c.val()) {
            (Some(e), Valuation::Finite(v)) => Some(e + v),
            (e, _) => e.clone(),
        };
        Self::from_map(
            self.domain.clone(),
            self.terms.iter().map(|(k, a)| (k.clone(), a.mul(&c))).collect(),
            cutoff,
        )
    }

    pub fn scale_q(&self, c: &Q) -> TateSeries {
        Self::from_map(
            self.domain.clone(),
            self.terms.iter().map(|(k, a)| (k.clone(), a.scale(c))).collect(),
            self.cutoff.clone(),
        )
    }

    /// `Σ s^j / j!`, defined when every term has positive weight.
    pub fn exp(&self) -> Result<TateSeries, MirrorError> {
        let one = TateSeries::constant(self.domain.clone(), Nov::unit(), self.cutoff.clone());
        match self.min_weight() {
            Valuation::Infinite => return Ok(one),
            Valuation::Finite(w) if !w.is_positive() => {
                return Err(MirrorError::NotConvergent(format!("exponent has weight {}", q_to_string(&w))))
            }
            _ => {}
        }
        if self.cutoff.is_none() {
            return Err(MirrorError::Novikov(NovikovError::Untruncated));
        }
        let mut sum = one.clone();
        let mut power = one;
        let mut j = 0usize;
        loop {
            j += 1;
            power = power.mul(self)?;
            if power.is_zero() {
                break;
            }
            sum = sum.add(&power.scale_q(&factorial(j).recip()))?;
        }
        Ok(sum.with_cutoff(self.cutoff.clone()))
    }

    /// Inverse of a series dominated by one monomial `m`: writing the
    /// series as `m(1 + u)` with `u` of positive weight, the inverse is
    /// `m⁻¹ Σ (−u)^j`.
    pub fn invert(&self) -> Result<TateSeries, MirrorError> {
        let (k0, a0, _) = self
            .leading_term()
            .ok_or_else(|| MirrorError::NotInvertible("zero series".into()))?;
        let (v0, c0) = a0.terms()[0].clone();
        let m_inv = TateSeries::monomial(
            self.domain.clone(),
            k0.iter().map(|v| -v).collect(),
            Nov::monomial(c0.recip(), -v0),
            None,
        )?;
        let one = TateSeries::constant(self.domain.clone(), Nov::unit(), None);
        let u = m_inv.mul(self)?.sub(&one)?;
        if let Valuation::Finite(w) = u.min_weight() {
            if !w.is_positive() {
                return Err(MirrorError::NotInvertible(format!(
                    "no dominant monomial, relative weight {}",
                    q_to_string(&w)
                )));
            }
        }
        if self.cutoff.is_none() && !u.is_zero() {
            return Err(MirrorError::Novikov(NovikovError::Untruncated));
        }
        let minus_u = u.neg();
        let mut sum = one.with_cutoff(u.cutoff.clone());
        let mut power = sum.clone();
        loop {
            power = power.mul(&minus_u)?;
            if power.is_zero() {
                break;
            }
            sum = sum.add(&power)?;
        }
        m_inv.mul(&sum)
    }

    pub fn pow(&self, e: i64) -> Result<TateSeries, MirrorError> {
        if e < 0 {
            return self.invert()?.pow(-e);
        }
        let mut acc = TateSeries::constant(self.domain.clone(), Nov::unit(), None);
        let mut base = self.clone();
        let mut e = e as u64;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base)?;
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base)?;
            }
        }
        Ok(acc)
    }

    /// `s(z) ↦ s(T^{p} z')` as a series in `z' = T^{−p} z` on `U − p`: the
    /// coefficient of `z^k` gains `T^{⟨k,p⟩}`. Term weights are unchanged.
    pub fn translate(&self, p: &[Q]) -> TateSeries {
        TateSeries {
            domain: self.domain.translate(p),
            terms: self
                .terms
                .iter()
                .map(|(k, a)| (k.clone(), a.shift(&dot_int(k, p))))
                .collect(),
            cutoff: self.cutoff.clone(),
        }
    }

    /// Substitutes `z_l ↦ subst[l]`. The substituted series must live on a
    /// common domain whose valuation image lies in this series' domain, so
    /// that dropped terms stay above the cutoff.
    pub fn compose(&self, subst: &[TateSeries]) -> Result<TateSeries, MirrorError> {
        if subst.len() != self.domain.dim {
            return Err(MirrorError::Dimension { expected: self.domain.dim, got: subst.len() });
        }
        let target = subst[0].domain.clone();
        if subst.iter().any(|s| s.domain != target) {
            return Err(MirrorError::DomainMismatch);
        }
        let mut powers: HashMap<(usize, i64), TateSeries> = HashMap::new();
        let mut acc = TateSeries::zero(target.clone(), self.cutoff.clone());
        for (k, a) in &self.terms {
            let mut term = TateSeries::constant(target.clone(), a.clone(), None);
            for (l, &e) in k.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                if !powers.contains_key(&(l, e)) {
                    powers.insert((l, e), subst[l].pow(e)?);
                }
                term = term.mul(&powers[&(l, e)])?;
            }
            acc = acc.add(&term)?;
        }
        Ok(acc)
    }

    /// Value at a point `z` with exact Novikov coordinates, known modulo
    /// `T^{>E}` when the point's valuation lies in the domain.
    pub fn eval(&self, z: &[Nov]) -> Result<Nov, MirrorError> {
        if z.len() != self.domain.dim {
            return Err(MirrorError::Dimension { expected: self.domain.dim, got: z.len() });
        }
        let mut acc = Nov::zero_at(None);
        for (k, a) in &self.terms {
            let mut t = a.clone();
            for (zl, &e) in z.iter().zip(k) {
                let base = if e < 0 { zl.invert()? } else { zl.clone() };
                t = t.mul(&base.pow(e.unsigned_abs() as u32));
            }
            acc = acc.add(&t);
        }
        Ok(match &self.cutoff {
            Some(e) => acc.truncate(e),
            None => acc,
        })
    }

    /// Least weight of `self − other` together with the term realising it.
    pub fn residual(&self, other: &TateSeries) -> Result<SeriesResidual, MirrorError> {
        let d = self.sub(other)?;
        Ok(SeriesResidual {
            generator: 0,
            leading: d.min_weight(),
            leading_term: d.leading_term().map(|(k, a, _)| (k, a)),
            precision: d.cutoff.clone(),
        })
    }

    pub fn eq_mod(&self, other: &TateSeries, e: &Q) -> Result<bool, MirrorError> {
        Ok(self.residual(other)?.passes(e))
    }
}

/// One primitive ray of exponents along which the stored terms below the
/// cutoff fail to grow in weight.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RayViolation {
    pub direction: Vec<i64>,
    /// `(multiple, weight)` of the stored terms on the ray below the cutoff.
    pub weights: Vec<(i64, Q)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConditionStarReport {
    pub passed: bool,
    pub below_cutoff: usize,
    pub violations: Vec<RayViolation>,
    pub violating_terms: Vec<Vec<i64>>,
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Truncated convergence test on the polytope's vertices. A finite list of
/// terms is a sample of a possibly infinite series; it is rejected when
/// three or more terms on one ray `{m·d}` have weight at most `E` and the
/// weight stops growing at the outermost of them, since such a family
/// would put unboundedly many terms below the cutoff.
pub fn check_condition_star(s: &TateSeries) -> ConditionStarReport {
    let below: Vec<(Vec<i64>, Q)> = s
        .terms
        .iter()
        .filter_map(|(k, a)| match s.term_weight(k, a) {
            Valuation::Finite(w) if s.cutoff.as_ref().map_or(true, |e| &w <= e) => Some((k.clone(), w)),
            _ => None,
        })
        .collect();
    let mut rays: BTreeMap<Vec<i64>, Vec<(i64, Q)>> = BTreeMap::new();
    for (k, w) in &below {
        let g = k.iter().fold(0, |acc, &v| gcd(acc, v));
        if g == 0 {
            continue;
        }
        let d: Vec<i64> = k.iter().map(|v| v / g).collect();
        rays.entry(d).or_default().push((g, w.clone()));
    }
    let mut violations = Vec::new();
    let mut violating_terms = Vec::new();
    for (d, mut ws) in rays {
        ws.sort();
        let n = ws.len();
        if n >= 3 && ws[n - 1].1 <= ws[n - 2].1 {
            violating_terms.extend(ws.iter().map(|(m, _)| d.iter().map(|v| v * m).collect::<Vec<_>>()));
            violations.push(RayViolation { direction: d, weights: ws });
        }
    }
    ConditionStarReport {
        passed: violations.is_empty(),
        below_cutoff: below.len(),
        violations,
        violating_terms,
    }
}

/// Homotopy class of a disk: boundary pairing with the coordinate basis,
/// symplectic area, and the wall datum `⟨F_{0,α}, e_k⟩`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiskClass {
    pub boundary: Vec<i64>,
    pub area: Q,
    pub correction: Vec<Q>,
}

impl DiskClass {
    pub fn new(boundary: Vec<i64>, area: Q, correction: Vec<Q>) -> Result<Self, MirrorError> {
        if !area.is_positive() {
            return Err(MirrorError::NonPositiveArea(q_to_string(&area)));
        }
        if boundary.len() != correction.len() {
            return Err(MirrorError::Dimension { expected: boundary.len(), got: correction.len() });
        }
        Ok(DiskClass { boundary, area, correction })
    }

    /// Class with no wall datum, used for monomials only.
    pub fn plain(boundary: Vec<i64>, area: Q) -> Result<Self, MirrorError> {
        let n = boundary.len();
        Self::new(boundary, area, vec![Q::zero(); n])
    }

    /// Sum of classes: pairings and areas add.
    pub fn sum(&self, other: &DiskClass) -> DiskClass {
        DiskClass {
            boundary: self.boundary.iter().zip(&other.boundary).map(|(a, b)| a + b).collect(),
            area: &self.area + &other.area,
            correction: self.correction.iter().zip(&other.correction).map(|(a, b)| a + b).collect(),
        }
    }

    /// Area on the fiber over `x` when the recorded area is measured at `from`.
    pub fn area_at(&self, from: &[Q], x: &[Q]) -> Q {
        let d: Vec<Q> = x.iter().zip(from).map(|(a, b)| a - b).collect();
        &self.area + dot_int(&self.boundary, &d)
    }
}

/// `Z_α = T^{area} z^{∂α}`.
pub fn z_monomial(alpha: &DiskClass, domain: &RationalDomain, cutoff: Option<Q>) -> Result<TateSeries, MirrorError> {
    TateSeries::monomial(domain.clone(), alpha.boundary.clone(), Nov::monomial(Q::one(), alpha.area.clone()), cutoff)
}

/// `c T^v z^k · U(z)` with `U = 1 + (terms of positive weight)`. Keeping the
/// monomial exact and truncating only the unit measures precision relative
/// to the leading monomial, which survives composition and inversion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MonoUnit {
    pub coeff: Nov,
    pub exponent: Vec<i64>,
    pub unit: TateSeries,
}

impl MonoUnit {
    pub fn monomial(domain: &RationalDomain, exponent: Vec<i64>, coeff: Nov) -> Self {
        MonoUnit { coeff, exponent, unit: TateSeries::constant(domain.clone(), Nov::unit(), None) }
    }

    pub fn domain(&self) -> &RationalDomain {
        &self.unit.domain
    }

    fn mono_series(&self) -> TateSeries {
        TateSeries::from_map(self.domain().clone(), BTreeMap::from([(self.exponent.clone(), self.coeff.clone())]), None)
    }

    /// The component as an ordinary series.
    pub fn series(&self) -> Result<TateSeries, MirrorError> {
        self.mono_series().mul(&self.unit)
    }

    /// Weight of the leading monomial on the domain.
    pub fn leading_weight(&self) -> Q {
        self.coeff.val().finite().cloned().unwrap_or_default() + self.domain().min_dot(&self.exponent)
    }

    fn mul(&self, other: &MonoUnit) -> Result<MonoUnit, MirrorError> {
        Ok(MonoUnit {
            coeff: self.coeff.mul(&other.coeff),
            exponent: self.exponent.iter().zip(&other.exponent).map(|(a, b)| a + b).collect(),
            unit: self.unit.mul(&other.unit)?,
        })
    }

    fn pow(&self, e: i64) -> Result<MonoUnit, MirrorError> {
        let coeff = if e >= 0 { self.coeff.pow(e as u32) } else { self.coeff.invert()?.pow((-e) as u32) };
        Ok(MonoUnit {
            coeff,
            exponent: self.exponent.iter().map(|v| v * e).collect(),
            unit: self.unit.pow(e)?,
        })
    }

    /// Splits a series dominated by one monomial.
    pub fn from_series(s: &TateSeries) -> Result<MonoUnit, MirrorError> {
        let (k, a, _) = s.leading_term().ok_or_else(|| MirrorError::NotInvertible("zero series".into()))?;
        let (v, c) = a.terms()[0].clone();
        let m = MonoUnit::monomial(s.domain(), k, Nov::monomial(c, v));
        let unit = m.mono_series().invert()?.mul(s)?;
        if let Valuation::Finite(w) = unit.sub(&TateSeries::constant(s.domain().clone(), Nov::unit(), None))?.min_weight() {
            if !w.is_positive() {
                return Err(MirrorError::NotInvertible(format!("no dominant monomial, relative weight {}", q_to_string(&w))));
            }
        }
        Ok(MonoUnit { unit, ..m })
    }

    /// Value at a point; the unit's truncation is relative, so the result is
    /// known up to `T^{E + val(monomial)}`.
    pub fn eval(&self, z: &[Nov]) -> Result<Nov, MirrorError> {
        let m = self.mono_series().eval(z)?;
        let u = self.unit.eval(z)?;
        let cutoff = match (u.cutoff(), m.val()) {
            (Some(e), Valuation::Finite(v)) => Some(e + v),
            _ => None,
        };
        Ok(m.mul(&u.clone().with_cutoff(None)).with_cutoff(cutoff))
    }
}

/// Component-wise substitution `z^target_k = comps[k](z^source)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Substitution {
    pub comps: Vec<MonoUnit>,
}

impl Substitution {
    pub fn identity(domain: &RationalDomain) -> Self {
        let n = domain.dim;
        Substitution {
            comps: (0..n)
                .map(|l| {
                    let mut k = vec![0; n];
                    k[l] = 1;
                    MonoUnit::monomial(domain, k, Nov::unit())
                })
                .collect(),
        }
    }

    /// `z_k ↦ T^{shift_k} z^{A_k}`.
    pub fn monomial_map(domain: &RationalDomain, a: &IntMatrix, shifts: &[Q]) -> Result<Self, MirrorError> {
        if a.len() != domain.dim || shifts.len() != domain.dim {
            return Err(MirrorError::Dimension { expected: domain.dim, got: a.len().min(shifts.len()) });
        }
        Ok(Substitution {
            comps: a
                .iter()
                .zip(shifts)
                .map(|(row, s)| MonoUnit::monomial(domain, row.clone(), Nov::monomial(Q::one(), s.clone())))
                .collect(),
        })
    }

    pub fn from_series(comps: &[TateSeries]) -> Result<Self, MirrorError> {
        Ok(Substitution { comps: comps.iter().map(MonoUnit::from_series).collect::<Result<_, _>>()? })
    }

    pub fn source(&self) -> &RationalDomain {
        self.comps[0].domain()
    }

    pub fn series(&self) -> Result<Vec<TateSeries>, MirrorError> {
        self.comps.iter().map(MonoUnit::series).collect()
    }

    /// `s ∘ self`. The valuation image of the source must lie in the domain
    /// of `s`, so that dropped terms of `s` stay above its cutoff.
    pub fn pullback(&self, s: &TateSeries) -> Result<TateSeries, MirrorError> {
        let n = self.comps.len();
        if s.domain.dim != n {
            return Err(MirrorError::Dimension { expected: n, got: s.domain.dim });
        }
        let src = self.source().clone();
        let mut powers: HashMap<(usize, i64), MonoUnit> = HashMap::new();
        let mut acc = TateSeries::zero(src.clone(), s.cutoff.clone());
        for (k, a) in &s.terms {
            let mut term = MonoUnit::monomial(&src, vec![0; n], a.clone());
            for (l, &e) in k.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                if !powers.contains_key(&(l, e)) {
                    powers.insert((l, e), self.comps[l].pow(e)?);
                }
                term = term.mul(&powers[&(l, e)])?;
            }
            acc = acc.add(&term.series()?)?;
        }
        Ok(acc)
    }

    /// `outer ∘ self`: first this map, then `outer`.
    pub fn then(&self, outer: &Substitution) -> Result<Substitution, MirrorError> {
        let n = self.comps.len();
        let comps = outer
            .comps
            .par_iter()
            .map(|c| {
                let mut acc = MonoUnit::monomial(self.source(), vec![0; n], c.coeff.clone());
                for (l, &e) in c.exponent.iter().enumerate() {
                    if e != 0 {
                        acc = acc.mul(&self.comps[l].pow(e)?)?;
                    }
                }
                acc.unit = acc.unit.mul(&self.pullback(&c.unit)?)?;
                Ok(acc)
            })
            .collect::<Result<_, MirrorError>>()?;
        Ok(Substitution { comps })
    }

    pub fn restrict(&self, domain: &RationalDomain) -> Result<Substitution, MirrorError> {
        Ok(Substitution {
            comps: self
                .comps
                .iter()
                .map(|c| Ok(MonoUnit { unit: c.unit.restrict(domain)?, ..c.clone() }))
                .collect::<Result<_, MirrorError>>()?,
        })
    }

    pub fn eval(&self, z: &[Nov]) -> Result<Vec<Nov>, MirrorError> {
        self.comps.iter().map(|c| c.eval(z)).collect()
    }

    /// Residual of each component as ordinary series.
    pub fn residuals(&self, other: &Substitution) -> Result<Vec<SeriesResidual>, MirrorError> {
        self.comps
            .iter()
            .zip(&other.comps)
            .enumerate()
            .map(|(g, (a, b))| {
                let mut r = a.series()?.residual(&b.series()?)?;
                r.generator = g;
                Ok(r)
            })
            .collect()
    }

    /// Inverse map on `target`, the domain of the output coordinates. With
    /// components `c_k T^{v_k} w^{A_k} U_k(w)` and `B = A⁻¹`, the inverse is
    /// the fixed point of `w_l = L⁻¹(z)_l · ∏_k U_k(w)^{−B_lk}`.
    pub fn invert(&self, target: &RationalDomain) -> Result<Substitution, MirrorError> {
        let n = self.comps.len();
        let a: IntMatrix = self.comps.iter().map(|c| c.exponent.clone()).collect();
        let b = int_inverse(&a)?;
        let w0: Vec<MonoUnit> = (0..n)
            .map(|l| {
                let mut coef = Nov::unit();
                for (k, c) in self.comps.iter().enumerate() {
                    let base = c.coeff.invert()?;
                    let bk = b[l][k];
                    coef = coef.mul(&if bk >= 0 { base.pow(bk as u32) } else { c.coeff.pow((-bk) as u32) });
                }
                Ok(MonoUnit::monomial(target, b[l].clone(), coef))
            })
            .collect::<Result<_, MirrorError>>()?;
        let mut w = Substitution { comps: w0.clone() };
        for _ in 0..256 {
            let u_at: Vec<TateSeries> = self.comps.iter().map(|c| w.pullback(&c.unit)).collect::<Result<_, _>>()?;
            let next: Vec<MonoUnit> = (0..n)
                .map(|l| {
                    let mut acc = w0[l].clone();
                    for (k, u) in u_at.iter().enumerate() {
                        if b[l][k] != 0 {
                            acc.unit = acc.unit.mul(&u.pow(-b[l][k])?)?;
                        }
                    }
                    Ok(acc)
                })
                .collect::<Result<_, MirrorError>>()?;
            if next.iter().zip(&w.comps).all(|(x, y)| x.unit.terms == y.unit.terms) {
                return Ok(Substitution { comps: next });
            }
            w = Substitution { comps: next };
        }
        Err(MirrorError::NotInvertible("fixed-point iteration did not settle".into()))
    }
}

/// Difference of two series: least weight and the term realising it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeriesResidual {
    pub generator: usize,
    pub leading: Valuation,
    pub leading_term: Option<(Vec<i64>, Nov)>,
    /// Weight up to which the difference is known.
    pub precision: Option<Q>,
}

impl SeriesResidual {
    /// The difference vanishes modulo weight `> e`.
    pub fn passes(&self, e: &Q) -> bool {
        let known = self.precision.as_ref().map_or(true, |p| p >= e);
        let small = match &self.leading {
            Valuation::Finite(w) => w > e,
            Valuation::Infinite => true,
        };
        known && small
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WallMode {
    /// Wall data given for this ordered overlap.
    Supplied,
    /// Transition computed as the series inverse of the reverse overlap.
    Synthesized,
}

/// Ordered overlap `(from, to)`: the chart change `x^to = p^to + A(x^from − p^from)`
/// at a common point `p`, and the wall classes with areas measured at `p`
/// and boundaries in the `from` coordinates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Overlap {
    pub matrix: IntMatrix,
    pub point_from: Vec<Q>,
    pub point_to: Vec<Q>,
    pub walls: Vec<DiskClass>,
    pub mode: WallMode,
}

/// A chart's domain, in coordinates centered at its basepoint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chart {
    pub index: usize,
    pub domain: RationalDomain,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Atlas {
    pub n: usize,
    pub charts: Vec<Chart>,
    pub overlaps: BTreeMap<(usize, usize), Overlap>,
    pub cutoff: Q,
    pub unobstructed: bool,
}

impl Atlas {
    pub fn new(n: usize, domains: Vec<RationalDomain>, cutoff: Q, unobstructed: bool) -> Result<Self, MirrorError> {
        let charts = domains
            .into_iter()
            .enumerate()
            .map(|(index, domain)| {
                if domain.dim() != n {
                    return Err(MirrorError::Dimension { expected: n, got: domain.dim() });
                }
                Ok(Chart { index, domain })
            })
            .collect::<Result<_, _>>()?;
        Ok(Atlas { n, charts, overlaps: BTreeMap::new(), cutoff, unobstructed })
    }

    /// Charts cut out of a flat integral-affine plane: patch `i` is the
    /// global polytope `P_i` seen through `x^i = A_i y + c_i`. Every pair of
    /// patches with full-dimensional intersection gets a correction-free
    /// overlap in both directions at the barycenter of the intersection.
    pub fn from_patches(
        patches: Vec<(RationalDomain, IntMatrix, Vec<Q>)>,
        cutoff: Q,
        unobstructed: bool,
    ) -> Result<Self, MirrorError> {
        let n = patches.first().map(|p| p.0.dim()).unwrap_or(0);
        let zero = vec![Q::zero(); n];
        let domains = patches
            .iter()
            .map(|(p, a, c)| p.affine_image(a, &zero, c))
            .collect::<Result<_, _>>()?;
        let mut atlas = Atlas::new(n, domains, cutoff, unobstructed)?;
        for i in 0..patches.len() {
            for j in 0..patches.len() {
                if i == j {
                    continue;
                }
                let Ok(common) = patches[i].0.intersect(&patches[j].0) else { continue };
                let y = common.barycenter();
                let (ai, ci) = (&patches[i].1, &patches[i].2);
                let (aj, cj) = (&patches[j].1, &patches[j].2);
                let matrix = int_mat_mul(aj, &int_inverse(ai)?);
                atlas.overlaps.insert(
                    (i, j),
                    Overlap {
                        matrix,
                        point_from: affine_map(ai, &zero, ci, &y),
                        point_to: affine_map(aj, &zero, cj, &y),
                        walls: Vec::new(),
                        mode: WallMode::Supplied,
                    },
                );
            }
        }
        Ok(atlas)
    }

    pub fn set_overlap(&mut self, from: usize, to: usize, ov: Overlap) -> Result<(), MirrorError> {
        self.chart(from)?;
        self.chart(to)?;
        int_inverse(&ov.matrix)?;
        for p in [&ov.point_from, &ov.point_to] {
            if p.len() != self.n {
                return Err(MirrorError::Dimension { expected: self.n, got: p.len() });
            }
        }
        if let Some(w) = ov.walls.iter().find(|w| w.boundary.len() != self.n) {
            return Err(MirrorError::Dimension { expected: self.n, got: w.boundary.len() });
        }
        self.overlaps.insert((from, to), ov);
        Ok(())
    }

    pub fn set_walls(&mut self, from: usize, to: usize, walls: Vec<DiskClass>) -> Result<(), MirrorError> {
        let ov = self.overlaps.get_mut(&(from, to)).ok_or(MirrorError::MissingWallData(from, to))?;
        ov.walls = walls;
        ov.mode = WallMode::Supplied;
        Ok(())
    }

    /// Marks `(to, from)` as the series inverse of `(from, to)`.
    pub fn synthesize_inverse(&mut self, from: usize, to: usize) -> Result<(), MirrorError> {
        let ov = self.overlaps.get(&(from, to)).ok_or(MirrorError::MissingWallData(from, to))?;
        let rev = Overlap {
            matrix: int_inverse(&ov.matrix)?,
            point_from: ov.point_to.clone(),
            point_to: ov.point_from.clone(),
            walls: Vec::new(),
            mode: WallMode::Synthesized,
        };
        self.overlaps.insert((to, from), rev);
        Ok(())
    }

    pub fn chart(&self, i: usize) -> Result<&Chart, MirrorError> {
        self.charts.get(i).ok_or(MirrorError::UnknownChart(i))
    }

    pub fn overlap(&self, i: usize, j: usize) -> Result<&Overlap, MirrorError> {
        self.chart(i)?;
        self.chart(j)?;
        self.overlaps.get(&(i, j)).ok_or(MirrorError::MissingWallData(i, j))
    }

    /// Valuation-level chart change `x^j = p^j + A(x^i − p^i)`.
    pub fn change_chart(&self, i: usize, j: usize, x: &[Q]) -> Result<Vec<Q>, MirrorError> {
        let ov = self.overlap(i, j)?;
        Ok(affine_map(&ov.matrix, &ov.point_from, &ov.point_to, x))
    }

    /// `U_ij`: the part of chart `i` that chart `j` also covers, in chart `i`
    /// coordinates.
    pub fn overlap_domain(&self, i: usize, j: usize) -> Result<RationalDomain, MirrorError> {
        let ov = self.overlap(i, j)?;
        let back = self.chart(j)?.domain.affine_image(&int_inverse(&ov.matrix)?, &ov.point_to, &ov.point_from)?;
        self.chart(i)?.domain.intersect(&back)
    }

    /// `U_i ∩ U_j ∩ U_k` in chart `i` coordinates.
    pub fn triple_domain(&self, i: usize, j: usize, k: usize) -> Result<RationalDomain, MirrorError> {
        self.overlap_domain(i, j)?.intersect(&self.overlap_domain(i, k)?)
    }

    fn check_point(&self, dom: &RationalDomain, p: &[Q]) -> Result<(), MirrorError> {
        if !dom.contains(p) {
            return Err(MirrorError::OutsideDomain(point_string(p)));
        }
        Ok(())
    }

    /// `Φ_ij` at `p` (chart `i` coordinates), as a substitution on
    /// `U_ij − p^i` in the centered variables `w = T^{−p^i} z`:
    /// `w'_k = ∏_l [w_l exp(Σ_α ⟨F_{0,α}, e_l⟩ Z_α(w))]^{A_kl}` with the areas
    /// of `Z_α` taken on the fiber over `p`.
    pub fn wall_crossing(&self, i: usize, j: usize, p: &[Q], cutoff: &Q) -> Result<Substitution, MirrorError> {
        if !self.unobstructed {
            return Err(MirrorError::UnobstructednessNotDeclared);
        }
        let ov = self.overlap(i, j)?;
        if ov.mode == WallMode::Synthesized {
            return Err(MirrorError::MissingWallData(i, j));
        }
        let dom = self.overlap_domain(i, j)?;
        self.check_point(&dom, p)?;
        let centered = dom.translate(p);
        let comps = ov
            .matrix
            .par_iter()
            .map(|row| {
                let mono_weight = centered.min_dot(row);
                let exp_cut = cutoff - mono_weight.min(Q::zero());
                let mut x = TateSeries::zero(centered.clone(), Some(exp_cut.clone()));
                for alpha in &ov.walls {
                    let c: Q = row.iter().zip(&alpha.correction).map(|(&a, c)| c * Q::from_integer(a.into())).sum();
                    if c.is_zero() {
                        continue;
                    }
                    let shifted = DiskClass { area: alpha.area_at(&ov.point_from, p), ..alpha.clone() };
                    x = x.add(&z_monomial(&shifted, &centered, Some(exp_cut.clone()))?.scale_q(&c))?;
                }
                Ok(MonoUnit { coeff: Nov::unit(), exponent: row.clone(), unit: x.exp()? })
            })
            .collect::<Result<_, MirrorError>>()?;
        Ok(Substitution { comps })
    }

    /// `Ψ_ij = S_{u_j,p}⁻¹ ∘ Φ_ij ∘ S_{u_i,p}` on `U_ij`, computed at the common
    /// point `p` given in chart `i` coordinates.
    pub fn transition(&self, i: usize, j: usize, p: &[Q], cutoff: &Q) -> Result<Substitution, MirrorError> {
        if !self.unobstructed {
            return Err(MirrorError::UnobstructednessNotDeclared);
        }
        let ov = self.overlap(i, j)?;
        let dom = self.overlap_domain(i, j)?;
        self.check_point(&dom, p)?;
        let pj = affine_map(&ov.matrix, &ov.point_from, &ov.point_to, p);
        if ov.mode == WallMode::Synthesized {
            let rev = self.overlap(j, i)?;
            if rev.mode == WallMode::Synthesized {
                return Err(MirrorError::MissingWallData(j, i));
            }
            // the inverse needs relative precision `cutoff` minus the most
            // negative coordinate of chart j on the overlap
            let low = self
                .overlap_domain(j, i)?
                .vertices()
                .iter()
                .flat_map(|v| v.iter().cloned())
                .min()
                .unwrap_or_default();
            let back = self.transition(j, i, &pj, &(cutoff - low.min(Q::zero())))?;
            return back.invert(&dom);
        }
        // the rescaling by T^{p^j_k} moves each leading weight by p^j_k
        let lift = pj.iter().map(|v| -v).fold(Q::zero(), |a, b| a.max(b));
        let phi = self.wall_crossing(i, j, p, &(cutoff + lift))?;
        let neg_p: Vec<Q> = p.iter().map(|v| -v).collect();
        let comps = phi
            .comps
            .into_iter()
            .zip(&pj)
            .map(|(c, pjk)| MonoUnit {
                coeff: c.coeff.shift(&(pjk - dot_int(&c.exponent, p))),
                unit: c.unit.translate(&neg_p),
                exponent: c.exponent,
            })
            .collect();
        Ok(Substitution { comps })
    }

    /// `(Z_β)* = Z_β · exp(Σ_α ⟨F_{0,α}, ∂β⟩ Z_α)`: the pullback of `Z_β`
    /// through the correction part of `Φ_ij`, on `U_ij` in chart `i`
    /// coordinates.
    pub fn corrected_monomial(&self, i: usize, j: usize, beta: &DiskClass, cutoff: &Q) -> Result<TateSeries, MirrorError> {
        if !self.unobstructed {
            return Err(MirrorError::UnobstructednessNotDeclared);
        }
        let ov = self.overlap(i, j)?;
        if ov.mode == WallMode::Synthesized {
            return Err(MirrorError::MissingWallData(i, j));
        }
        let dom = self.overlap_domain(i, j)?;
        let zb = z_monomial(beta, &dom, None)?;
        let exp_cut = cutoff - zb.min_weight().finite().cloned().unwrap_or_default().min(Q::zero());
        let mut x = TateSeries::zero(dom.clone(), Some(exp_cut.clone()));
        for alpha in &ov.walls {
            let c: Q = beta.boundary.iter().zip(&alpha.correction).map(|(&b, c)| c * Q::from_integer(b.into())).sum();
            if !c.is_zero() {
                x = x.add(&z_monomial(alpha, &dom, Some(exp_cut.clone()))?.scale_q(&c))?;
            }
        }
        Ok(zb.mul(&x.exp()?)?.truncate(cutoff))
    }

    /// `(observed, expected)` valuation vectors of `Ψ_ij(z)` at each point:
    /// the componentwise valuation of the evaluated substitution against the
    /// affine chart change of `val(z)`. The substitution is computed at a
    /// cutoff above every coordinate valuation the overlap can reach.
    pub fn valuation_image(&self, i: usize, j: usize, points: &[Vec<Nov>]) -> Result<Vec<(Vec<Q>, Vec<Q>)>, MirrorError> {
        let dom = self.overlap_domain(i, j)?;
        let psi = self.transition(i, j, &dom.barycenter(), &self.cutoff)?;
        points
            .par_iter()
            .map(|z| {
                let x = self.fibration_valuation(i, z)?;
                if !dom.contains(&x) {
                    return Err(MirrorError::OutsideDomain(point_string(&x)));
                }
                let observed = psi
                    .eval(z)?
                    .iter()
                    .map(|w| w.val().finite().cloned().ok_or_else(|| MirrorError::NotInvertible("image vanishes".into())))
                    .collect::<Result<_, _>>()?;
                Ok((observed, self.change_chart(i, j, &x)?))
            })
            .collect()
    }

    /// Valuation vector of a point of chart `i`, checked against the chart's
    /// domain.
    pub fn fibration_valuation(&self, i: usize, z: &[Nov]) -> Result<Vec<Q>, MirrorError> {
        let chart = self.chart(i)?;
        if z.len() != self.n {
            return Err(MirrorError::Dimension { expected: self.n, got: z.len() });
        }
        let x: Vec<Q> = z
            .iter()
            .map(|v| match v.val() {
                Valuation::Finite(q) => Ok(q),
                Valuation::Infinite => Err(MirrorError::OutsideDomain("zero coordinate".into())),
            })
            .collect::<Result<_, _>>()?;
        self.check_point(&chart.domain, &x)?;
        Ok(x)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GluingCheck {
    pub label: String,
    pub passed: bool,
    pub residuals: Vec<SeriesResidual>,
}

impl GluingCheck {
    fn from_residuals(label: String, residuals: Vec<SeriesResidual>, e: &Q) -> Self {
        GluingCheck { label, passed: residuals.iter().all(|r| r.passes(e)), residuals }
    }

    fn flag(label: String, passed: bool) -> Self {
        GluingCheck { label, passed, residuals: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GluingReport {
    pub triple: (usize, usize, usize),
    pub cutoff: Q,
    pub working_cutoff: Q,
    pub point: Vec<Q>,
    pub second_point: Vec<Q>,
    pub modes: Vec<((usize, usize), WallMode)>,
    pub inverse: Vec<GluingCheck>,
    pub image: Vec<GluingCheck>,
    pub cocycle: GluingCheck,
    pub basepoint: Vec<GluingCheck>,
}

impl GluingReport {
    pub fn passed(&self) -> bool {
        self.inverse.iter().chain(&self.image).chain(&self.basepoint).all(|c| c.passed) && self.cocycle.passed
    }

    fn short_of_precision(&self) -> Option<Q> {
        self.inverse
            .iter()
            .chain(&self.basepoint)
            .chain(std::iter::once(&self.cocycle))
            .flat_map(|c| &c.residuals)
            .filter_map(|r| r.precision.as_ref().map(|p| &self.cutoff - p))
            .filter(|d| d.is_positive())
            .max()
    }
}

/// Second basepoint for the independence check: halfway between `p` and the
/// domain vertex farthest from it in the sup norm.
pub fn second_point(dom: &RationalDomain, p: &[Q]) -> Vec<Q> {
    let far = dom
        .vertices()
        .iter()
        .max_by_key(|v| v.iter().zip(p).map(|(a, b)| (a - b).abs()).max().unwrap_or_default())
        .expect("nonempty");
    let two = Q::from_integer(2.into());
    p.iter().zip(far).map(|(a, b)| (a + b) / &two).collect()
}

/// Runs the four gluing checks on the triple `(i, j, k)` modulo `T^{>E}`.
/// `p` defaults to the barycenter of the triple overlap in chart `i`
/// coordinates. Compositions lose precision through negative-weight
/// monomials, so the transitions are recomputed at a raised working cutoff
/// until every comparison is known up to `E`.
pub fn verify_gluing(
    atlas: &Atlas,
    triple: (usize, usize, usize),
    e: &Q,
    p: Option<Vec<Q>>,
    q: Option<Vec<Q>>,
) -> Result<GluingReport, MirrorError> {
    let (i, j, k) = triple;
    let dom = atlas.triple_domain(i, j, k)?;
    let p = p.unwrap_or_else(|| dom.barycenter());
    atlas.check_point(&dom, &p)?;
    let q = q.unwrap_or_else(|| second_point(&dom, &p));
    atlas.check_point(&dom, &q)?;
    let mut work = e.clone();
    let mut report = gluing_pass(atlas, triple, e, &work, &dom, &p, &q)?;
    for _ in 0..6 {
        match report.short_of_precision() {
            Some(d) => {
                work = &work + d + Q::one();
                report = gluing_pass(atlas, triple, e, &work, &dom, &p, &q)?;
            }
            None => break,
        }
    }
    Ok(report)
}

fn gluing_pass(
    atlas: &Atlas,
    (i, j, k): (usize, usize, usize),
    e: &Q,
    work: &Q,
    dom: &RationalDomain,
    p: &[Q],
    q: &[Q],
) -> Result<GluingReport, MirrorError> {
    let pairs = [(i, j), (j, k), (i, k)];
    let point_in = |c: usize, x: &[Q]| -> Result<Vec<Q>, MirrorError> {
        if c == i {
            Ok(x.to_vec())
        } else {
            atlas.change_chart(i, c, x)
        }
    };
    let mut modes = Vec::new();
    for &(a, b) in &pairs {
        modes.push(((a, b), atlas.overlap(a, b)?.mode));
        modes.push(((b, a), atlas.overlap(b, a)?.mode));
    }

    // forward and backward transitions at p and q
    let jobs: Vec<(usize, usize, Vec<Q>)> = pairs
        .iter()
        .flat_map(|&(a, b)| {
            [(a, b, p.to_vec()), (b, a, p.to_vec()), (a, b, q.to_vec())]
        })
        .map(|(a, b, x)| {
            let pa = point_in(a, &x)?;
            Ok((a, b, pa))
        })
        .collect::<Result<_, MirrorError>>()?;
    let maps: Vec<Substitution> = jobs
        .par_iter()
        .map(|(a, b, x)| atlas.transition(*a, *b, x, work))
        .collect::<Result<_, _>>()?;
    let fwd = |n: usize| &maps[3 * n];
    let bwd = |n: usize| &maps[3 * n + 1];
    let fwd_q = |n: usize| &maps[3 * n + 2];

    let mut inverse = Vec::new();
    for (n, &(a, b)) in pairs.iter().enumerate() {
        for (first, second, src, dst) in [(bwd(n), fwd(n), b, a), (fwd(n), bwd(n), a, b)] {
            let id = Substitution::identity(first.source());
            let comp = first.then(second)?;
            inverse.push(GluingCheck::from_residuals(
                format!("Psi_{dst}{src} o Psi_{src}{dst} = id"),
                comp.residuals(&id)?,
                e,
            ));
        }
    }

    let mut image = Vec::new();
    for &(a, b) in &pairs {
        let ov = atlas.overlap(a, b)?;
        let img = atlas.overlap_domain(a, b)?.affine_image(&ov.matrix, &ov.point_from, &ov.point_to)?;
        let there = atlas.overlap_domain(b, a)?;
        image.push(GluingCheck::flag(
            format!("val(U_{a}{b}) = U_{b}{a}"),
            there.contains_domain(&img) && img.contains_domain(&there),
        ));
    }
    for &c in &[j, k] {
        let ov = atlas.overlap(i, c)?;
        let img = dom.affine_image(&ov.matrix, &ov.point_from, &ov.point_to)?;
        let others: Vec<usize> = [i, j, k].into_iter().filter(|&x| x != c).collect();
        let there = atlas.triple_domain(c, others[0], others[1])?;
        image.push(GluingCheck::flag(
            format!("val(U_{i}{j}{k}) in chart {c} = U_{c}{}{}", others[0], others[1]),
            there.contains_domain(&img) && img.contains_domain(&there),
        ));
    }

    let ij = fwd(0).restrict(dom)?;
    let composite = ij.then(fwd(1))?;
    let direct = fwd(2).restrict(dom)?;
    let cocycle = GluingCheck::from_residuals(
        format!("Psi_{j}{k} o Psi_{i}{j} = Psi_{i}{k}"),
        composite.residuals(&direct)?,
        e,
    );

    let basepoint = pairs
        .iter()
        .enumerate()
        .map(|(n, &(a, b))| {
            Ok(GluingCheck::from_residuals(
                format!("Psi_{a}{b} at p = Psi_{a}{b} at q"),
                fwd(n).residuals(fwd_q(n))?,
                e,
            ))
        })
        .collect::<Result<_, MirrorError>>()?;

    Ok(GluingReport {
        triple: (i, j, k),
        cutoff: e.clone(),
        working_cutoff: work.clone(),
        point: p.to_vec(),
        second_point: q.to_vec(),
        modes,
        inverse,
        image,
        cocycle,
        basepoint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::{q, qi};

    fn square(lo: i64, hi: i64) -> RationalDomain {
        RationalDomain::boxed(&[qi(lo), qi(lo)], &[qi(hi), qi(hi)]).unwrap()
    }

    fn t(c: Q, e: Q) -> Nov {
        Nov::monomial(c, e)
    }

    #[test]
    fn polytope_vertices_and_facets() {
        let d = square(-1, 1);
        assert_eq!(d.vertices().len(), 4);
        assert_eq!(d.facets().len(), 4);
        assert_eq!(d.min_dot(&[1, -2]), qi(-3));
        let tri = RationalDomain::from_vertices(vec![
            vec![qi(0), qi(0)],
            vec![qi(2), qi(0)],
            vec![qi(0), qi(2)],
            vec![q(1, 2), q(1, 2)],
        ])
        .unwrap();
        assert_eq!(tri.vertices().len(), 3);
        assert!(tri.on_boundary(&[qi(1), qi(1)]));
        assert!(!tri.contains(&[qi(2), qi(1)]));
        let cut = d.intersect(&tri).unwrap();
        assert_eq!(cut.vertices().len(), 4);
        assert!(square(0, 1).intersect(&RationalDomain::boxed(&[qi(1), qi(0)], &[qi(2), qi(1)]).unwrap()).is_err());
    }

    #[test]
    fn condition_star_examples() {
        let d = square(-1, 1);
        let c = TateSeries::constant(d.clone(), Nov::unit(), Some(qi(3)));
        assert!(check_condition_star(&c).passed);
        let z1 = TateSeries::coordinate(d.clone(), 0, Some(qi(3)));
        assert!(check_condition_star(&z1).passed);
        // z₁^m for m = 1..20 on a domain touching x₁ = 0: weight 0 forever
        let flat = RationalDomain::boxed(&[qi(0), qi(0)], &[qi(1), qi(1)]).unwrap();
        let bad = TateSeries::new(flat.clone(), (1..=20).map(|m| (vec![m, 0], Nov::unit())), Some(qi(2))).unwrap();
        let r = check_condition_star(&bad);
        assert!(!r.passed);
        assert_eq!(r.violations[0].direction, vec![1, 0]);
        assert_eq!(r.violating_terms.len(), 20);
        // the same family with energies growing linearly passes
        let good = TateSeries::new(flat, (1..=20).map(|m| (vec![m, 0], t(Q::one(), q(m, 4)))), Some(qi(2))).unwrap();
        assert!(check_condition_star(&good).passed);
    }

    #[test]
    fn translation_round_trip_and_area_shift() {
        let d = square(-1, 1);
        let alpha = DiskClass::plain(vec![2, -1], qi(3)).unwrap();
        let z = z_monomial(&alpha, &d, Some(qi(10))).unwrap();
        let p = vec![q(1, 3), q(-1, 2)];
        let moved = z.translate(&p);
        let shifted = DiskClass { area: alpha.area_at(&[qi(0), qi(0)], &p), ..alpha.clone() };
        assert_eq!(moved, z_monomial(&shifted, &d.translate(&p), Some(qi(10))).unwrap());
        assert_eq!(moved.translate(&p.iter().map(|v| -v).collect::<Vec<_>>()), z);
        assert_eq!(z.translate(&[qi(0), qi(0)]), z);
    }

    #[test]
    fn monomial_law_and_evaluation() {
        let d = square(-1, 1);
        let a = DiskClass::plain(vec![1, 0], q(5, 2)).unwrap();
        let b = DiskClass::plain(vec![-1, 2], q(3, 2)).unwrap();
        let za = z_monomial(&a, &d, None).unwrap();
        let zb = z_monomial(&b, &d, None).unwrap();
        assert_eq!(za.mul(&zb).unwrap(), z_monomial(&a.sum(&b), &d, None).unwrap());
        let x = vec![q(1, 2), q(-1, 3)];
        let pt: Vec<Nov> = x.iter().map(|v| t(qi(3), v.clone())).collect();
        let val = zb.eval(&pt).unwrap();
        assert_eq!(val.val(), Valuation::Finite(b.area_at(&[qi(0), qi(0)], &x)));
        let zero = DiskClass::plain(vec![0, 0], qi(2)).unwrap();
        assert_eq!(z_monomial(&zero, &d, None).unwrap(), TateSeries::constant(d, t(Q::one(), qi(2)), None));
    }

    #[test]
    fn inverse_of_a_unit() {
        let d = square(0, 1);
        let s = TateSeries::new(
            d.clone(),
            [(vec![1, 0], Nov::unit()), (vec![1, 1], t(qi(2), qi(1)))],
            Some(qi(4)),
        )
        .unwrap();
        let inv = s.invert().unwrap();
        let one = TateSeries::constant(d, Nov::unit(), None);
        assert!(inv.mul(&s).unwrap().eq_mod(&one, inv.cutoff().unwrap()).unwrap());
    }

    fn one_wall(c: Vec<Q>) -> Atlas {
        let d0 = RationalDomain::boxed(&[qi(0), qi(0)], &[qi(2), qi(2)]).unwrap();
        let d1 = RationalDomain::boxed(&[qi(-1), qi(0)], &[qi(1), qi(2)]).unwrap();
        let mut atlas = Atlas::new(2, vec![d0, d1], qi(2), true).unwrap();
        atlas
            .set_overlap(
                0,
                1,
                Overlap {
                    matrix: vec![vec![1, 0], vec![0, 1]],
                    point_from: vec![q(3, 2), qi(1)],
                    point_to: vec![q(1, 2), qi(1)],
                    walls: vec![DiskClass::new(vec![0, 1], q(3, 2), c).unwrap()],
                    mode: WallMode::Supplied,
                },
            )
            .unwrap();
        atlas.synthesize_inverse(0, 1).unwrap();
        atlas
    }

    #[test]
    fn hand_expansion_of_a_single_wall() {
        let atlas = one_wall(vec![qi(1), q(1, 2)]);
        let e = qi(2);
        let p = vec![q(3, 2), qi(1)];
        let phi = atlas.wall_crossing(0, 1, &p, &e).unwrap();
        let dom = phi.source().clone();
        // Z_α(w) = T^{3/2} w₂ on the centered domain, weight 1/2
        let z = z_monomial(&DiskClass::plain(vec![0, 1], q(3, 2)).unwrap(), &dom, Some(qi(4))).unwrap();
        let one = TateSeries::constant(dom.clone(), Nov::unit(), None);
        let expand = |c: Q, order: usize| {
            let x = z.scale_q(&c);
            let mut acc = one.clone();
            let mut power = one.clone();
            for m in 1..=order {
                power = power.mul(&x).unwrap();
                acc = acc.add(&power.scale_q(&factorial(m).recip())).unwrap();
            }
            acc
        };
        let w1 = TateSeries::coordinate(dom.clone(), 0, None);
        let w2 = TateSeries::coordinate(dom.clone(), 1, None);
        // w₁ has weight −3/2, so w₁Z^m survives the cutoff 2 up to m = 7
        let rhs1 = w1.mul(&expand(qi(1), 8)).unwrap().truncate(&qi(2));
        assert_eq!(phi.comps[0].series().unwrap().truncate(&qi(2)), rhs1);
        // w₂ has weight −1: at cutoff 0 only the terms through Z² remain
        let lhs2 = phi.comps[1].series().unwrap().truncate(&qi(0));
        let rhs2 = w2.mul(&expand(q(1, 2), 2)).unwrap().truncate(&qi(0));
        assert_eq!(lhs2, rhs2);
    }

    #[test]
    fn semi_flat_transition_is_a_rescaling() {
        let atlas = one_wall(vec![qi(0), qi(0)]);
        let p = vec![q(3, 2), qi(1)];
        let psi = atlas.transition(0, 1, &p, &qi(2)).unwrap();
        let dom = atlas.overlap_domain(0, 1).unwrap();
        let expected = Substitution::monomial_map(&dom, &vec![vec![1, 0], vec![0, 1]], &[qi(-1), qi(0)]).unwrap();
        assert!(psi.residuals(&expected).unwrap().iter().all(|r| r.passes(&qi(2))));
    }

    #[test]
    fn synthesized_inverse_round_trips() {
        let atlas = one_wall(vec![qi(1), q(1, 2)]);
        let e = qi(3);
        let p = vec![q(3, 2), qi(1)];
        let fwd = atlas.transition(0, 1, &p, &qi(6)).unwrap();
        let pj = atlas.change_chart(0, 1, &p).unwrap();
        let bwd = atlas.transition(1, 0, &pj, &qi(6)).unwrap();
        let there = bwd.then(&fwd).unwrap();
        let id = Substitution::identity(there.source());
        for r in there.residuals(&id).unwrap() {
            assert!(r.passes(&e), "{r:?}");
        }
    }

    #[test]
    fn unobstructedness_and_wall_data_are_required() {
        let mut atlas = one_wall(vec![qi(1), qi(0)]);
        let p = vec![q(3, 2), qi(1)];
        assert_eq!(atlas.wall_crossing(1, 0, &p, &qi(1)), Err(MirrorError::MissingWallData(1, 0)));
        atlas.unobstructed = false;
        assert_eq!(atlas.transition(0, 1, &p, &qi(1)), Err(MirrorError::UnobstructednessNotDeclared));
        assert!(matches!(atlas.overlap(0, 5), Err(MirrorError::UnknownChart(5))));
    }
}
