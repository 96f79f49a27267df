//! Maurer–Cartan elements: defects, pushforward along morphisms, gauge
//! witnesses, and the potential of torus models with the divisor property.

use std::collections::BTreeMap;

use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::ainf::{AInfMorphism, AInfStructure, AinfError, Lookup};
use crate::graded::{basis_tuples, GradedError, GradedSpace, Grading, MultilinearMap, Vector};
use crate::novikov::{EnergyMonoid, Nov, NovikovError, Valuation};
use crate::poly::Poly;
use crate::ring::{factorial, q_to_string, Coeff, Q};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum McError {
    #[error("positivity violated: {0}")]
    PositivityViolation(String),
    #[error("the divisor property was not declared for this model")]
    DivisorPropertyNotDeclared,
    #[error("m_{{{arity},{energy}}} is above the arity cap but contributes below the cutoff")]
    Undetermined { arity: usize, energy: String },
    #[error("generator {0} does not have degree one")]
    NotDegreeOne(usize),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Graded(#[from] GradedError),
    #[error(transparent)]
    Ainf(#[from] AinfError),
    #[error(transparent)]
    Novikov(#[from] NovikovError),
}

/// `Σ_λ a_λ T^λ` with coefficients in `P` and nonnegative energies; the
/// truncation level is carried by the caller.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Series<P> {
    terms: BTreeMap<Q, P>,
}

impl<P: Coeff> Series<P> {
    pub fn nil() -> Self {
        Series { terms: BTreeMap::new() }
    }

    pub fn monomial(energy: Q, c: P) -> Self {
        let mut s = Series::nil();
        s.add_term(energy, c);
        s
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (Q, P)>) -> Self {
        let mut s = Series::nil();
        for (e, c) in terms {
            s.add_term(e, c);
        }
        s
    }

    fn add_term(&mut self, e: Q, c: P) {
        if c.is_nil() {
            return;
        }
        let sum = match self.terms.get(&e) {
            Some(old) => old.plus(&c),
            None => c,
        };
        if sum.is_nil() {
            self.terms.remove(&e);
        } else {
            self.terms.insert(e, sum);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Q, &P)> {
        self.terms.iter()
    }

    pub fn is_nil(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn val(&self) -> Option<&Q> {
        self.terms.keys().next()
    }

    pub fn plus(&self, other: &Self) -> Self {
        let mut r = self.clone();
        for (e, c) in &other.terms {
            r.add_term(e.clone(), c.clone());
        }
        r
    }

    pub fn minus(&self, other: &Self) -> Self {
        self.plus(&other.negated())
    }

    pub fn negated(&self) -> Self {
        Series { terms: self.terms.iter().map(|(e, c)| (e.clone(), c.negated())).collect() }
    }

    pub fn scaled(&self, c: &Q) -> Self {
        Series::from_terms(self.terms.iter().map(|(e, a)| (e.clone(), a.scaled(c))))
    }

    /// Product, dropping energies above `budget`.
    pub fn times(&self, other: &Self, budget: &Q) -> Self {
        let mut r = Series::nil();
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let e = ea + eb;
                if &e <= budget {
                    r.add_term(e, ca.times(cb));
                }
            }
        }
        r
    }

    pub fn shifted(&self, by: &Q) -> Self {
        Series { terms: self.terms.iter().map(|(e, c)| (e + by, c.clone())).collect() }
    }

    pub fn truncate(&self, e: &Q) -> Self {
        Series { terms: self.terms.iter().filter(|(k, _)| *k <= e).map(|(k, c)| (k.clone(), c.clone())).collect() }
    }

    pub fn map<S: Coeff>(&self, f: impl Fn(&P) -> S) -> Series<S> {
        Series::from_terms(self.terms.iter().map(|(e, c)| (e.clone(), f(c))))
    }
}

impl Series<Q> {
    pub fn from_nov(x: &Nov) -> Self {
        Series::from_terms(x.terms().iter().cloned())
    }

    pub fn to_nov(&self, cutoff: &Q) -> Nov {
        Nov::from_terms(self.terms.iter().map(|(e, c)| (e.clone(), c.clone())), Some(cutoff.clone()))
    }
}

pub type SeriesVector<P> = BTreeMap<usize, Series<P>>;

/// Vector with Novikov coefficients, truncated at a common cutoff.
pub type NovVector = BTreeMap<usize, Nov>;

fn add_into<P: Coeff>(acc: &mut SeriesVector<P>, i: usize, s: &Series<P>) {
    let sum = match acc.get(&i) {
        Some(old) => old.plus(s),
        None => s.clone(),
    };
    if sum.is_nil() {
        acc.remove(&i);
    } else {
        acc.insert(i, sum);
    }
}

/// `T^β · op(w₁, …, w_k)` with energies above `cutoff` dropped. Coefficients
/// are even, so no Koszul signs arise.
fn apply<P: Coeff>(
    op: &MultilinearMap<Q>,
    beta: &Q,
    inputs: &[&SeriesVector<P>],
    cutoff: &Q,
    acc: &mut SeriesVector<P>,
) {
    let budget = cutoff - beta;
    if budget.is_negative() {
        return;
    }
    for (tuple, outs) in op.entries() {
        let mut prod = Series::monomial(Q::zero(), P::unit());
        for (slot, &g) in tuple.iter().enumerate() {
            match inputs[slot].get(&g) {
                Some(c) => prod = prod.times(c, &budget),
                None => {
                    prod = Series::nil();
                    break;
                }
            }
            if prod.is_nil() {
                break;
            }
        }
        if prod.is_nil() {
            continue;
        }
        let shifted = prod.shifted(beta);
        for (o, c) in outs {
            add_into(acc, *o, &shifted.scaled(c));
        }
    }
}

fn min_val<P: Coeff>(v: &SeriesVector<P>) -> Option<Q> {
    v.values().filter_map(|s| s.val().cloned()).min()
}

/// `Σ_{k,β} T^β op_{k,β}(pattern_k)` where slot `k` uses `inputs(k)`; `k`
/// ranges while `positive_slots(k) · vmin + β ≤ E`.
fn sum_family<'a, P: Coeff>(
    lookup: &dyn Fn(usize, &Q) -> Lookup<'a, Q>,
    energies: &[Q],
    cutoff: &Q,
    vmin: Option<&Q>,
    min_arity: usize,
    patterns: &dyn Fn(usize) -> Vec<Vec<&'a SeriesVector<P>>>,
    positive_slots: &dyn Fn(usize) -> usize,
    acc: &mut SeriesVector<P>,
) -> Result<(), McError> {
    let mut k = min_arity;
    loop {
        let pos = positive_slots(k);
        let floor = match vmin {
            Some(v) => v * Q::from_integer(pos.into()),
            None if pos > 0 => return Ok(()),
            None => Q::zero(),
        };
        if &floor > cutoff {
            return Ok(());
        }
        for beta in energies {
            if &(&floor + beta) > cutoff {
                continue;
            }
            match lookup(k, beta) {
                Lookup::Zero => {}
                Lookup::Unknown => {
                    return Err(McError::Undetermined { arity: k, energy: q_to_string(beta) })
                }
                Lookup::Known(op) => {
                    for pat in patterns(k) {
                        apply(op, beta, &pat, cutoff, acc);
                    }
                }
            }
        }
        k += 1;
    }
}

/// Degree-one element with coefficients of positive valuation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MCElement {
    pub space: GradedSpace,
    coeffs: BTreeMap<usize, Nov>,
}

impl MCElement {
    pub fn new(space: GradedSpace, coeffs: impl IntoIterator<Item = (usize, Nov)>) -> Result<Self, McError> {
        let mut map = BTreeMap::new();
        for (i, c) in coeffs {
            if i >= space.dim() {
                return Err(GradedError::UnknownGenerator(i.to_string()).into());
            }
            if space.shifted_degree(i) != 0 {
                return Err(McError::NotDegreeOne(i));
            }
            if let Valuation::Finite(v) = c.val() {
                if !v.is_positive() {
                    return Err(McError::PositivityViolation(format!(
                        "coefficient of {} has valuation {}",
                        space.names()[i],
                        q_to_string(&v)
                    )));
                }
                map.insert(i, c);
            }
        }
        Ok(MCElement { space, coeffs: map })
    }

    pub fn zero(space: GradedSpace) -> Self {
        MCElement { space, coeffs: BTreeMap::new() }
    }

    pub fn coeffs(&self) -> &BTreeMap<usize, Nov> {
        &self.coeffs
    }

    pub fn coeff(&self, i: usize) -> Nov {
        self.coeffs.get(&i).cloned().unwrap_or_default()
    }

    pub fn eq_mod(&self, other: &MCElement, e: &Q) -> bool {
        let keys: std::collections::BTreeSet<usize> =
            self.coeffs.keys().chain(other.coeffs.keys()).copied().collect();
        keys.into_iter().all(|i| self.coeff(i).eq_mod(&other.coeff(i), e))
    }

    fn series(&self, cutoff: &Q) -> SeriesVector<Q> {
        self.coeffs
            .iter()
            .map(|(i, c)| (*i, Series::from_nov(&c.truncate(cutoff))))
            .filter(|(_, s)| !s.is_nil())
            .collect()
    }
}

fn to_nov_vector(v: &SeriesVector<Q>, cutoff: &Q) -> NovVector {
    v.iter().map(|(i, s)| (*i, s.to_nov(cutoff))).collect()
}

/// `Σ_k m_k(b^k)` modulo `T^{>E}`.
pub fn mc_defect(a: &AInfStructure, b: &MCElement) -> Result<NovVector, McError> {
    if b.space != a.space {
        return Err(GradedError::SpaceMismatch("MC element lives in another space".into()).into());
    }
    let bs = b.series(&a.cutoff);
    let mut acc = SeriesVector::new();
    sum_family(
        &|k, e| a.op(k, e),
        &a.energies(),
        &a.cutoff,
        min_val(&bs).as_ref(),
        0,
        &|k| vec![vec![&bs; k]],
        &|k| k,
        &mut acc,
    )?;
    Ok(to_nov_vector(&acc, &a.cutoff))
}

pub fn is_zero_vector(v: &NovVector) -> bool {
    v.values().all(|c| c.is_zero())
}

/// `F₀(1) + F₁(b) + F₂(b, b) + ⋯` modulo `T^{>E}`.
pub fn pushforward(f: &AInfMorphism, b: &MCElement) -> Result<MCElement, McError> {
    if b.space != f.source_space {
        return Err(GradedError::SpaceMismatch("MC element lives in another space".into()).into());
    }
    f.check_positive().map_err(|e| McError::PositivityViolation(e.to_string()))?;
    let bs = b.series(&f.cutoff);
    let mut acc = SeriesVector::new();
    sum_family(
        &|k, e| f.comp(k, e),
        &f.energies(),
        &f.cutoff,
        min_val(&bs).as_ref(),
        0,
        &|k| vec![vec![&bs; k]],
        &|k| k,
        &mut acc,
    )?;
    MCElement::new(f.target_space.clone(), to_nov_vector(&acc, &f.cutoff))
}

/// `θ = b(t) + c(t) dt`, piecewise polynomial in `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaugeWitness {
    pub breakpoints: Vec<Q>,
    pub b: Vec<SeriesVector<Poly>>,
    pub c: Vec<SeriesVector<Poly>>,
}

impl GaugeWitness {
    pub fn constant(b: &MCElement) -> Self {
        let bv = b
            .coeffs
            .iter()
            .map(|(i, c)| (*i, Series::from_nov(c).map(|x| Poly::constant(x.clone()))))
            .collect();
        GaugeWitness { breakpoints: vec![Q::zero(), Q::one()], b: vec![bv], c: vec![SeriesVector::new()] }
    }

    fn at(v: &SeriesVector<Poly>, t: &Q, cutoff: &Q) -> NovVector {
        v.iter().map(|(i, s)| (*i, s.map(|p| p.eval(t)).to_nov(cutoff))).collect()
    }

    /// `b(0)` and `b(1)`.
    pub fn endpoints(&self, space: &GradedSpace, cutoff: &Q) -> Result<(MCElement, MCElement), McError> {
        let n = self.b.len();
        let b0 = Self::at(&self.b[0], &Q::zero(), cutoff);
        let b1 = Self::at(&self.b[n - 1], &Q::one(), cutoff);
        Ok((MCElement::new(space.clone(), b0)?, MCElement::new(space.clone(), b1)?))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GaugeResidual {
    pub piece: usize,
    pub generator: usize,
    pub energy: Q,
    pub value: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GaugeReport {
    /// `Σ m_k(b(t)^k) ≠ 0`.
    pub defect: Vec<GaugeResidual>,
    /// `db/dt + Σ m_{k+1}(b^i, c, b^j) ≠ 0`.
    pub flow: Vec<GaugeResidual>,
    pub shape: Vec<String>,
}

impl GaugeReport {
    pub fn passed(&self) -> bool {
        self.defect.is_empty() && self.flow.is_empty() && self.shape.is_empty()
    }

    pub fn leading_energy(&self) -> Option<Q> {
        self.defect.iter().chain(&self.flow).map(|r| r.energy.clone()).min()
    }
}

fn residuals(piece: usize, v: &SeriesVector<Poly>) -> Vec<GaugeResidual> {
    let mut out = Vec::new();
    for (i, s) in v {
        for (e, p) in s.terms() {
            out.push(GaugeResidual { piece, generator: *i, energy: e.clone(), value: p.render() });
        }
    }
    out
}

/// Both gauge equations as piecewise-polynomial identities modulo `T^{>E}`.
pub fn check_gauge(a: &AInfStructure, w: &GaugeWitness) -> Result<GaugeReport, McError> {
    let mut rep = GaugeReport::default();
    let n = w.breakpoints.len().saturating_sub(1);
    if n == 0
        || w.b.len() != n
        || w.c.len() != n
        || !w.breakpoints[0].is_zero()
        || !w.breakpoints[n].is_one()
        || w.breakpoints.windows(2).any(|x| x[0] >= x[1])
    {
        return Err(McError::Invalid("witness pieces do not match its breakpoints".into()));
    }
    let energies = a.energies();
    let cutoff = &a.cutoff;
    for j in 0..n {
        let b = &w.b[j];
        let c = &w.c[j];
        for (i, s) in b {
            if a.space.shifted_degree(*i) != 0 {
                return Err(McError::NotDegreeOne(*i));
            }
            if s.val().is_some_and(|v| !v.is_positive()) {
                return Err(McError::PositivityViolation(format!("b(t) on piece {j}")));
            }
        }
        for (i, s) in c {
            if a.space.shifted_degree(*i) != a.space.mode().reduce(-1) {
                return Err(McError::Invalid(format!("c(t) has a generator {i} of degree other than zero")));
            }
            if s.val().is_some_and(|v| v.is_negative()) {
                return Err(McError::PositivityViolation(format!("c(t) on piece {j}")));
            }
        }
        let vmin = min_val(b);
        let mut defect = SeriesVector::new();
        sum_family(
            &|k, e| a.op(k, e),
            &energies,
            cutoff,
            vmin.as_ref(),
            0,
            &|k| vec![vec![b; k]],
            &|k| k,
            &mut defect,
        )?;
        rep.defect.extend(residuals(j, &defect));
        let mut flow: SeriesVector<Poly> =
            b.iter().map(|(i, s)| (*i, s.map(|p| p.derivative()))).filter(|(_, s)| !s.is_nil()).collect();
        sum_family(
            &|k, e| a.op(k, e),
            &energies,
            cutoff,
            vmin.as_ref(),
            1,
            &|k| {
                (0..k)
                    .map(|pos| (0..k).map(|s| if s == pos { c } else { b }).collect())
                    .collect()
            },
            &|k| k - 1,
            &mut flow,
        )?;
        rep.flow.extend(residuals(j, &flow));
        if j + 1 < n {
            let t = &w.breakpoints[j + 1];
            if GaugeWitness::at(b, t, cutoff) != GaugeWitness::at(&w.b[j + 1], t, cutoff) {
                rep.shape.push(format!("b(t) is discontinuous at t = {}", q_to_string(t)));
            }
        }
    }
    Ok(rep)
}

/// Disk class on a torus fiber: boundary pairings `⟨∂β, e_k⟩`, area and the
/// count `m_{0,β}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Disk {
    pub boundary: Vec<i64>,
    pub area: Q,
    pub m0: Vector<Q>,
}

/// The cohomology `Λ(e₁, …, e_n)` of an `n`-torus with wedge product and
/// disk contributions obeying the divisor property
/// `m_{k,β}(x₁, …, x_k) = (1/k!) Π⟨∂β, x_i⟩ m_{0,β}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusModel {
    pub n: usize,
    pub space: GradedSpace,
    pub monoid: EnergyMonoid,
    pub cutoff: Q,
    pub disks: Vec<Disk>,
    pub divisor_declared: bool,
}

/// Subsets of `{0, …, n−1}` ordered by size, then lexicographically.
fn subsets(n: usize) -> Vec<Vec<usize>> {
    let mut all: Vec<Vec<usize>> = (0u32..(1 << n))
        .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
        .collect();
    all.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
    all
}

impl TorusModel {
    pub fn new(n: usize, monoid: EnergyMonoid, cutoff: Q) -> Result<Self, McError> {
        if n == 0 || n > 6 {
            return Err(McError::Invalid(format!("torus dimension {n} is outside 1..=6")));
        }
        let subs = subsets(n);
        let names = subs
            .iter()
            .map(|s| {
                if s.is_empty() {
                    "1".to_string()
                } else {
                    s.iter().map(|i| format!("e{}", i + 1)).collect::<Vec<_>>().join("")
                }
            })
            .collect();
        let degrees = subs.iter().map(|s| s.len() as i32).collect();
        let space = GradedSpace::new(names, degrees, Grading::Z2)?;
        Ok(TorusModel { n, space, monoid, cutoff, disks: Vec::new(), divisor_declared: true })
    }

    /// Basis index of `e_{k+1}`.
    pub fn generator(&self, k: usize) -> usize {
        1 + k
    }

    pub fn add_disk(&mut self, boundary: Vec<i64>, area: Q, m0: Vector<Q>) -> Result<(), McError> {
        if boundary.len() != self.n {
            return Err(McError::Invalid("boundary pairing has the wrong length".into()));
        }
        if !area.is_positive() {
            return Err(McError::PositivityViolation(format!("disk area {}", q_to_string(&area))));
        }
        for i in m0.keys() {
            if self.space.shifted_degree(*i) != 1 {
                return Err(McError::Invalid(format!("m_0 component {i} has odd degree")));
            }
        }
        self.disks.push(Disk { boundary, area, m0 });
        Ok(())
    }

    /// Unshifted wedge product.
    pub fn wedge(&self) -> MultilinearMap<Q> {
        let subs = subsets(self.n);
        let index: BTreeMap<&Vec<usize>, usize> = subs.iter().enumerate().map(|(i, s)| (s, i)).collect();
        let mut m = MultilinearMap::zero(2, 0);
        for (i, a) in subs.iter().enumerate() {
            for (j, b) in subs.iter().enumerate() {
                if a.iter().any(|x| b.contains(x)) {
                    continue;
                }
                let inversions = a.iter().map(|x| b.iter().filter(|y| *y < x).count()).sum::<usize>();
                let mut u: Vec<usize> = a.iter().chain(b).copied().collect();
                u.sort();
                let sign = if inversions % 2 == 0 { Q::one() } else { -Q::one() };
                m.add_entry(vec![i, j], index[&u], sign);
            }
        }
        m
    }

    /// `Σ_{k ≤ max_arity} (1/k!) Π⟨∂, x_i⟩ · out` as maps of the given degree.
    pub fn divisor_maps(&self, boundary: &[i64], out: &Vector<Q>, degree: i32, max_arity: usize) -> Vec<MultilinearMap<Q>> {
        let gens: Vec<usize> = (0..self.n).map(|k| self.generator(k)).collect();
        (0..=max_arity)
            .map(|k| {
                let mut m = MultilinearMap::zero(k, degree);
                for tuple in basis_tuples(self.n, k) {
                    let w: i64 = tuple.iter().map(|&g| boundary[g]).product();
                    if w == 0 {
                        continue;
                    }
                    let c = Q::from_integer(w.into()) / factorial(k);
                    let inputs: Vec<usize> = tuple.iter().map(|&g| gens[g]).collect();
                    for (o, x) in out {
                        m.add_entry(inputs.clone(), *o, &c * x);
                    }
                }
                m
            })
            .collect()
    }

    /// The structure with `m₂` the (sign-twisted) wedge product and disk
    /// terms up to `max_arity`; energy zero is complete.
    pub fn structure(&self, max_arity: usize) -> Result<AInfStructure, McError> {
        let mut a = AInfStructure::from_dga(
            self.space.clone(),
            &MultilinearMap::zero(1, 1),
            &self.wedge(),
            self.monoid.clone(),
            self.cutoff.clone(),
        )?;
        a.ops.arity_cap = Some(max_arity);
        a.ops.mark_complete(Q::zero());
        a.unit = Some(0);
        for d in &self.disks {
            if d.area > self.cutoff {
                continue;
            }
            for (k, m) in self.divisor_maps(&d.boundary, &d.m0, 1, max_arity).into_iter().enumerate() {
                a.ops.add_to(k, d.area.clone(), &m);
            }
        }
        Ok(a)
    }

    /// Model on the fiber over `p`: areas shift by `⟨p, ∂β⟩`.
    pub fn translate(&self, p: &[Q]) -> Result<TorusModel, McError> {
        if p.len() != self.n {
            return Err(McError::Invalid("translation vector has the wrong length".into()));
        }
        let mut out = self.clone();
        for d in out.disks.iter_mut() {
            let shift: Q = d.boundary.iter().zip(p).map(|(b, x)| Q::from_integer((*b).into()) * x).sum();
            d.area += shift;
            if !d.area.is_positive() {
                return Err(McError::PositivityViolation(format!(
                    "translated disk area {}",
                    q_to_string(&d.area)
                )));
            }
        }
        Ok(out)
    }
}

/// `Z_β(z) = T^{area} Π z_k^{⟨∂β, e_k⟩}`.
pub fn z_value(boundary: &[i64], area: &Q, z: &[Nov]) -> Result<Nov, McError> {
    let mut acc = Nov::monomial(Q::one(), area.clone());
    for (k, zk) in z.iter().enumerate() {
        let e = boundary[k];
        if e == 0 {
            continue;
        }
        let base = if e > 0 { zk.clone() } else { zk.invert()? };
        acc = acc.mul(&base.pow(e.unsigned_abs() as u32));
    }
    Ok(acc)
}

/// `W(z) = Σ_β m_{0,β} Z_β(z)` modulo `T^{>E}`.
pub fn potential(model: &TorusModel, z: &[Nov]) -> Result<NovVector, McError> {
    if !model.divisor_declared {
        return Err(McError::DivisorPropertyNotDeclared);
    }
    if z.len() != model.n {
        return Err(McError::Invalid("point has the wrong number of coordinates".into()));
    }
    let mut out = NovVector::new();
    for d in &model.disks {
        let zb = z_value(&d.boundary, &d.area, z)?;
        for (i, c) in &d.m0 {
            let term = zb.scale(c);
            let sum = match out.get(i) {
                Some(old) => old.add(&term),
                None => term,
            };
            out.insert(*i, sum);
        }
    }
    Ok(out.into_iter().map(|(i, c)| (i, c.truncate(&model.cutoff))).collect())
}

/// The chart point `z_k = exp(x_k)` for `b = Σ x_k e_k`.
pub fn exp_point(model: &TorusModel, b: &MCElement) -> Result<Vec<Nov>, McError> {
    (0..model.n)
        .map(|k| Ok(b.coeff(model.generator(k)).truncate(&model.cutoff).with_cutoff(Some(model.cutoff.clone())).exp()?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ainf::tests::ext1;
    use crate::ring::{q, qi};

    fn nov(terms: &[(Q, Q)]) -> Nov {
        Nov::from_terms(terms.iter().cloned(), None)
    }

    fn two_torus() -> TorusModel {
        let mut t = TorusModel::new(2, EnergyMonoid::new(vec![qi(1)]).unwrap(), qi(2)).unwrap();
        let unit = |c: Q| Vector::from([(0usize, c)]);
        t.add_disk(vec![1, 0], qi(1), unit(qi(1))).unwrap();
        t.add_disk(vec![0, 1], qi(1), unit(qi(1))).unwrap();
        t.add_disk(vec![-1, -1], qi(1), unit(qi(1))).unwrap();
        t.add_disk(vec![1, 1], qi(2), unit(q(1, 3))).unwrap();
        t
    }

    #[test]
    fn defect_of_zero_and_of_curvature() {
        let a = ext1(qi(2));
        assert!(is_zero_vector(&mc_defect(&a, &MCElement::zero(a.space.clone())).unwrap()));
        let mut a = ext1(qi(2));
        let mut m0 = MultilinearMap::zero(0, 1);
        m0.add_entry(vec![], 0, q(3, 2));
        a.set_op(0, qi(1), m0).unwrap();
        let b = MCElement::new(a.space.clone(), [(1, nov(&[(q(1, 2), qi(2)), (qi(1), qi(-1))]))]).unwrap();
        let d = mc_defect(&a, &b).unwrap();
        assert_eq!(d.len(), 1);
        assert!(d[&0].eq_mod(&Nov::monomial(q(3, 2), qi(1)), &qi(2)));
    }

    #[test]
    fn positivity_is_enforced() {
        let a = ext1(qi(2));
        let e = MCElement::new(a.space.clone(), [(1, Nov::constant(qi(1)))]);
        assert!(matches!(e, Err(McError::PositivityViolation(_))));
        assert!(matches!(MCElement::new(a.space.clone(), [(0, Nov::monomial(qi(1), qi(1)))]), Err(McError::NotDegreeOne(0))));
    }

    #[test]
    fn wedge_product_is_graded_commutative() {
        let t = TorusModel::new(2, EnergyMonoid::new(vec![qi(1)]).unwrap(), qi(1)).unwrap();
        let w = t.wedge();
        assert_eq!(w.coeff(&[1, 2], 3), qi(1));
        assert_eq!(w.coeff(&[2, 1], 3), qi(-1));
        assert_eq!(w.coeff(&[1, 1], 3), qi(0));
        let a = t.structure(3).unwrap();
        assert!(crate::ainf::check_ainf(&a).unwrap().passed());
    }

    #[test]
    fn potential_matches_defect_through_exp() {
        let t = two_torus();
        let a = t.structure(4).unwrap();
        let b = MCElement::new(
            t.space.clone(),
            [(1, nov(&[(q(1, 2), qi(1)), (qi(1), q(-2, 3))])), (2, nov(&[(q(1, 2), qi(3))]))],
        )
        .unwrap();
        let d = mc_defect(&a, &b).unwrap();
        let w = potential(&t, &exp_point(&t, &b).unwrap()).unwrap();
        for i in 0..t.space.dim() {
            let x = d.get(&i).cloned().unwrap_or_default();
            let y = w.get(&i).cloned().unwrap_or_default();
            assert!(x.eq_mod(&y, &qi(2)), "component {i}: {x} vs {y}");
        }
        assert!(!d[&0].is_zero());
    }

    #[test]
    fn potential_simple_cases() {
        let mut t = TorusModel::new(1, EnergyMonoid::new(vec![qi(1)]).unwrap(), qi(3)).unwrap();
        let z = vec![nov(&[(qi(0), qi(2))])];
        assert!(potential(&t, &z).unwrap().is_empty());
        t.add_disk(vec![1], qi(1), Vector::from([(0usize, qi(5))])).unwrap();
        let w = potential(&t, &z).unwrap();
        assert_eq!(w[&0], Nov::monomial(qi(10), qi(1)).with_cutoff(Some(qi(3))));
        t.divisor_declared = false;
        assert_eq!(potential(&t, &z), Err(McError::DivisorPropertyNotDeclared));
    }

    #[test]
    fn translated_chart_identity() {
        let t = two_torus();
        let p = [q(1, 3), q(-1, 4)];
        let z = vec![Nov::monomial(qi(2), p[0].clone()), Nov::monomial(q(-1, 2), p[1].clone())];
        let moved: Vec<Nov> = z.iter().zip(&p).map(|(x, s)| x.shift(&-s.clone())).collect();
        let tp = t.translate(&p).unwrap();
        assert_eq!(potential(&t, &z).unwrap(), potential(&tp, &moved).unwrap());
    }

    #[test]
    fn pushforward_along_identity() {
        let t = two_torus();
        let b = MCElement::new(t.space.clone(), [(2, nov(&[(q(1, 2), qi(7))]))]).unwrap();
        let id = AInfMorphism::identity(&t.space, &t.monoid, &t.cutoff);
        assert!(pushforward(&id, &b).unwrap().eq_mod(&b, &t.cutoff));
    }

    #[test]
    fn gauge_witnesses() {
        let t = TorusModel::new(2, EnergyMonoid::new(vec![qi(1)]).unwrap(), qi(2)).unwrap();
        let a = t.structure(4).unwrap();
        let b = MCElement::new(t.space.clone(), [(1, nov(&[(q(1, 2), qi(1))]))]).unwrap();
        let w = GaugeWitness::constant(&b);
        assert!(check_gauge(&a, &w).unwrap().passed());
        let mut moving = w.clone();
        moving.b[0].insert(2, Series::monomial(qi(1), Poly::t()));
        moving.c[0].insert(0, Series::monomial(qi(0), Poly::constant(qi(3))));
        let rep = check_gauge(&a, &moving).unwrap();
        assert!(rep.defect.is_empty());
        assert!(!rep.flow.is_empty());
        assert_eq!(rep.leading_energy(), Some(qi(1)));
    }
}
