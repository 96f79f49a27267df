//! Pseudo-isotopies with piecewise-polynomial time dependence, their
//! integration into A∞ morphisms, canonical models, and 2-isotopies over the
//! 2-simplex.

use std::collections::BTreeMap;

use num_traits::{One, Zero};
use rayon::prelude::*;
use thiserror::Error;

use crate::ainf::{
    all_indices, insertion_sum, tensor_sum, AInfMorphism, AInfStructure, AinfError, Lookup,
    OpFamily, OpKey, RelationReport, Retraction, Undetermined,
};
use crate::graded::{GradedError, GradedSpace, MultilinearMap};
use crate::novikov::EnergyMonoid;
use crate::poly::{Poly, Poly2};
use crate::ring::{q_to_string, Coeff, Q};
use crate::trees::{compose_tree, integrate_ordered, Tree, TreeEnumerator, TreeError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IsotopyError {
    #[error(transparent)]
    Ainf(#[from] AinfError),
    #[error(transparent)]
    Graded(#[from] GradedError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("endpoint mismatch: {0}")]
    EndpointMismatch(String),
    #[error("invalid isotopy: {0}")]
    IsotopyInvalid(String),
    #[error("breakpoints must start at 0, end at 1 and increase strictly")]
    BadBreakpoints,
    #[error("time {0} is outside [0, 1]")]
    TimeOutOfRange(String),
}

pub fn lift<S: Coeff>(m: &MultilinearMap<Q>) -> MultilinearMap<S> {
    m.map_coeffs(|c| S::from_q(c.clone()))
}

fn eval_family(f: &OpFamily<Poly>, t: &Q) -> OpFamily<Q> {
    f.map_values(|m| m.map_coeffs(|p| p.eval(t)))
}

fn max_arity_of<R: Coeff>(fams: &[&OpFamily<R>]) -> usize {
    fams.iter().filter_map(|f| f.max_stored_arity()).max().unwrap_or(0)
}

fn relation_range<R: Coeff>(fams: &[&OpFamily<R>]) -> usize {
    match fams.iter().filter_map(|f| f.max_known_arity()).min() {
        Some(c) => c,
        None => {
            let m = max_arity_of(fams);
            (2 * m).saturating_sub(1).max(m)
        }
    }
}

/// A family whose energy-zero part is known to vanish at every arity.
fn zero_at_zero<R: Coeff>(arity_cap: Option<usize>) -> OpFamily<R> {
    let mut f = OpFamily::new(arity_cap);
    f.mark_complete(Q::zero());
    f
}

/// `m` and `h` on one polynomial piece.
#[derive(Clone, Debug, PartialEq)]
pub struct IsotopyPiece {
    pub m: OpFamily<Poly>,
    pub h: OpFamily<Poly>,
}

/// A 1-pseudo-isotopy `γ = m^t + h^t dt` on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoIsotopy {
    pub space: GradedSpace,
    pub monoid: EnergyMonoid,
    pub cutoff: Q,
    pub breakpoints: Vec<Q>,
    pub pieces: Vec<IsotopyPiece>,
}

impl PseudoIsotopy {
    /// Single-piece isotopy with no operations yet.
    pub fn empty(space: GradedSpace, monoid: EnergyMonoid, cutoff: Q, arity_cap: Option<usize>) -> Self {
        PseudoIsotopy {
            space,
            monoid,
            cutoff,
            breakpoints: vec![Q::zero(), Q::one()],
            pieces: vec![IsotopyPiece { m: OpFamily::new(arity_cap), h: zero_at_zero(arity_cap) }],
        }
    }

    pub fn with_breakpoints(
        space: GradedSpace,
        monoid: EnergyMonoid,
        cutoff: Q,
        arity_cap: Option<usize>,
        breakpoints: Vec<Q>,
    ) -> Result<Self, IsotopyError> {
        if breakpoints.len() < 2
            || !breakpoints[0].is_zero()
            || !breakpoints[breakpoints.len() - 1].is_one()
            || breakpoints.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(IsotopyError::BadBreakpoints);
        }
        let n = breakpoints.len() - 1;
        Ok(PseudoIsotopy {
            space,
            monoid,
            cutoff,
            breakpoints,
            pieces: vec![
                IsotopyPiece { m: OpFamily::new(arity_cap), h: zero_at_zero(arity_cap) };
                n
            ],
        })
    }

    /// The constant isotopy `γ = δ`.
    pub fn constant(a: &AInfStructure) -> Self {
        let mut g = PseudoIsotopy::empty(a.space.clone(), a.monoid.clone(), a.cutoff.clone(), a.arity_cap());
        g.pieces[0].m = a.ops.map_values(lift::<Poly>);
        g
    }

    pub fn energies(&self) -> Vec<Q> {
        self.monoid.enumerate(&self.cutoff)
    }

    fn check_entry(&self, k: usize, beta: &Q, m: &MultilinearMap<Poly>, degree: i32) -> Result<(), IsotopyError> {
        if m.arity() != k {
            return Err(GradedError::ArityMismatch { expected: k, got: m.arity() }.into());
        }
        if !m.is_zero() && m.degree() != degree {
            return Err(AinfError::WrongDegree {
                arity: k,
                energy: q_to_string(beta),
                expected: degree,
                got: m.degree(),
            }
            .into());
        }
        if beta > &self.cutoff || !self.monoid.contains(beta) {
            return Err(AinfError::BadEnergy(q_to_string(beta)).into());
        }
        m.check_homogeneous(&self.space, &self.space)?;
        Ok(())
    }

    pub fn set_m(&mut self, piece: usize, k: usize, beta: Q, m: MultilinearMap<Poly>) -> Result<(), IsotopyError> {
        self.check_entry(k, &beta, &m, 1)?;
        self.pieces[piece].m.insert(k, beta, m);
        Ok(())
    }

    pub fn set_h(&mut self, piece: usize, k: usize, beta: Q, h: MultilinearMap<Poly>) -> Result<(), IsotopyError> {
        self.check_entry(k, &beta, &h, 0)?;
        if beta.is_zero() && !h.is_zero() {
            return Err(IsotopyError::IsotopyInvalid("h_{k,0} must vanish".into()));
        }
        self.pieces[piece].h.insert(k, beta, h);
        Ok(())
    }

    fn piece_at(&self, t: &Q) -> Result<usize, IsotopyError> {
        if t < &Q::zero() || t > &Q::one() {
            return Err(IsotopyError::TimeOutOfRange(q_to_string(t)));
        }
        let n = self.pieces.len();
        Ok((0..n).find(|&j| t <= &self.breakpoints[j + 1]).unwrap_or(n - 1))
    }

    /// The A∞ structure `m^t`.
    pub fn structure_at(&self, t: &Q) -> Result<AInfStructure, IsotopyError> {
        let j = self.piece_at(t)?;
        let mut a = AInfStructure::new(self.space.clone(), self.monoid.clone(), self.cutoff.clone(), None);
        a.ops = eval_family(&self.pieces[j].m, t);
        Ok(a)
    }

    /// `γ^{1−t}`.
    pub fn reverse(&self) -> PseudoIsotopy {
        let one = Q::one();
        let neg = -Q::one();
        let bps: Vec<Q> = self.breakpoints.iter().rev().map(|b| &one - b).collect();
        let pieces = self
            .pieces
            .iter()
            .rev()
            .map(|p| IsotopyPiece {
                m: p.m.map_values(|m| m.map_coeffs(|c| c.compose_affine(&neg, &one))),
                h: p.h.map_values(|m| m.map_coeffs(|c| c.compose_affine(&neg, &one).negated())),
            })
            .collect();
        PseudoIsotopy { breakpoints: bps, pieces, ..self.clone() }
    }

    /// `γ₁ ♯ γ₂`: `γ₁` on `[0, ½]` via `t ↦ 2t`, `γ₂` on `[½, 1]` via `t ↦ 2t − 1`.
    pub fn concat(&self, other: &PseudoIsotopy) -> Result<PseudoIsotopy, IsotopyError> {
        if self.space != other.space || self.monoid != other.monoid || self.cutoff != other.cutoff {
            return Err(IsotopyError::EndpointMismatch("different spaces or truncations".into()));
        }
        let end = self.structure_at(&Q::one())?;
        let start = other.structure_at(&Q::zero())?;
        if end.ops.iter().collect::<Vec<_>>() != start.ops.iter().collect::<Vec<_>>() {
            return Err(IsotopyError::EndpointMismatch(
                "the first isotopy does not end where the second starts".into(),
            ));
        }
        let two = Q::from_integer(2.into());
        let half = Q::new(1.into(), 2.into());
        let zero = Q::zero();
        let neg_one = -Q::one();
        let mut bps: Vec<Q> = self.breakpoints.iter().map(|b| b * &half).collect();
        bps.extend(other.breakpoints.iter().skip(1).map(|b| &half + b * &half));
        let mut pieces = Vec::new();
        for p in &self.pieces {
            pieces.push(IsotopyPiece {
                m: p.m.map_values(|m| m.map_coeffs(|c| c.compose_affine(&two, &zero))),
                h: p.h.map_values(|m| m.map_coeffs(|c| c.compose_affine(&two, &zero).scaled(&two))),
            });
        }
        for p in &other.pieces {
            pieces.push(IsotopyPiece {
                m: p.m.map_values(|m| m.map_coeffs(|c| c.compose_affine(&two, &neg_one))),
                h: p.h.map_values(|m| m.map_coeffs(|c| c.compose_affine(&two, &neg_one).scaled(&two))),
            });
        }
        let cap = match (self.pieces[0].m.arity_cap, other.pieces[0].m.arity_cap) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        for p in pieces.iter_mut() {
            p.m.arity_cap = cap;
            p.h.arity_cap = cap;
        }
        Ok(PseudoIsotopy {
            space: self.space.clone(),
            monoid: self.monoid.clone(),
            cutoff: self.cutoff.clone(),
            breakpoints: bps,
            pieces,
        })
    }
}

/// Solves `dm/dt = Σ h(id ⊗ m ⊗ id) − Σ m(id ⊗ h ⊗ id)` from `m⁰ = a` for a
/// single-piece `h` supported in positive energy, up to `max_arity`. The
/// arity cap drops when an arity-zero `h` calls for operations above it.
pub fn gauge_flow(
    a: &AInfStructure,
    h: OpFamily<Poly>,
    max_arity: usize,
) -> Result<PseudoIsotopy, IsotopyError> {
    if h.iter().any(|((_, b), m)| b.is_zero() && !m.is_zero()) {
        return Err(IsotopyError::IsotopyInvalid("h_{k,0} must vanish".into()));
    }
    let energies = a.energies();
    let cap = a.arity_cap().map_or(max_arity, |c| c.min(max_arity));
    let mut m: OpFamily<Poly> = a.ops.map_values(lift::<Poly>);
    if a.arity_cap().is_none() {
        m.mark_complete(Q::zero());
    }
    m.arity_cap = Some(cap);
    for b in energies.iter().filter(|b| !b.is_zero()) {
        for n in 0..=cap {
            let hm = insertion_sum(n, b, &energies, &|k, e| h.get(k, e), &|k, e| m.get(k, e), &a.space)?;
            let mh = insertion_sum(n, b, &energies, &|k, e| m.get(k, e), &|k, e| h.get(k, e), &a.space)?;
            let (Ok(hm), Ok(mh)) = (hm, mh) else {
                m.set_energy_cap(b.clone(), n.saturating_sub(1));
                break;
            };
            let rhs = hm.minus(&mh).map_coeffs(|c| c.integral_from(&Q::zero()));
            m.add_to(n, b.clone(), &rhs.with_degree(1));
        }
    }
    let mut h = h;
    h.arity_cap = Some(cap);
    h.mark_complete(Q::zero());
    let mut g = PseudoIsotopy::empty(a.space.clone(), a.monoid.clone(), a.cutoff.clone(), Some(cap));
    g.pieces[0] = IsotopyPiece { m, h };
    Ok(g)
}

/// `dm/dt − (Σ h(id ⊗ m ⊗ id) − Σ m(id ⊗ h ⊗ id))` at `(N, β)`.
pub fn flow_residual<'a, R: Coeff>(
    n: usize,
    beta: &Q,
    energies: &[Q],
    m: &dyn Fn(usize, &Q) -> Lookup<'a, R>,
    h: &dyn Fn(usize, &Q) -> Lookup<'a, R>,
    dm: &dyn Fn(usize, &Q) -> Option<MultilinearMap<R>>,
    space: &GradedSpace,
) -> Result<Result<MultilinearMap<R>, Undetermined>, GradedError> {
    let hm = insertion_sum(n, beta, energies, h, m, space)?;
    let mh = insertion_sum(n, beta, energies, m, h, space)?;
    let (Ok(hm), Ok(mh)) = (hm, mh) else { return Ok(Err(Undetermined)) };
    let lhs = match dm(n, beta) {
        Some(d) => d,
        None => return Ok(Err(Undetermined)),
    };
    Ok(Ok(lhs.minus(&hm.minus(&mh))))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PieceReport {
    pub relations: RelationReport,
    pub flow: RelationReport,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IsotopyReport {
    pub pieces: Vec<PieceReport>,
    /// Violations of the energy-zero shape and of continuity.
    pub shape: Vec<String>,
}

impl IsotopyReport {
    pub fn passed(&self) -> bool {
        self.shape.is_empty() && self.pieces.iter().all(|p| p.relations.passed() && p.flow.passed())
    }

    pub fn undetermined(&self) -> usize {
        self.pieces.iter().map(|p| p.relations.undetermined.len() + p.flow.undetermined.len()).sum()
    }
}

fn poly_lookup<'a>(f: &'a OpFamily<Poly>) -> impl Fn(usize, &Q) -> Lookup<'a, Poly> + 'a {
    move |k, b| f.get(k, b)
}

/// Verifies the A∞ relations of `m^t` and the flow equation on each piece
/// as polynomial identities, plus the energy-zero shape and continuity.
pub fn check_isotopy(g: &PseudoIsotopy) -> Result<IsotopyReport, IsotopyError> {
    let energies = g.energies();
    let mut rep = IsotopyReport::default();
    for (j, p) in g.pieces.iter().enumerate() {
        let ml = poly_lookup(&p.m);
        let hl = poly_lookup(&p.h);
        let nmax = relation_range(&[&p.m, &p.h]);
        let idx = all_indices(nmax, &energies);
        let relations = RelationReport::collect(idx.clone(), &g.space, &g.space, |n, b| {
            insertion_sum(n, b, &energies, &ml, &ml, &g.space)
        })?;
        let dm = |n: usize, b: &Q| match p.m.get(n, b) {
            Lookup::Zero => Some(MultilinearMap::zero(n, 1)),
            Lookup::Known(m) => Some(m.map_coeffs(|c| c.derivative())),
            Lookup::Unknown => None,
        };
        let flow = RelationReport::collect(idx, &g.space, &g.space, |n, b| {
            flow_residual(n, b, &energies, &ml, &hl, &dm, &g.space)
        })?;
        rep.pieces.push(PieceReport { relations, flow });
        for ((k, b), m) in p.m.iter() {
            if b.is_zero() && m.entries().any(|(_, v)| v.values().any(|c| c.degree().unwrap_or(0) > 0)) {
                rep.shape.push(format!("piece {j}: m_{{{k},0}} depends on t"));
            }
        }
        for ((k, b), h) in p.h.iter() {
            if b.is_zero() && !h.is_zero() {
                rep.shape.push(format!("piece {j}: h_{{{k},0}} is nonzero"));
            }
        }
        if j + 1 < g.pieces.len() {
            let t = &g.breakpoints[j + 1];
            let left = eval_family(&p.m, t);
            let right = eval_family(&g.pieces[j + 1].m, t);
            if left.iter().collect::<Vec<_>>() != right.iter().collect::<Vec<_>>() {
                rep.shape.push(format!("m^t is discontinuous at t = {}", q_to_string(t)));
            }
        }
    }
    Ok(rep)
}

/// `F^t` as piecewise polynomials in `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntegratedMorphism {
    pub space: GradedSpace,
    pub monoid: EnergyMonoid,
    pub cutoff: Q,
    pub breakpoints: Vec<Q>,
    pub pieces: Vec<OpFamily<Poly>>,
}

impl IntegratedMorphism {
    pub fn arity_cap(&self) -> Option<usize> {
        self.pieces[0].arity_cap
    }

    pub fn at(&self, t: &Q) -> Result<AInfMorphism, IsotopyError> {
        if t < &Q::zero() || t > &Q::one() {
            return Err(IsotopyError::TimeOutOfRange(q_to_string(t)));
        }
        let n = self.pieces.len();
        let j = (0..n).find(|&j| t <= &self.breakpoints[j + 1]).unwrap_or(n - 1);
        let mut f = AInfMorphism::new(
            self.space.clone(),
            self.space.clone(),
            self.monoid.clone(),
            self.cutoff.clone(),
            self.arity_cap(),
        );
        f.comps = eval_family(&self.pieces[j], t);
        Ok(f)
    }
}

/// Tree-sum integration `F^t_{k,β} = Σ_{𝒪(k,β)} ρ^t(T, λ)` for `k ≤ max_arity`.
pub fn integrate(g: &PseudoIsotopy, max_arity: usize) -> Result<IntegratedMorphism, IsotopyError> {
    let energies = g.energies();
    let vanishes = |ar: usize, e: &Q| g.pieces.iter().all(|p| matches!(p.h.get(ar, e), Lookup::Zero));
    let keep = |ar: usize, e: &Q| !vanishes(ar, e);
    let mut en = TreeEnumerator::with_filter(&g.monoid, &g.cutoff, &keep);
    let mut jobs: Vec<(usize, Q, Vec<Tree>)> = Vec::new();
    for k in 0..=max_arity {
        for b in &energies {
            jobs.push((k, b.clone(), en.trees(k, b)?.as_ref().clone()));
        }
    }
    let npieces = g.pieces.len();
    let results: Vec<(usize, Q, Result<Vec<MultilinearMap<Poly>>, IsotopyError>)> = jobs
        .into_par_iter()
        .map(|(k, b, trees)| {
            let integrand = |_: usize, e: &Q, ar: usize, j: usize| match g.pieces[j].h.get(ar, e) {
                Lookup::Zero => Ok(None),
                Lookup::Known(m) => Ok(Some(m)),
                Lookup::Unknown => Err(TreeError::MissingLabel {
                    vertex: 0,
                    arity: ar,
                    energy: q_to_string(e),
                }),
            };
            let zero = || vec![MultilinearMap::<Poly>::zero(k, 0); npieces];
            let acc = trees
                .par_iter()
                .map(|t| integrate_ordered(t, &g.breakpoints, &integrand, &g.space))
                .try_fold(zero, |mut acc, v| {
                    for (a, x) in acc.iter_mut().zip(v?) {
                        a.add_assign(&x);
                    }
                    Ok::<_, TreeError>(acc)
                })
                .try_reduce(zero, |mut a, b| {
                    for (x, y) in a.iter_mut().zip(b) {
                        x.add_assign(&y);
                    }
                    Ok(a)
                });
            (k, b, acc.map_err(IsotopyError::from))
        })
        .collect();
    let mut caps: BTreeMap<Q, usize> = energies.iter().map(|b| (b.clone(), max_arity)).collect();
    for (k, b, r) in &results {
        if let Err(IsotopyError::Tree(TreeError::MissingLabel { .. })) = r {
            let c = caps.get_mut(b).expect("energy listed");
            *c = (*c).min(k.saturating_sub(1));
        }
    }
    let mut pieces = vec![OpFamily::new(Some(max_arity)); npieces];
    for (k, b, r) in results {
        if k > caps[&b] {
            continue;
        }
        for (j, m) in r?.into_iter().enumerate() {
            pieces[j].insert(k, b.clone(), m.with_degree(0));
        }
    }
    for p in pieces.iter_mut() {
        for (b, c) in &caps {
            if *c < max_arity {
                p.set_energy_cap(b.clone(), *c);
            }
        }
    }
    Ok(IntegratedMorphism {
        space: g.space.clone(),
        monoid: g.monoid.clone(),
        cutoff: g.cutoff.clone(),
        breakpoints: g.breakpoints.clone(),
        pieces,
    })
}

/// `F^t` evaluated at a rational time, as a morphism `(V, m⁰) → (V, m^t)`.
pub fn integrate_to_morphism(
    g: &PseudoIsotopy,
    t: &Q,
    max_arity: usize,
) -> Result<AInfMorphism, IsotopyError> {
    integrate(g, max_arity)?.at(t)
}

/// Morphism equation `Σ m^t(F^t ⊗ … ⊗ F^t) = Σ F^t(id ⊗ m⁰ ⊗ id)` with `t`
/// symbolic, on every piece.
pub fn check_integrated(g: &PseudoIsotopy, f: &IntegratedMorphism) -> Result<Vec<RelationReport>, IsotopyError> {
    let energies = g.energies();
    let m0 = g.pieces[0].m.map_values(|m| m.map_coeffs(|c| Poly::constant(c.eval(&Q::zero()))));
    let ma = poly_lookup(&m0);
    let mut out = Vec::new();
    for (j, p) in g.pieces.iter().enumerate() {
        let fl = poly_lookup(&f.pieces[j]);
        let mb = poly_lookup(&p.m);
        let nmax = relation_range(&[&f.pieces[j], &p.m, &m0]);
        let idx = all_indices(nmax, &energies);
        out.push(RelationReport::collect(idx, &g.space, &g.space, |n, b| {
            let lhs = tensor_sum(n, b, &energies, &mb, &fl, &g.space)?;
            let rhs = insertion_sum(n, b, &energies, &fl, &ma, &g.space)?;
            Ok(match (lhs, rhs) {
                (Ok(l), Ok(r)) => Ok(l.minus(&r)),
                _ => Err(Undetermined),
            })
        })?);
    }
    Ok(out)
}

/// `dF^t/dt − Σ h^t(F^t ⊗ … ⊗ F^t)` on every piece.
pub fn check_derivative_law(g: &PseudoIsotopy, f: &IntegratedMorphism) -> Result<Vec<RelationReport>, IsotopyError> {
    let energies = g.energies();
    let mut out = Vec::new();
    for (j, p) in g.pieces.iter().enumerate() {
        let fam = &f.pieces[j];
        let fl = poly_lookup(fam);
        let hl = poly_lookup(&p.h);
        let nmax = fam.max_known_arity().unwrap_or_else(|| fam.max_stored_arity().unwrap_or(0));
        let idx = all_indices(nmax, &energies);
        out.push(RelationReport::collect(idx, &g.space, &g.space, |n, b| {
            let rhs = tensor_sum(n, b, &energies, &hl, &fl, &g.space)?;
            let lhs = match fam.get(n, b) {
                Lookup::Zero => MultilinearMap::zero(n, 0),
                Lookup::Known(m) => m.map_coeffs(|c| c.derivative()),
                Lookup::Unknown => return Ok(Err(Undetermined)),
            };
            Ok(rhs.map(|r| lhs.minus(&r)))
        })?);
    }
    Ok(out)
}

/// Tree sums over `𝒪(k, β)` (canonical `m`) and `𝒪⁺(k, β)` (canonical `h`)
/// on one piece.
fn canonical_piece(
    piece: &IsotopyPiece,
    r: &Retraction,
    trees: &[(usize, Q, Vec<Tree>)],
) -> Vec<(usize, Q, Result<(MultilinearMap<Poly>, MultilinearMap<Poly>), TreeError>)> {
    let edge: MultilinearMap<Poly> = lift(&r.h.negated());
    let i: MultilinearMap<Poly> = lift(&r.i);
    let p: MultilinearMap<Poly> = lift(&r.p);
    let hs = &r.cohomology;
    trees
        .par_iter()
        .map(|(k, b, ts)| {
            let mut mc = MultilinearMap::<Poly>::zero(*k, 1);
            let mut hc = MultilinearMap::<Poly>::zero(*k, 0);
            let missing = |ar: usize, e: &Q| TreeError::MissingLabel { vertex: 0, arity: ar, energy: q_to_string(e) };
            for t in ts.iter().filter(|t| t.num_vertices() > 0) {
                let label = |_: usize, e: &Q, ar: usize| match piece.m.get(ar, e) {
                    Lookup::Zero => Ok(None),
                    Lookup::Known(m) => Ok(Some(m)),
                    Lookup::Unknown => Err(missing(ar, e)),
                };
                match compose_tree(t, &label, Some(&edge), Some(&i), Some(&p), hs) {
                    Ok(m) => mc.add_assign(&m),
                    Err(e) => return (*k, b.clone(), Err(e)),
                }
                for chosen in 0..t.num_vertices() {
                    let label = |v: usize, e: &Q, ar: usize| {
                        let fam = if v == chosen { &piece.h } else { &piece.m };
                        match fam.get(ar, e) {
                            Lookup::Zero => Ok(None),
                            Lookup::Known(m) => Ok(Some(m)),
                            Lookup::Unknown => Err(missing(ar, e)),
                        }
                    };
                    match compose_tree(t, &label, Some(&edge), Some(&i), Some(&p), hs) {
                        Ok(m) => hc.add_assign(&m),
                        Err(e) => return (*k, b.clone(), Err(e)),
                    }
                }
            }
            (*k, b.clone(), Ok((mc.with_degree(1), hc.with_degree(0))))
        })
        .collect()
}

/// Transfers `γ` to the cohomology of its energy-zero differential.
pub fn canonical_isotopy(
    g: &PseudoIsotopy,
    r: &Retraction,
    max_arity: usize,
) -> Result<PseudoIsotopy, IsotopyError> {
    if r.ambient != g.space {
        return Err(AinfError::StructureMismatch("retraction ambient space differs".into()).into());
    }
    let d = match g.pieces[0].m.get(1, &Q::zero()) {
        Lookup::Known(d) => d.map_coeffs(|c| c.eval(&Q::zero())),
        _ => MultilinearMap::zero(1, 1),
    };
    r.check(&d)?;
    let energies = g.energies();
    // a vertex where m and h both vanish kills every term through it
    let keep = |ar: usize, e: &Q| {
        g.pieces.iter().any(|p| !matches!(p.m.get(ar, e), Lookup::Zero) || !matches!(p.h.get(ar, e), Lookup::Zero))
    };
    let mut en = TreeEnumerator::with_filter(&g.monoid, &g.cutoff, &keep);
    let mut trees = Vec::new();
    for k in 0..=max_arity {
        for b in &energies {
            trees.push((k, b.clone(), en.trees(k, b)?.as_ref().clone()));
        }
    }
    let per_piece: Vec<_> = g.pieces.iter().map(|p| canonical_piece(p, r, &trees)).collect();
    let mut cap = max_arity;
    for res in &per_piece {
        for (k, _, x) in res {
            if let Err(TreeError::MissingLabel { .. }) = x {
                cap = cap.min(k.saturating_sub(1));
            }
        }
    }
    let mut out = PseudoIsotopy::with_breakpoints(
        r.cohomology.clone(),
        g.monoid.clone(),
        g.cutoff.clone(),
        Some(cap),
        g.breakpoints.clone(),
    )?;
    for (j, res) in per_piece.into_iter().enumerate() {
        for (k, b, x) in res {
            if k > cap {
                continue;
            }
            let (mc, hc) = x?;
            out.set_m(j, k, b.clone(), mc)?;
            if !b.is_zero() {
                out.set_h(j, k, b, hc)?;
            }
        }
    }
    Ok(out)
}

/// Data of a 2-pseudo-isotopy on `Δ² = {s, u ≥ 0, s + u ≤ 1}` with vertices
/// `v0 = (0,0)`, `v1 = (1,0)`, `v2 = (0,1)`:
/// `Γ = M + H_s ds + H_u du + W ds∧du`. The equations checked are
/// `[M, M] = 0`, `∂_s M = [H_s, M]`, `∂_u M = [H_u, M]` and
/// `∂_s H_u − ∂_u H_s − [H_s, H_u] = [M, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoIsotopy {
    pub space: GradedSpace,
    pub monoid: EnergyMonoid,
    pub cutoff: Q,
    pub m: OpFamily<Poly2>,
    pub hs: OpFamily<Poly2>,
    pub hu: OpFamily<Poly2>,
    /// Shifted degree −1.
    pub w: OpFamily<Poly2>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TwoIsotopyReport {
    pub relations: RelationReport,
    pub flow_s: RelationReport,
    pub flow_u: RelationReport,
    pub flatness: RelationReport,
    pub boundary: Vec<String>,
}

impl TwoIsotopyReport {
    pub fn passed(&self) -> bool {
        self.relations.passed()
            && self.flow_s.passed()
            && self.flow_u.passed()
            && self.flatness.passed()
            && self.boundary.is_empty()
    }
}

impl TwoIsotopy {
    pub fn empty(space: GradedSpace, monoid: EnergyMonoid, cutoff: Q, arity_cap: Option<usize>) -> Self {
        TwoIsotopy {
            space,
            monoid,
            cutoff,
            m: OpFamily::new(arity_cap),
            hs: zero_at_zero(arity_cap),
            hu: zero_at_zero(arity_cap),
            w: zero_at_zero(arity_cap),
        }
    }

    /// Pullback of a single-piece isotopy along `(s, u) ↦ a·s + b·u`, where
    /// `(a, b)` is one of `(1, 0)`, `(0, 1)`, `(1, 1)`.
    pub fn pullback(g: &PseudoIsotopy, a: u32, b: u32) -> Result<TwoIsotopy, IsotopyError> {
        if g.pieces.len() != 1 || a > 1 || b > 1 || a + b == 0 {
            return Err(IsotopyError::IsotopyInvalid(
                "pullback needs a single-piece isotopy and a nonzero 0/1 projection".into(),
            ));
        }
        let sub = |p: &Poly| -> Poly2 {
            // p(a s + b u)
            let lin = Poly2::from_terms(
                [((1, 0), Q::from_integer(a.into())), ((0, 1), Q::from_integer(b.into()))]
                    .into_iter(),
            );
            let mut acc = Poly2::nil();
            for c in p.coeffs().iter().rev() {
                acc = acc.times(&lin).plus(&Poly2::constant(c.clone()));
            }
            acc
        };
        let p = &g.pieces[0];
        let mut out = TwoIsotopy::empty(g.space.clone(), g.monoid.clone(), g.cutoff.clone(), p.m.arity_cap);
        out.m = p.m.map_values(|m| m.map_coeffs(sub));
        let hpull = p.h.map_values(|m| m.map_coeffs(sub));
        out.hs = if a == 1 { hpull.clone() } else { zero_at_zero(p.h.arity_cap) };
        out.hu = if b == 1 { hpull } else { zero_at_zero(p.h.arity_cap) };
        Ok(out)
    }

    pub fn energies(&self) -> Vec<Q> {
        self.monoid.enumerate(&self.cutoff)
    }

    /// Restriction to an edge: `∂2` is `v0 → v1`, `∂0` is `v1 → v2`,
    /// `∂1` is `v0 → v2`.
    pub fn edge(&self, which: usize) -> Result<PseudoIsotopy, IsotopyError> {
        let (z, o, n) = (Q::zero(), Q::one(), -Q::one());
        let (s0, s1, u0, u1) = match which {
            0 => (o.clone(), n.clone(), z.clone(), o.clone()),
            1 => (z.clone(), z.clone(), z.clone(), o.clone()),
            2 => (z.clone(), o.clone(), z.clone(), z.clone()),
            _ => return Err(IsotopyError::IsotopyInvalid(format!("no edge {which}"))),
        };
        let pull = |f: &OpFamily<Poly2>| f.map_values(|m| m.map_coeffs(|c| c.pullback_line(&s0, &s1, &u0, &u1)));
        let m = pull(&self.m);
        let hs = pull(&self.hs);
        let hu = pull(&self.hu);
        // h = s'(t) H_s + u'(t) H_u
        let mut h = zero_at_zero(self.hs.arity_cap);
        for (coef, fam) in [(&s1, &hs), (&u1, &hu)] {
            if coef.is_zero() {
                continue;
            }
            for ((k, b), x) in fam.iter() {
                h.add_to(*k, b.clone(), &x.scaled_q(coef).with_degree(0));
            }
        }
        let mut g = PseudoIsotopy::empty(self.space.clone(), self.monoid.clone(), self.cutoff.clone(), self.m.arity_cap);
        g.pieces[0] = IsotopyPiece { m, h };
        Ok(g)
    }
}

/// Solves `∂_s M = [H_s, M]` along `u = 0` and then `∂_u M = [H_u, M]`
/// from `M(0, 0) = a`, energy by energy, with `W = 0`. The result is a
/// 2-isotopy exactly when the two flows are compatible, which
/// [`check_two_isotopy`] decides.
pub fn two_gauge_flow(
    a: &AInfStructure,
    hs: OpFamily<Poly2>,
    hu: OpFamily<Poly2>,
    max_arity: usize,
) -> Result<TwoIsotopy, IsotopyError> {
    for f in [&hs, &hu] {
        if f.iter().any(|((_, b), m)| b.is_zero() && !m.is_zero()) {
            return Err(IsotopyError::IsotopyInvalid("H_{k,0} must vanish".into()));
        }
    }
    let energies = a.energies();
    let cap = a.arity_cap().map_or(max_arity, |c| c.min(max_arity));
    let mut m: OpFamily<Poly2> = a.ops.map_values(lift::<Poly2>);
    if a.arity_cap().is_none() {
        m.mark_complete(Q::zero());
    }
    m.arity_cap = Some(cap);
    let sp = &a.space;
    for b in energies.iter().filter(|b| !b.is_zero()) {
        for n in 0..=cap {
            let ml = |k: usize, e: &Q| m.get(k, e);
            let sl = |k: usize, e: &Q| hs.get(k, e);
            let ul = |k: usize, e: &Q| hu.get(k, e);
            let parts = (
                insertion_sum(n, b, &energies, &sl, &ml, sp)?,
                insertion_sum(n, b, &energies, &ml, &sl, sp)?,
                insertion_sum(n, b, &energies, &ul, &ml, sp)?,
                insertion_sum(n, b, &energies, &ml, &ul, sp)?,
            );
            let (Ok(sm), Ok(ms), Ok(um), Ok(mu)) = parts else {
                m.set_energy_cap(b.clone(), n.saturating_sub(1));
                break;
            };
            let along_s = sm.minus(&ms).map_coeffs(|c| c.at_u_zero().integral_s());
            let along_u = um.minus(&mu).map_coeffs(|c| c.integral_u());
            m.add_to(n, b.clone(), &along_s.plus(&along_u).with_degree(1));
        }
    }
    let mut out = TwoIsotopy::empty(a.space.clone(), a.monoid.clone(), a.cutoff.clone(), Some(cap));
    out.m = m;
    for (dst, src) in [(&mut out.hs, hs), (&mut out.hu, hu)] {
        for ((k, b), x) in src.iter() {
            if *k <= cap {
                dst.insert(*k, b.clone(), x.clone());
            }
        }
    }
    Ok(out)
}

fn poly2_lookup<'a>(f: &'a OpFamily<Poly2>) -> impl Fn(usize, &Q) -> Lookup<'a, Poly2> + 'a {
    move |k, b| f.get(k, b)
}

/// Componentwise Maurer–Cartan check over the simplex, plus agreement of
/// the edge restrictions with declared edge isotopies (indexed 0, 1, 2).
pub fn check_two_isotopy(
    a: &TwoIsotopy,
    declared: [Option<&PseudoIsotopy>; 3],
) -> Result<TwoIsotopyReport, IsotopyError> {
    let energies = a.energies();
    let ml = poly2_lookup(&a.m);
    let sl = poly2_lookup(&a.hs);
    let ul = poly2_lookup(&a.hu);
    let wl = poly2_lookup(&a.w);
    let nmax = relation_range(&[&a.m, &a.hs, &a.hu, &a.w]);
    let idx = all_indices(nmax, &energies);
    let sp = &a.space;
    let relations = RelationReport::collect(idx.clone(), sp, sp, |n, b| insertion_sum(n, b, &energies, &ml, &ml, sp))?;
    let deriv = |f: &OpFamily<Poly2>, n: usize, b: &Q, deg: i32, ds: bool| match f.get(n, b) {
        Lookup::Zero => Some(MultilinearMap::zero(n, deg)),
        Lookup::Known(m) => Some(m.map_coeffs(|c| if ds { c.d_s() } else { c.d_u() })),
        Lookup::Unknown => None,
    };
    let flow_s = RelationReport::collect(idx.clone(), sp, sp, |n, b| {
        flow_residual(n, b, &energies, &ml, &sl, &|n, b| deriv(&a.m, n, b, 1, true), sp)
    })?;
    let flow_u = RelationReport::collect(idx.clone(), sp, sp, |n, b| {
        flow_residual(n, b, &energies, &ml, &ul, &|n, b| deriv(&a.m, n, b, 1, false), sp)
    })?;
    let flatness = RelationReport::collect(idx, sp, sp, |n, b| {
        let (Some(dsu), Some(dus)) = (deriv(&a.hu, n, b, 0, true), deriv(&a.hs, n, b, 0, false)) else {
            return Ok(Err(Undetermined));
        };
        let su = insertion_sum(n, b, &energies, &sl, &ul, sp)?;
        let us = insertion_sum(n, b, &energies, &ul, &sl, sp)?;
        let mw = insertion_sum(n, b, &energies, &ml, &wl, sp)?;
        let wm = insertion_sum(n, b, &energies, &wl, &ml, sp)?;
        Ok(match (su, us, mw, wm) {
            (Ok(su), Ok(us), Ok(mw), Ok(wm)) => {
                // [H_s, H_u] = H_s∘H_u − H_u∘H_s, [M, W] = M∘W + W∘M
                Ok(dsu.minus(&dus).minus(&su.minus(&us)).minus(&mw.plus(&wm)))
            }
            _ => Err(Undetermined),
        })
    })?;
    let mut boundary = Vec::new();
    for (i, d) in declared.iter().enumerate() {
        let Some(d) = d else { continue };
        let e = a.edge(i)?;
        for (j, piece) in d.pieces.iter().enumerate() {
            let t0 = &d.breakpoints[j];
            let t1 = &d.breakpoints[j + 1];
            let mid = (t0 + t1) / Q::from_integer(2.into());
            // polynomials agreeing on an interval agree identically; compare at t0, t1, mid
            // and as polynomials by restriction
            for (ours, theirs, what) in [(&e.pieces[0].m, &piece.m, "m"), (&e.pieces[0].h, &piece.h, "h")] {
                let a_ops: Vec<(OpKey, MultilinearMap<Poly>)> = ours.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
                let b_ops: Vec<(OpKey, MultilinearMap<Poly>)> = theirs.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
                let same = if d.pieces.len() == 1 {
                    a_ops == b_ops
                } else {
                    [t0, t1, &mid].iter().all(|t| eval_family(ours, t) == eval_family(theirs, t))
                };
                if !same {
                    boundary.push(format!("edge {i}, piece {j}: {what} differs from the declared isotopy"));
                }
            }
        }
    }
    Ok(TwoIsotopyReport { relations, flow_s, flow_u, flatness, boundary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ainf::check_ainf;
    use crate::ainf::tests::ext1;
    use crate::graded::Grading;
    use crate::ring::{q, qi};

    /// Path algebra of `• → •` with the arrow odd.
    fn path_algebra(cutoff: Q) -> AInfStructure {
        let s = GradedSpace::from_pairs(&[("e1", 0), ("e2", 0), ("a", 1)], Grading::Z2).unwrap();
        let mut prod = MultilinearMap::zero(2, 0);
        prod.add_entry(vec![0, 0], 0, qi(1));
        prod.add_entry(vec![1, 1], 1, qi(1));
        prod.add_entry(vec![0, 2], 2, qi(1));
        prod.add_entry(vec![2, 1], 2, qi(1));
        let d = MultilinearMap::zero(1, 1);
        AInfStructure::from_dga(s, &d, &prod, EnergyMonoid::new(vec![qi(1)]).unwrap(), cutoff).unwrap()
    }

    fn rotation() -> (AInfStructure, PseudoIsotopy) {
        let a = path_algebra(qi(2));
        assert!(check_ainf(&a).unwrap().passed());
        let mut h = OpFamily::new(None);
        let mut h1 = MultilinearMap::zero(1, 0);
        h1.add_entry(vec![2], 2, Poly::new(vec![qi(1), qi(-2)]));
        h.insert(1, qi(1), h1);
        let mut h0 = MultilinearMap::zero(0, 0);
        h0.add_entry(vec![], 2, Poly::t());
        h.insert(0, qi(1), h0);
        let g = gauge_flow(&a, h, 6).unwrap();
        (a, g)
    }

    #[test]
    fn constant_isotopy_passes() {
        let g = PseudoIsotopy::constant(&ext1(qi(2)));
        let rep = check_isotopy(&g).unwrap();
        assert!(rep.passed(), "{rep:?}");
        let f = integrate_to_morphism(&g, &q(1, 2), 3).unwrap();
        let id = AInfMorphism::identity(&g.space, &g.monoid, &g.cutoff);
        assert_eq!(f.comps.iter().collect::<Vec<_>>(), id.comps.iter().collect::<Vec<_>>());
    }

    #[test]
    fn gauge_flow_passes_and_integrates() {
        let (_, g) = rotation();
        let rep = check_isotopy(&g).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert_eq!(g.pieces[0].m.cap_at(&qi(1)), Some(6));
        assert_eq!(g.pieces[0].m.cap_at(&qi(2)), Some(5));
        let f = integrate(&g, 3).unwrap();
        assert_eq!(f.arity_cap(), Some(3));
        for r in check_integrated(&g, &f).unwrap() {
            assert!(r.passed(), "{r:?}");
        }
        for r in check_derivative_law(&g, &f).unwrap() {
            assert!(r.passed(), "{r:?}");
        }
        let f0 = f.at(&qi(0)).unwrap();
        let id = AInfMorphism::identity(&g.space, &g.monoid, &g.cutoff);
        assert_eq!(f0.comps.iter().collect::<Vec<_>>(), id.comps.iter().collect::<Vec<_>>());
    }

    #[test]
    fn reverse_and_concat() {
        let (_, g) = rotation();
        let r = g.reverse();
        assert!(check_isotopy(&r).unwrap().passed());
        let c = g.concat(&r).unwrap();
        assert_eq!(c.breakpoints, vec![qi(0), q(1, 2), qi(1)]);
        assert!(check_isotopy(&c).unwrap().passed());
        assert!(matches!(g.concat(&g), Err(IsotopyError::EndpointMismatch(_))));
    }

    #[test]
    fn corrupted_h_is_reported() {
        let (_, mut g) = rotation();
        let mut bad = MultilinearMap::zero(0, 0);
        bad.add_entry(vec![], 2, Poly::t());
        g.pieces[0].h.add_to(0, qi(1), &bad);
        let rep = check_isotopy(&g).unwrap();
        assert!(rep.pieces[0].relations.passed());
        assert!(!rep.pieces[0].flow.passed());
        assert_eq!(rep.pieces[0].flow.minimal_failure(), Some((1, qi(1))));
    }

    #[test]
    fn pulled_back_two_isotopy_passes() {
        let (_, g) = rotation();
        for (a, b) in [(1, 0), (0, 1), (1, 1)] {
            let two = TwoIsotopy::pullback(&g, a, b).unwrap();
            let rep = check_two_isotopy(&two, [None, None, None]).unwrap();
            assert!(rep.passed(), "{a},{b}: {rep:?}");
        }
        let two = TwoIsotopy::pullback(&g, 1, 0).unwrap();
        let c = PseudoIsotopy::constant(&g.structure_at(&qi(0)).unwrap());
        let rep = check_two_isotopy(&two, [Some(&g.reverse()), Some(&c), Some(&g)]).unwrap();
        assert!(rep.passed(), "{rep:?}");
        let mut bad = two.clone();
        let mut x = MultilinearMap::zero(1, 0);
        x.add_entry(vec![1], 1, Poly2::s());
        bad.hu.add_to(1, qi(1), &x);
        assert!(!check_two_isotopy(&bad, [None, None, None]).unwrap().passed());
    }
}
