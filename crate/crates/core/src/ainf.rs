//! Gapped filtered A∞ structures, A∞ morphisms, deformation retractions and
//! canonical models.
//!
//! Operations are stored by `(arity, energy)`. A structure either lists every
//! nonzero operation (`arity_cap = None`) or is known only up to an arity cap,
//! in which case identities that would need an operation above the cap are
//! reported as undetermined instead of being guessed.

use std::collections::BTreeMap;

use num_traits::{One, Zero};
use rayon::prelude::*;
use thiserror::Error;

use crate::graded::{vec_add, GradedError, GradedSpace, MultilinearMap, Vector};
use crate::novikov::EnergyMonoid;
use crate::ring::{q_to_string, Coeff, Q};
use crate::trees::{compose_tree, TreeEnumerator, TreeError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AinfError {
    #[error(transparent)]
    Graded(#[from] GradedError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("retraction axiom violated: {0}")]
    RetractionAxiomViolation(String),
    #[error("structure mismatch: {0}")]
    StructureMismatch(String),
    #[error("operation of arity {arity} is above the arity cap {cap}")]
    ArityCap { arity: usize, cap: usize },
    #[error("energy {0} is not in G ∩ [0, E]")]
    BadEnergy(String),
    #[error("operation ({arity}, {energy}) must have degree {expected}, got {got}")]
    WrongDegree { arity: usize, energy: String, expected: i32, got: i32 },
    #[error("positivity violated: {0}")]
    Positivity(String),
}

pub type OpKey = (usize, Q);

/// Result of looking up one operation.
pub enum Lookup<'a, R> {
    Zero,
    Known(&'a MultilinearMap<R>),
    /// Above the arity cap: value not available.
    Unknown,
}

impl<'a, R> Clone for Lookup<'a, R> {
    fn clone(&self) -> Self {
        match self {
            Lookup::Zero => Lookup::Zero,
            Lookup::Known(m) => Lookup::Known(m),
            Lookup::Unknown => Lookup::Unknown,
        }
    }
}

/// Marker: the value needs an operation above an arity cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Undetermined;

/// Sparse family `(k, β) → map` with an optional arity cap. Individual
/// energies may override the cap: a per-energy cap, or complete (known at
/// every arity).
#[derive(Clone, Debug, PartialEq)]
pub struct OpFamily<R> {
    pub arity_cap: Option<usize>,
    energy_caps: BTreeMap<Q, Option<usize>>,
    ops: BTreeMap<OpKey, MultilinearMap<R>>,
}

impl<R: Coeff> OpFamily<R> {
    pub fn new(arity_cap: Option<usize>) -> Self {
        OpFamily { arity_cap, energy_caps: BTreeMap::new(), ops: BTreeMap::new() }
    }

    pub fn mark_complete(&mut self, beta: Q) {
        self.energy_caps.insert(beta, None);
    }

    /// Caps energy `β` at arity `cap` and drops stored operations above it.
    pub fn set_energy_cap(&mut self, beta: Q, cap: usize) {
        self.ops.retain(|(k, b), _| !(b == &beta && *k > cap));
        self.energy_caps.insert(beta, Some(cap));
    }

    pub fn complete_energies(&self) -> impl Iterator<Item = &Q> {
        self.energy_caps.iter().filter(|(_, c)| c.is_none()).map(|(b, _)| b)
    }

    pub fn energy_caps(&self) -> impl Iterator<Item = (&Q, &Option<usize>)> {
        self.energy_caps.iter()
    }

    /// Arity cap in force at energy `β`; `None` means no cap.
    pub fn cap_at(&self, beta: &Q) -> Option<usize> {
        match self.energy_caps.get(beta) {
            Some(c) => *c,
            None => self.arity_cap,
        }
    }

    /// Largest arity known at some energy, or `None` when nothing is capped.
    pub fn max_known_arity(&self) -> Option<usize> {
        let cap = self.arity_cap?;
        let mut m = cap;
        for (b, c) in &self.energy_caps {
            let here = match c {
                Some(c) => *c,
                None => self.ops.keys().filter(|(_, e)| e == b).map(|k| k.0).max().unwrap_or(0),
            };
            m = m.max(here);
        }
        Some(m)
    }

    pub fn get(&self, k: usize, beta: &Q) -> Lookup<'_, R> {
        if let Some(cap) = self.cap_at(beta) {
            if k > cap {
                return Lookup::Unknown;
            }
        }
        match self.ops.get(&(k, beta.clone())) {
            Some(m) if !m.is_zero() => Lookup::Known(m),
            _ => Lookup::Zero,
        }
    }

    pub fn insert(&mut self, k: usize, beta: Q, m: MultilinearMap<R>) {
        if m.is_zero() {
            self.ops.remove(&(k, beta));
        } else {
            self.ops.insert((k, beta), m);
        }
    }

    pub fn add_to(&mut self, k: usize, beta: Q, m: &MultilinearMap<R>) {
        let key = (k, beta);
        let sum = match self.ops.get(&key) {
            Some(old) => old.plus(m),
            None => m.clone(),
        };
        self.insert(key.0, key.1, sum);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&OpKey, &MultilinearMap<R>)> {
        self.ops.iter()
    }

    pub fn max_stored_arity(&self) -> Option<usize> {
        self.ops.keys().map(|k| k.0).max()
    }

    pub fn map_values<S: Coeff>(&self, f: impl Fn(&MultilinearMap<R>) -> MultilinearMap<S>) -> OpFamily<S> {
        let mut out = OpFamily::new(self.arity_cap);
        out.energy_caps = self.energy_caps.clone();
        for ((k, b), m) in &self.ops {
            out.insert(*k, b.clone(), f(m));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

/// Pairs `(β₁, β₂)` of energies in the list with `β₁ + β₂ = β`.
pub fn energy_splits(energies: &[Q], beta: &Q) -> Vec<(Q, Q)> {
    energies
        .iter()
        .filter(|b1| *b1 <= beta)
        .filter_map(|b1| {
            let b2 = beta - b1;
            energies.binary_search(&b2).ok().map(|_| (b1.clone(), b2))
        })
        .collect()
}

/// `Σ_{i+j+k=N} Σ_{β₁+β₂=β} outer_{i+k+1,β₁}(id^i ⊗ inner_{j,β₂} ⊗ id^k)`.
pub fn insertion_sum<'a, R: Coeff>(
    n: usize,
    beta: &Q,
    energies: &[Q],
    outer: &dyn Fn(usize, &Q) -> Lookup<'a, R>,
    inner: &dyn Fn(usize, &Q) -> Lookup<'a, R>,
    leaf_space: &GradedSpace,
) -> Result<Result<MultilinearMap<R>, Undetermined>, GradedError> {
    let mut acc = MultilinearMap::zero(n, 0);
    let mut undetermined = false;
    for (b1, b2) in energy_splits(energies, beta) {
        for j in 0..=n {
            let a = n - j + 1;
            let g = inner(j, &b2);
            let f = outer(a, &b1);
            match (&f, &g) {
                (Lookup::Zero, _) | (_, Lookup::Zero) => {}
                (Lookup::Unknown, _) | (_, Lookup::Unknown) => undetermined = true,
                (Lookup::Known(f), Lookup::Known(g)) => {
                    for pos in 0..a {
                        acc.add_assign(&f.compose_at(pos, g, leaf_space)?);
                    }
                }
            }
        }
    }
    Ok(if undetermined { Err(Undetermined) } else { Ok(acc) })
}

/// `Σ_j Σ outer_{j,β₀}(inner_{i₁,β₁} ⊗ … ⊗ inner_{i_j,β_j})` over
/// `i₁+…+i_j = N`, `β₀+…+β_j = β`. `inner(0, 0)` must vanish.
pub fn tensor_sum<'a, R: Coeff>(
    n: usize,
    beta: &Q,
    energies: &[Q],
    outer: &dyn Fn(usize, &Q) -> Lookup<'a, R>,
    inner: &dyn Fn(usize, &Q) -> Lookup<'a, R>,
    leaf_space: &GradedSpace,
) -> Result<Result<MultilinearMap<R>, Undetermined>, GradedError> {
    let min_step = energies.iter().find(|e| !e.is_zero()).cloned();
    let mut acc = MultilinearMap::zero(n, 0);
    let mut undetermined = false;
    for b0 in energies.iter().filter(|b| *b <= beta) {
        let rest = beta - b0;
        let jmax = n + match &min_step {
            Some(m) => num_traits::ToPrimitive::to_usize(&(&rest / m).floor()).unwrap_or(0),
            None => 0,
        };
        for j in 0..=jmax {
            match outer(j, b0) {
                Lookup::Zero => {}
                Lookup::Unknown => {
                    let mut found = false;
                    slot_exists(j, n, &rest, energies, inner, &mut found, &mut undetermined);
                    if found {
                        undetermined = true;
                    }
                }
                Lookup::Known(f) => {
                    let mut st = TensorState { energies, inner, leaf_space, undetermined: false };
                    st.fill(f.clone(), 0, j, n, &rest, &mut acc)?;
                    undetermined |= st.undetermined;
                }
            }
        }
    }
    Ok(if undetermined { Err(Undetermined) } else { Ok(acc) })
}

/// Whether some choice of `slots` inner operations with total `(n, beta)` is
/// nonzero (or unknown).
fn slot_exists<'a, R: Coeff>(
    slots: usize,
    n: usize,
    beta: &Q,
    energies: &[Q],
    inner: &dyn Fn(usize, &Q) -> Lookup<'a, R>,
    found: &mut bool,
    unknown: &mut bool,
) {
    if *found {
        return;
    }
    if slots == 0 {
        if n == 0 && beta.is_zero() {
            *found = true;
        }
        return;
    }
    for i in 0..=n {
        for b in energies.iter().filter(|b| *b <= beta) {
            match inner(i, b) {
                Lookup::Zero => {}
                Lookup::Unknown => *unknown = true,
                Lookup::Known(_) => {
                    slot_exists(slots - 1, n - i, &(beta - b), energies, inner, found, unknown)
                }
            }
        }
    }
}

struct TensorState<'s, 'a, R> {
    energies: &'s [Q],
    inner: &'s dyn Fn(usize, &Q) -> Lookup<'a, R>,
    leaf_space: &'s GradedSpace,
    undetermined: bool,
}

impl<'s, 'a, R: Coeff> TensorState<'s, 'a, R> {
    fn fill(
        &mut self,
        partial: MultilinearMap<R>,
        pos: usize,
        slots: usize,
        n: usize,
        beta: &Q,
        acc: &mut MultilinearMap<R>,
    ) -> Result<(), GradedError> {
        if slots == 0 {
            if n == 0 && beta.is_zero() {
                acc.add_assign(&partial);
            }
            return Ok(());
        }
        for i in 0..=n {
            for b in self.energies.iter().filter(|b| *b <= beta) {
                match (self.inner)(i, b) {
                    Lookup::Zero => {}
                    Lookup::Unknown => self.undetermined = true,
                    Lookup::Known(g) => {
                        let next = partial.compose_at(pos, g, self.leaf_space)?;
                        if !next.is_zero() {
                            self.fill(next, pos + i, slots - 1, n - i, &(beta - b), acc)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// One nonzero residual coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct Residual {
    pub inputs: Vec<String>,
    pub output: String,
    pub value: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationFailure {
    pub arity: usize,
    pub energy: Q,
    pub residuals: Vec<Residual>,
}

/// Outcome of checking a family of identities indexed by `(N, β)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RelationReport {
    pub checked: Vec<OpKey>,
    pub undetermined: Vec<OpKey>,
    /// Sorted by `(N, β)`; the first entry is the minimal failure.
    pub failures: Vec<RelationFailure>,
}

impl RelationReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn minimal_failure(&self) -> Option<(usize, Q)> {
        self.failures.first().map(|f| (f.arity, f.energy.clone()))
    }

    /// Runs `residual` on every index in parallel and collects the outcome.
    pub fn collect<R: Coeff, F>(
        indices: Vec<OpKey>,
        out_space: &GradedSpace,
        in_space: &GradedSpace,
        residual: F,
    ) -> Result<RelationReport, GradedError>
    where
        F: Fn(usize, &Q) -> Result<Result<MultilinearMap<R>, Undetermined>, GradedError> + Sync,
    {
        let results: Vec<(OpKey, Result<Result<MultilinearMap<R>, Undetermined>, GradedError>)> =
            indices
                .into_par_iter()
                .map(|(n, b)| {
                    let r = residual(n, &b);
                    ((n, b), r)
                })
                .collect();
        let mut report = RelationReport::default();
        for ((n, b), r) in results {
            match r? {
                Err(Undetermined) => report.undetermined.push((n, b)),
                Ok(m) => {
                    if !m.is_zero() {
                        report.failures.push(RelationFailure {
                            arity: n,
                            energy: b.clone(),
                            residuals: residual_entries(&m, in_space, out_space),
                        });
                    }
                    report.checked.push((n, b));
                }
            }
        }
        report.failures.sort_by(|a, b| (a.arity, &a.energy).cmp(&(b.arity, &b.energy)));
        Ok(report)
    }
}

pub fn residual_entries<R: Coeff>(
    m: &MultilinearMap<R>,
    in_space: &GradedSpace,
    out_space: &GradedSpace,
) -> Vec<Residual> {
    let mut out = Vec::new();
    for (inp, v) in m.entries() {
        for (o, c) in v {
            out.push(Residual {
                inputs: inp.iter().map(|&b| in_space.name(b).to_string()).collect(),
                output: out_space.name(*o).to_string(),
                value: c.render(),
            });
        }
    }
    out
}

/// A `G`-gapped filtered A∞ structure on a finite-dimensional space.
#[derive(Clone, Debug, PartialEq)]
pub struct AInfStructure {
    pub space: GradedSpace,
    pub monoid: EnergyMonoid,
    pub cutoff: Q,
    pub ops: OpFamily<Q>,
    /// Declared strict unit (basis index), checked when present.
    pub unit: Option<usize>,
}

impl AInfStructure {
    pub fn new(
        space: GradedSpace,
        monoid: EnergyMonoid,
        cutoff: Q,
        arity_cap: Option<usize>,
    ) -> Self {
        AInfStructure { space, monoid, cutoff, ops: OpFamily::new(arity_cap), unit: None }
    }

    /// Packages a DGA: `m₁ = D`, `m₂(x, y) = (−1)^{|x|} x·y` (unshifted `|x|`).
    pub fn from_dga(
        space: GradedSpace,
        d: &MultilinearMap<Q>,
        product: &MultilinearMap<Q>,
        monoid: EnergyMonoid,
        cutoff: Q,
    ) -> Result<Self, AinfError> {
        let mut a = AInfStructure::new(space, monoid, cutoff, None);
        a.set_op(1, Q::zero(), d.clone().with_degree(1))?;
        let mut m2 = MultilinearMap::zero(2, 1);
        for (inp, v) in product.entries() {
            let odd = a.space.degree(inp[0]).rem_euclid(2) == 1;
            for (o, c) in v {
                m2.add_entry(inp.clone(), *o, if odd { -c.clone() } else { c.clone() });
            }
        }
        a.set_op(2, Q::zero(), m2)?;
        Ok(a)
    }

    pub fn energies(&self) -> Vec<Q> {
        self.monoid.enumerate(&self.cutoff)
    }

    pub fn arity_cap(&self) -> Option<usize> {
        self.ops.arity_cap
    }

    pub fn op(&self, k: usize, beta: &Q) -> Lookup<'_, Q> {
        self.ops.get(k, beta)
    }

    /// Known operation or an error if it lies above the cap.
    pub fn op_or_zero(&self, k: usize, beta: &Q) -> Result<Option<&MultilinearMap<Q>>, AinfError> {
        match self.op(k, beta) {
            Lookup::Zero => Ok(None),
            Lookup::Known(m) => Ok(Some(m)),
            Lookup::Unknown => Err(AinfError::ArityCap {
                arity: k,
                cap: self.ops.cap_at(beta).unwrap_or(usize::MAX),
            }),
        }
    }

    pub fn set_op(&mut self, k: usize, beta: Q, m: MultilinearMap<Q>) -> Result<(), AinfError> {
        self.validate_key(k, &beta)?;
        if m.arity() != k {
            return Err(GradedError::ArityMismatch { expected: k, got: m.arity() }.into());
        }
        if !m.is_zero() && m.degree() != 1 {
            return Err(AinfError::WrongDegree {
                arity: k,
                energy: q_to_string(&beta),
                expected: 1,
                got: m.degree(),
            });
        }
        m.check_homogeneous(&self.space, &self.space)?;
        self.ops.insert(k, beta, m);
        Ok(())
    }

    fn validate_key(&self, k: usize, beta: &Q) -> Result<(), AinfError> {
        if beta > &self.cutoff || !self.monoid.contains(beta) {
            return Err(AinfError::BadEnergy(q_to_string(beta)));
        }
        if let Some(cap) = self.ops.cap_at(beta) {
            if k > cap {
                return Err(AinfError::ArityCap { arity: k, cap });
            }
        }
        Ok(())
    }

    /// Largest `N` for which the relations are meaningful.
    fn relation_range(&self) -> usize {
        match self.ops.max_known_arity() {
            Some(cap) => cap,
            None => match self.ops.max_stored_arity() {
                Some(m) => (2 * m).saturating_sub(1).max(m),
                None => 0,
            },
        }
    }
}

pub(crate) fn all_indices(nmax: usize, energies: &[Q]) -> Vec<OpKey> {
    let mut v = Vec::new();
    for n in 0..=nmax {
        for b in energies {
            v.push((n, b.clone()));
        }
    }
    v
}

/// Residual of the A∞ relations at `(N, β)`.
pub fn ainf_residual(
    a: &AInfStructure,
    n: usize,
    beta: &Q,
    energies: &[Q],
) -> Result<Result<MultilinearMap<Q>, Undetermined>, GradedError> {
    let op = |k: usize, b: &Q| a.op(k, b);
    insertion_sum(n, beta, energies, &op, &op, &a.space)
}

/// Evaluates the A∞ relations on every basis tuple for all `(N, β)` in range.
pub fn check_ainf(a: &AInfStructure) -> Result<RelationReport, AinfError> {
    let energies = a.energies();
    let idx = all_indices(a.relation_range(), &energies);
    let mut report = RelationReport::collect(idx, &a.space, &a.space, |n, b| {
        ainf_residual(a, n, b, &energies)
    })?;
    if let Some(u) = a.unit {
        report.failures.extend(unit_failures(a, u, &energies));
        report.failures.sort_by(|x, y| (x.arity, &x.energy).cmp(&(y.arity, &y.energy)));
    }
    Ok(report)
}

/// Strict unitality: `m_{2,0}(1, x) = x`, `m_{2,0}(x, 1) = (−1)^{|x|} x`, and
/// the unit is killed by every other stored operation.
fn unit_failures(a: &AInfStructure, u: usize, energies: &[Q]) -> Vec<RelationFailure> {
    let mut out = Vec::new();
    for b in energies {
        for ((k, e), m) in a.ops.iter() {
            if e != b {
                continue;
            }
            let mut bad = MultilinearMap::<Q>::zero(*k, 1);
            for (inp, v) in m.entries() {
                if !inp.contains(&u) {
                    continue;
                }
                let mut expected: Vector<Q> = Vector::new();
                if *k == 2 && b.is_zero() {
                    if inp[0] == u {
                        vec_add(&mut expected, inp[1], Q::one());
                    }
                    if inp[1] == u {
                        let sign = if a.space.degree(inp[0]).rem_euclid(2) == 1 { -Q::one() } else { Q::one() };
                        vec_add(&mut expected, inp[0], sign);
                    }
                    if inp[0] == u && inp[1] == u {
                        expected = Vector::new();
                        vec_add(&mut expected, u, Q::one());
                    }
                }
                for (o, c) in v {
                    let want = expected.remove(o).unwrap_or_else(Q::zero);
                    bad.add_entry(inp.clone(), *o, c - want);
                }
                for (o, c) in expected {
                    bad.add_entry(inp.clone(), o, -c);
                }
            }
            if *k == 2 && b.is_zero() {
                // missing entries: m₂(1, x) must exist for every x
                for x in 0..a.space.dim() {
                    for inp in [vec![u, x], vec![x, u]] {
                        if m.get(&inp).is_none() {
                            bad.add_entry(inp, x, -Q::one());
                        }
                    }
                }
            }
            if !bad.is_zero() {
                out.push(RelationFailure {
                    arity: *k,
                    energy: b.clone(),
                    residuals: residual_entries(&bad, &a.space, &a.space),
                });
            }
        }
        if b.is_zero() && matches!(a.op(2, b), Lookup::Zero) {
            out.push(RelationFailure {
                arity: 2,
                energy: b.clone(),
                residuals: vec![Residual {
                    inputs: vec![a.space.name(u).into(), a.space.name(u).into()],
                    output: a.space.name(u).into(),
                    value: "-1".into(),
                }],
            });
        }
    }
    out
}

/// Findings of [`check_gapped`], one line each.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GappedReport {
    pub violations: Vec<String>,
}

impl GappedReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Energy-zero shape: `m_{0,0} = 0`, `m_{1,0}² = 0`, Leibniz rule, and no
/// other energy-zero operations.
pub fn check_gapped(a: &AInfStructure) -> Result<GappedReport, AinfError> {
    let zero = Q::zero();
    let mut rep = GappedReport::default();
    if let Lookup::Known(_) = a.op(0, &zero) {
        rep.violations.push("m_{0,0} is nonzero".into());
    }
    for ((k, b), _) in a.ops.iter() {
        if b.is_zero() && *k >= 3 {
            rep.violations.push(format!("m_{{{k},0}} is nonzero"));
        }
    }
    let only_dga = |k: usize, b: &Q| {
        if b.is_zero() && (k == 1 || k == 2) {
            a.op(k, b)
        } else {
            Lookup::Zero
        }
    };
    let e = [zero.clone()];
    for (n, what) in [(1, "m_{1,0}^2 is nonzero"), (2, "Leibniz rule fails"), (3, "m_{2,0} is not associative up to m_{1,0}")] {
        if let Ok(r) = insertion_sum(n, &zero, &e, &only_dga, &only_dga, &a.space)? {
            if !r.is_zero() {
                rep.violations.push(what.into());
            }
        }
    }
    Ok(rep)
}

/// A filtered A∞ morphism given by components `F_{k,β}` of degree 0.
#[derive(Clone, Debug, PartialEq)]
pub struct AInfMorphism {
    pub source_space: GradedSpace,
    pub target_space: GradedSpace,
    pub monoid: EnergyMonoid,
    pub cutoff: Q,
    pub comps: OpFamily<Q>,
}

impl AInfMorphism {
    pub fn new(
        source_space: GradedSpace,
        target_space: GradedSpace,
        monoid: EnergyMonoid,
        cutoff: Q,
        arity_cap: Option<usize>,
    ) -> Self {
        AInfMorphism { source_space, target_space, monoid, cutoff, comps: OpFamily::new(arity_cap) }
    }

    pub fn identity(space: &GradedSpace, monoid: &EnergyMonoid, cutoff: &Q) -> Self {
        let mut f = AInfMorphism::new(space.clone(), space.clone(), monoid.clone(), cutoff.clone(), None);
        f.comps.insert(1, Q::zero(), MultilinearMap::identity(space.dim()));
        f
    }

    pub fn comp(&self, k: usize, beta: &Q) -> Lookup<'_, Q> {
        self.comps.get(k, beta)
    }

    pub fn arity_cap(&self) -> Option<usize> {
        self.comps.arity_cap
    }

    pub fn energies(&self) -> Vec<Q> {
        self.monoid.enumerate(&self.cutoff)
    }

    pub fn set_comp(&mut self, k: usize, beta: Q, m: MultilinearMap<Q>) -> Result<(), AinfError> {
        if m.arity() != k {
            return Err(GradedError::ArityMismatch { expected: k, got: m.arity() }.into());
        }
        if !m.is_zero() && m.degree() != 0 {
            return Err(AinfError::WrongDegree {
                arity: k,
                energy: q_to_string(&beta),
                expected: 0,
                got: m.degree(),
            });
        }
        if beta > self.cutoff || !self.monoid.contains(&beta) {
            return Err(AinfError::BadEnergy(q_to_string(&beta)));
        }
        m.check_homogeneous(&self.source_space, &self.target_space)?;
        self.comps.insert(k, beta, m);
        Ok(())
    }

    /// `F_{1,0} = id` and no other energy-zero components.
    pub fn check_positive(&self) -> Result<(), AinfError> {
        for ((k, b), m) in self.comps.iter() {
            if b.is_zero() {
                if *k != 1 {
                    return Err(AinfError::Positivity(format!("F_{{{k},0}} is nonzero")));
                }
                if self.source_space.dim() != self.target_space.dim()
                    || *m != MultilinearMap::identity(self.source_space.dim())
                {
                    return Err(AinfError::Positivity("F_{1,0} is not the identity".into()));
                }
            }
        }
        if let Lookup::Zero = self.comp(1, &Q::zero()) {
            return Err(AinfError::Positivity("F_{1,0} is missing".into()));
        }
        Ok(())
    }
}

/// `Σ m^B(F ⊗ … ⊗ F) − Σ F(id ⊗ m^A ⊗ id)` at `(N, β)`.
pub fn morphism_residual(
    f: &AInfMorphism,
    a: &AInfStructure,
    b: &AInfStructure,
    n: usize,
    beta: &Q,
    energies: &[Q],
) -> Result<Result<MultilinearMap<Q>, Undetermined>, GradedError> {
    let fl = |k: usize, e: &Q| f.comp(k, e);
    let ma = |k: usize, e: &Q| a.op(k, e);
    let mb = |k: usize, e: &Q| b.op(k, e);
    let lhs = tensor_sum(n, beta, energies, &mb, &fl, &f.source_space)?;
    let rhs = insertion_sum(n, beta, energies, &fl, &ma, &f.source_space)?;
    Ok(match (lhs, rhs) {
        (Ok(l), Ok(r)) => Ok(l.minus(&r)),
        _ => Err(Undetermined),
    })
}

fn check_same_setting(
    what: &str,
    s1: &GradedSpace,
    s2: &GradedSpace,
    e1: &Q,
    e2: &Q,
) -> Result<(), AinfError> {
    if s1 != s2 {
        return Err(AinfError::StructureMismatch(format!("{what}: spaces differ")));
    }
    if e1 != e2 {
        return Err(AinfError::StructureMismatch(format!("{what}: truncations differ")));
    }
    Ok(())
}

pub fn check_morphism(
    f: &AInfMorphism,
    a: &AInfStructure,
    b: &AInfStructure,
) -> Result<RelationReport, AinfError> {
    check_same_setting("source", &f.source_space, &a.space, &f.cutoff, &a.cutoff)?;
    check_same_setting("target", &f.target_space, &b.space, &f.cutoff, &b.cutoff)?;
    let energies = f.energies();
    let nmax = [f.comps.max_known_arity(), a.ops.max_known_arity(), b.ops.max_known_arity()]
        .into_iter()
        .flatten()
        .min()
        .unwrap_or_else(|| {
            let m = [f.comps.max_stored_arity(), a.ops.max_stored_arity(), b.ops.max_stored_arity()]
                .into_iter()
                .flatten()
                .max()
                .unwrap_or(0);
            2 * m
        });
    let idx = all_indices(nmax, &energies);
    Ok(RelationReport::collect(idx, &f.target_space, &f.source_space, |n, e| {
        morphism_residual(f, a, b, n, e, &energies)
    })?)
}

/// `(G∘F)_{N,β} = Σ G_{j,β₀}(F_{i₁,β₁} ⊗ … ⊗ F_{i_j,β_j})`.
pub fn compose_morphisms(g: &AInfMorphism, f: &AInfMorphism) -> Result<AInfMorphism, AinfError> {
    check_same_setting("composition", &f.target_space, &g.source_space, &f.cutoff, &g.cutoff)?;
    if f.monoid != g.monoid {
        return Err(AinfError::StructureMismatch("composition: monoids differ".into()));
    }
    let energies = f.energies();
    let cap = match (g.arity_cap(), f.arity_cap()) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (Some(a), None) | (None, Some(a)) => Some(a),
        (None, None) => None,
    };
    let nmax = match (g.comps.max_known_arity(), f.comps.max_known_arity()) {
        (Some(a), Some(b)) => a.min(b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => g.comps.max_stored_arity().unwrap_or(0) * f.comps.max_stored_arity().unwrap_or(0),
    };
    let fl = |k: usize, e: &Q| f.comp(k, e);
    let gl = |k: usize, e: &Q| g.comp(k, e);
    let results: Vec<(OpKey, Result<Result<MultilinearMap<Q>, Undetermined>, GradedError>)> =
        all_indices(nmax, &energies)
            .into_par_iter()
            .map(|(n, b)| {
                let r = tensor_sum(n, &b, &energies, &gl, &fl, &f.source_space);
                ((n, b), r)
            })
            .collect();
    let mut out = AInfMorphism::new(
        f.source_space.clone(),
        g.target_space.clone(),
        f.monoid.clone(),
        f.cutoff.clone(),
        cap.map(|_| nmax),
    );
    let mut lowest_unknown: BTreeMap<Q, usize> = BTreeMap::new();
    for ((n, b), r) in results {
        match r? {
            Ok(m) => out.comps.insert(n, b, m),
            Err(Undetermined) => {
                let e = lowest_unknown.entry(b).or_insert(n);
                *e = (*e).min(n);
            }
        }
    }
    if cap.is_some() {
        for b in &energies {
            match lowest_unknown.get(b) {
                Some(n) => out.comps.set_energy_cap(b.clone(), n.saturating_sub(1)),
                None => out.comps.set_energy_cap(b.clone(), nmax),
            }
        }
    }
    Ok(out)
}

/// Deformation retraction `(i, p, h)` of `(V̄, D)` onto `H̄`.
#[derive(Clone, Debug, PartialEq)]
pub struct Retraction {
    pub ambient: GradedSpace,
    pub cohomology: GradedSpace,
    /// `H̄ → V̄`, degree 0.
    pub i: MultilinearMap<Q>,
    /// `V̄ → H̄`, degree 0.
    pub p: MultilinearMap<Q>,
    /// `V̄ → V̄`, shifted degree −1.
    pub h: MultilinearMap<Q>,
}

impl Retraction {
    /// `Di = 0`, `pD = 0`, `pi = id`, `id − ip = Dh + hD`.
    pub fn check(&self, d: &MultilinearMap<Q>) -> Result<(), AinfError> {
        let v = &self.ambient;
        let hs = &self.cohomology;
        for (m, name, deg) in [(&self.i, "i", 0), (&self.p, "p", 0), (&self.h, "h", -1)] {
            if m.arity() != 1 {
                return Err(AinfError::RetractionAxiomViolation(format!("{name} must be linear")));
            }
            if !m.is_zero() && m.degree() != deg {
                return Err(AinfError::RetractionAxiomViolation(format!(
                    "{name} has degree {}, expected {deg}",
                    m.degree()
                )));
            }
        }
        self.i.check_homogeneous(hs, v)?;
        self.p.check_homogeneous(v, hs)?;
        self.h.check_homogeneous(v, v)?;
        if !d.compose_at(0, &self.i, hs)?.is_zero() {
            return Err(AinfError::RetractionAxiomViolation("Di ≠ 0".into()));
        }
        if !self.p.compose_at(0, d, v)?.is_zero() {
            return Err(AinfError::RetractionAxiomViolation("pD ≠ 0".into()));
        }
        if self.p.compose_at(0, &self.i, hs)?.with_degree(0) != MultilinearMap::identity(hs.dim()) {
            return Err(AinfError::RetractionAxiomViolation("pi ≠ id".into()));
        }
        let ip = self.i.compose_at(0, &self.p, v)?;
        let lhs = MultilinearMap::<Q>::identity(v.dim()).minus(&ip);
        let rhs = d.compose_at(0, &self.h, v)?.plus(&self.h.compose_at(0, d, v)?);
        if lhs.minus(&rhs).with_degree(0).is_zero() {
            Ok(())
        } else {
            Err(AinfError::RetractionAxiomViolation("id − ip ≠ Dh + hD".into()))
        }
    }
}

/// Homotopy transfer: `m^can_{k,β} = Σ_{(T,λ) ∈ 𝒪(k,β)} η(T,λ)` for
/// `k ≤ max_arity`, skipping the bare edge. If some term at energy `β` needs
/// an operation above the input's cap, the cap at `β` is lowered accordingly.
pub fn canonical_model(
    a: &AInfStructure,
    r: &Retraction,
    max_arity: usize,
) -> Result<AInfStructure, AinfError> {
    if r.ambient != a.space {
        return Err(AinfError::StructureMismatch("retraction ambient space differs".into()));
    }
    let zero = Q::zero();
    let d = match a.op(1, &zero) {
        Lookup::Known(d) => d.clone(),
        _ => MultilinearMap::zero(1, 1),
    };
    r.check(&d)?;
    let energies = a.energies();
    // trees through a vanishing operation contribute nothing
    let keep = |ar: usize, e: &Q| !matches!(a.op(ar, e), Lookup::Zero);
    let mut en = TreeEnumerator::with_filter(&a.monoid, &a.cutoff, &keep);
    let mut jobs = Vec::new();
    for k in 0..=max_arity {
        for b in &energies {
            jobs.push((k, b.clone(), en.trees(k, b)?.as_ref().clone()));
        }
    }
    // with m₁ = D on V[1], the transfer uses −h on interior edges
    let edge = r.h.negated();
    let hs = &r.cohomology;
    let results: Vec<(usize, Q, Result<MultilinearMap<Q>, AinfError>)> = jobs
        .into_par_iter()
        .map(|(k, b, trees)| {
            let mut acc = MultilinearMap::zero(k, 1);
            for t in trees.iter().filter(|t| t.num_vertices() > 0) {
                let label = |_: usize, e: &Q, ar: usize| match a.op(ar, e) {
                    Lookup::Zero => Ok(None),
                    Lookup::Known(m) => Ok(Some(m)),
                    Lookup::Unknown => Err(TreeError::MissingLabel {
                        vertex: 0,
                        arity: ar,
                        energy: q_to_string(e),
                    }),
                };
                match compose_tree(t, &label, Some(&edge), Some(&r.i), Some(&r.p), hs) {
                    Ok(m) => acc.add_assign(&m),
                    Err(e) => return (k, b, Err(e.into())),
                }
            }
            (k, b, Ok(acc.with_degree(1)))
        })
        .collect();
    let mut caps: BTreeMap<Q, usize> = energies.iter().map(|b| (b.clone(), max_arity)).collect();
    for (k, b, res) in &results {
        if let Err(AinfError::Tree(TreeError::MissingLabel { .. })) = res {
            let c = caps.get_mut(b).expect("energy listed");
            *c = (*c).min(k.saturating_sub(1));
        }
    }
    let mut out = AInfStructure::new(hs.clone(), a.monoid.clone(), a.cutoff.clone(), Some(max_arity));
    for (b, c) in &caps {
        if *c < max_arity {
            out.ops.set_energy_cap(b.clone(), *c);
        }
    }
    for (k, b, res) in results {
        if k > caps[&b] {
            continue;
        }
        out.set_op(k, b, res?)?;
    }
    Ok(out)
}
