//! Stable decorated ribbon trees, operadic composition along trees and exact
//! integration over time orderings.
//!
//! A tree is stored as nested child sequences in planar order; leaves are
//! numbered left to right. Interior vertices are numbered in preorder, so
//! vertex 0 is the one attached to the root.

use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use num_traits::{Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::graded::{GradedError, GradedSpace, MultilinearMap};
use crate::novikov::EnergyMonoid;
use crate::poly::Poly;
use crate::ring::{q_to_string, Coeff, Q};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("energy {0} is not in the monoid")]
    EnergyNotInMonoid(String),
    #[error("energy {energy} exceeds the cutoff {cutoff}")]
    AboveCutoff { energy: String, cutoff: String },
    #[error("no label for vertex {vertex} (arity {arity}, energy {energy})")]
    MissingLabel { vertex: usize, arity: usize, energy: String },
    #[error("breakpoints must be strictly increasing and at least two")]
    BadBreakpoints,
    #[error(transparent)]
    Graded(#[from] GradedError),
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tree {
    /// An edge ending in a leaf; on its own, the bare vertical-line tree.
    Leaf,
    Node { energy: Q, children: Vec<Tree> },
}

/// One interior vertex as seen from the whole tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VertexInfo {
    pub id: usize,
    pub energy: Q,
    pub arity: usize,
    pub parent: Option<usize>,
}

impl Tree {
    pub fn node(energy: Q, children: Vec<Tree>) -> Tree {
        Tree::Node { energy, children }
    }

    pub fn leaves(&self) -> usize {
        match self {
            Tree::Leaf => 1,
            Tree::Node { children, .. } => children.iter().map(Tree::leaves).sum(),
        }
    }

    pub fn total_energy(&self) -> Q {
        match self {
            Tree::Leaf => Q::zero(),
            Tree::Node { energy, children } => {
                children.iter().fold(energy.clone(), |acc, c| acc + c.total_energy())
            }
        }
    }

    pub fn num_vertices(&self) -> usize {
        match self {
            Tree::Leaf => 0,
            Tree::Node { children, .. } => {
                1 + children.iter().map(Tree::num_vertices).sum::<usize>()
            }
        }
    }

    /// Interior vertices in preorder.
    pub fn vertices(&self) -> Vec<VertexInfo> {
        fn walk(t: &Tree, parent: Option<usize>, out: &mut Vec<VertexInfo>) {
            if let Tree::Node { energy, children } = t {
                let id = out.len();
                out.push(VertexInfo {
                    id,
                    energy: energy.clone(),
                    arity: children.len(),
                    parent,
                });
                for c in children {
                    walk(c, Some(id), out);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, None, &mut out);
        out
    }

    /// `a ≤ b` in the tree order: `b` lies on the path from `a` to the root.
    pub fn precedes(&self, a: usize, b: usize) -> bool {
        let vs = self.vertices();
        let mut cur = Some(a);
        while let Some(c) = cur {
            if c == b {
                return true;
            }
            cur = vs[c].parent;
        }
        false
    }

    /// Every zero-energy interior vertex has at least two inputs.
    pub fn is_stable(&self) -> bool {
        match self {
            Tree::Leaf => true,
            Tree::Node { energy, children } => {
                (!energy.is_zero() || children.len() >= 2)
                    && children.iter().all(Tree::is_stable)
            }
        }
    }

    /// Bracket notation: a leaf edge is `(·)`, a vertex wraps its children.
    pub fn bracket(&self) -> String {
        match self {
            Tree::Leaf => "(·)".to_string(),
            Tree::Node { children, .. } => {
                let mut s = String::from("(");
                for c in children {
                    s.push_str(&c.bracket());
                }
                s.push(')');
                s
            }
        }
    }

    pub fn decorations(&self) -> Vec<Q> {
        self.vertices().into_iter().map(|v| v.energy).collect()
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bracket())?;
        let decs = self.decorations();
        if !decs.is_empty() {
            let parts: Vec<String> = decs
                .iter()
                .enumerate()
                .map(|(i, e)| format!("v{i}:{}", q_to_string(e)))
                .collect();
            write!(f, " [{}]", parts.join(", "))?;
        }
        Ok(())
    }
}

impl fmt::Debug for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointedTree {
    pub tree: Tree,
    pub vertex: usize,
}

type Forest = Vec<Tree>;

/// Memoized enumerator for one monoid and cutoff. An optional vertex filter
/// drops every tree with a vertex `(arity, energy)` it rejects.
pub struct TreeEnumerator<'f> {
    filter: Option<&'f (dyn Fn(usize, &Q) -> bool + Sync)>,
    elems: Vec<Q>,
    min_gen: Option<Q>,
    cutoff: Q,
    trees: HashMap<(usize, Q), Rc<Vec<Tree>>>,
    forests: HashMap<(usize, usize, Q), Rc<Vec<Forest>>>,
}

impl<'f> TreeEnumerator<'f> {
    pub fn new(monoid: &EnergyMonoid, cutoff: &Q) -> Self {
        TreeEnumerator {
            filter: None,
            elems: monoid.enumerate(cutoff),
            min_gen: monoid.min_positive().cloned(),
            cutoff: cutoff.clone(),
            trees: HashMap::new(),
            forests: HashMap::new(),
        }
    }

    pub fn with_filter(monoid: &EnergyMonoid, cutoff: &Q, filter: &'f (dyn Fn(usize, &Q) -> bool + Sync)) -> Self {
        TreeEnumerator { filter: Some(filter), ..TreeEnumerator::new(monoid, cutoff) }
    }

    /// Energies of `G ∩ [0, E]`.
    pub fn energies(&self) -> &[Q] {
        &self.elems
    }

    fn check(&self, beta: &Q) -> Result<(), TreeError> {
        if beta > &self.cutoff {
            return Err(TreeError::AboveCutoff {
                energy: q_to_string(beta),
                cutoff: q_to_string(&self.cutoff),
            });
        }
        if self.elems.binary_search(beta).is_err() {
            return Err(TreeError::EnergyNotInMonoid(q_to_string(beta)));
        }
        Ok(())
    }

    /// `𝒪(k, β)`.
    pub fn trees(&mut self, k: usize, beta: &Q) -> Result<Rc<Vec<Tree>>, TreeError> {
        self.check(beta)?;
        Ok(self.trees_inner(k, beta))
    }

    /// `𝒪⁺(k, β)`.
    pub fn pointed_trees(&mut self, k: usize, beta: &Q) -> Result<Vec<PointedTree>, TreeError> {
        let ts = self.trees(k, beta)?;
        Ok(ts
            .iter()
            .flat_map(|t| {
                (0..t.num_vertices()).map(move |v| PointedTree { tree: t.clone(), vertex: v })
            })
            .collect())
    }

    /// How many more inputs-or-energy units can fill `slots` subtrees.
    fn feasible(&self, slots: usize, k: usize, beta: &Q) -> bool {
        let energy_slots = match &self.min_gen {
            Some(g) => (beta / g).floor().to_usize().unwrap_or(usize::MAX),
            None => 0,
        };
        k.saturating_add(energy_slots) >= slots
    }

    fn trees_inner(&mut self, k: usize, beta: &Q) -> Rc<Vec<Tree>> {
        let key = (k, beta.clone());
        if let Some(r) = self.trees.get(&key) {
            return r.clone();
        }
        let mut out = Vec::new();
        if self.elems.binary_search(beta).is_ok() {
            if k == 1 && beta.is_zero() {
                out.push(Tree::Leaf);
            }
            let lambdas: Vec<Q> = self.elems.iter().filter(|e| *e <= beta).cloned().collect();
            for lambda in lambdas {
                let rest = beta - &lambda;
                let amin = if lambda.is_zero() { 2 } else { 0 };
                let amax = match &self.min_gen {
                    Some(g) => k + (&rest / g).floor().to_usize().unwrap_or(0),
                    None => k,
                };
                for a in amin..=amax {
                    if self.filter.is_some_and(|f| !f(a, &lambda)) {
                        continue;
                    }
                    for forest in self.forests_inner(a, k, &rest).iter() {
                        out.push(Tree::node(lambda.clone(), forest.clone()));
                    }
                }
            }
        }
        let r = Rc::new(out);
        self.trees.insert(key, r.clone());
        r
    }

    fn forests_inner(&mut self, a: usize, k: usize, beta: &Q) -> Rc<Vec<Forest>> {
        let key = (a, k, beta.clone());
        if let Some(r) = self.forests.get(&key) {
            return r.clone();
        }
        let mut out = Vec::new();
        if a == 0 {
            if k == 0 && beta.is_zero() {
                out.push(Vec::new());
            }
        } else if self.feasible(a, k, beta) {
            let energies: Vec<Q> = self.elems.iter().filter(|e| *e <= beta).cloned().collect();
            for k1 in 0..=k {
                for b1 in &energies {
                    let rest = beta - b1;
                    if rest.is_negative() || !self.feasible(a - 1, k - k1, &rest) {
                        continue;
                    }
                    let firsts = self.trees_inner(k1, b1);
                    if firsts.is_empty() {
                        continue;
                    }
                    let tails = self.forests_inner(a - 1, k - k1, &rest);
                    for t in firsts.iter() {
                        for tail in tails.iter() {
                            let mut f = Vec::with_capacity(a);
                            f.push(t.clone());
                            f.extend(tail.iter().cloned());
                            out.push(f);
                        }
                    }
                }
            }
        }
        let r = Rc::new(out);
        self.forests.insert(key, r.clone());
        r
    }
}

pub fn enumerate_trees(
    k: usize,
    beta: &Q,
    monoid: &EnergyMonoid,
    cutoff: &Q,
) -> Result<Vec<Tree>, TreeError> {
    Ok(TreeEnumerator::new(monoid, cutoff).trees(k, beta)?.as_ref().clone())
}

pub fn enumerate_pointed_trees(
    k: usize,
    beta: &Q,
    monoid: &EnergyMonoid,
    cutoff: &Q,
) -> Result<Vec<PointedTree>, TreeError> {
    TreeEnumerator::new(monoid, cutoff).pointed_trees(k, beta)
}

/// Operadic composite along `tree`. `vertex_label(id, energy, arity)` gives
/// the map on each interior vertex (`None` means the zero map); `edge` sits on
/// interior edges, `leaf` on leaf edges and `root` on the root edge, each
/// defaulting to the identity. Signs use the degrees of `leaf_space`, the
/// space of the composite's inputs.
pub fn compose_tree<'a, R: Coeff>(
    tree: &Tree,
    vertex_label: &dyn Fn(usize, &Q, usize) -> Result<Option<&'a MultilinearMap<R>>, TreeError>,
    edge: Option<&MultilinearMap<R>>,
    leaf: Option<&MultilinearMap<R>>,
    root: Option<&MultilinearMap<R>>,
    leaf_space: &GradedSpace,
) -> Result<MultilinearMap<R>, TreeError> {
    let mut counter = 0;
    let body = match tree {
        Tree::Leaf => Some(leaf.cloned().unwrap_or_else(|| MultilinearMap::identity(leaf_space.dim()))),
        Tree::Node { .. } => compose_node(tree, vertex_label, edge, leaf, leaf_space, &mut counter)?,
    };
    let Some(body) = body else {
        return Ok(MultilinearMap::zero(tree.leaves(), 0));
    };
    match root {
        Some(r) => Ok(r.compose_at(0, &body, leaf_space)?),
        None => Ok(body),
    }
}

fn compose_node<'a, R: Coeff>(
    tree: &Tree,
    vertex_label: &dyn Fn(usize, &Q, usize) -> Result<Option<&'a MultilinearMap<R>>, TreeError>,
    edge: Option<&MultilinearMap<R>>,
    leaf: Option<&MultilinearMap<R>>,
    leaf_space: &GradedSpace,
    counter: &mut usize,
) -> Result<Option<MultilinearMap<R>>, TreeError> {
    let Tree::Node { energy, children } = tree else { unreachable!() };
    let id = *counter;
    *counter += 1;
    let label = vertex_label(id, energy, children.len())?;
    let mut subs: Vec<Option<MultilinearMap<R>>> = Vec::with_capacity(children.len());
    let mut zero = label.is_none();
    for c in children {
        match c {
            Tree::Leaf => subs.push(leaf.cloned()),
            Tree::Node { .. } => {
                // keep numbering consistent even when the result is already zero
                match compose_node(c, vertex_label, edge, leaf, leaf_space, counter)? {
                    None => zero = true,
                    Some(m) => {
                        let m = match edge {
                            Some(e) => e.compose_at(0, &m, leaf_space)?,
                            None => m,
                        };
                        if m.is_zero() {
                            zero = true;
                        }
                        subs.push(Some(m));
                    }
                }
            }
        }
    }
    if zero {
        return Ok(None);
    }
    let label = label.expect("checked");
    if label.arity() != children.len() {
        return Err(GradedError::ArityMismatch { expected: children.len(), got: label.arity() }
            .into());
    }
    let refs: Vec<Option<&MultilinearMap<R>>> = subs.iter().map(|s| s.as_ref()).collect();
    let m = label.compose_multi(&refs, leaf_space)?;
    Ok(if m.is_zero() { None } else { Some(m) })
}

/// Piecewise-polynomial value of `∫_{ℳ^t(T)} ρ(T, τ) dτ`.
///
/// `breakpoints` are `t_0 < … < t_n`; piece `j` is `[t_j, t_{j+1}]`.
/// `integrand(id, energy, arity, j)` is the vertex map on piece `j` with
/// entries polynomial in that vertex's own time. The result has one map per
/// piece, polynomial in `t`; the bare edge gives the identity.
pub fn integrate_ordered<'a>(
    tree: &Tree,
    breakpoints: &[Q],
    integrand: &dyn Fn(usize, &Q, usize, usize) -> Result<Option<&'a MultilinearMap<Poly>>, TreeError>,
    leaf_space: &GradedSpace,
) -> Result<Vec<MultilinearMap<Poly>>, TreeError> {
    if breakpoints.len() < 2 || breakpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(TreeError::BadBreakpoints);
    }
    let pieces = breakpoints.len() - 1;
    let mut counter = 0;
    let r = integrate_node(tree, breakpoints, integrand, leaf_space, &mut counter)?;
    Ok(r.unwrap_or_else(|| vec![MultilinearMap::zero(tree.leaves(), 0); pieces]))
}

fn integrate_node<'a>(
    tree: &Tree,
    bp: &[Q],
    integrand: &dyn Fn(usize, &Q, usize, usize) -> Result<Option<&'a MultilinearMap<Poly>>, TreeError>,
    leaf_space: &GradedSpace,
    counter: &mut usize,
) -> Result<Option<Vec<MultilinearMap<Poly>>>, TreeError> {
    let pieces = bp.len() - 1;
    let Tree::Node { energy, children } = tree else {
        return Ok(Some(vec![MultilinearMap::identity(leaf_space.dim()); pieces]));
    };
    let id = *counter;
    *counter += 1;
    let mut subs: Vec<Option<Vec<MultilinearMap<Poly>>>> = Vec::new();
    let mut zero = false;
    for c in children {
        match c {
            Tree::Leaf => subs.push(None),
            Tree::Node { .. } => match integrate_node(c, bp, integrand, leaf_space, counter)? {
                None => zero = true,
                Some(v) => subs.push(Some(v)),
            },
        }
    }
    if zero {
        return Ok(None);
    }
    let mut out: Vec<MultilinearMap<Poly>> = Vec::with_capacity(pieces);
    let mut start = MultilinearMap::<Poly>::zero(tree.leaves(), 0);
    let mut any = false;
    for j in 0..pieces {
        let rate = match integrand(id, energy, children.len(), j)? {
            None => MultilinearMap::zero(tree.leaves(), 0),
            Some(h) => {
                if h.arity() != children.len() {
                    return Err(GradedError::ArityMismatch {
                        expected: children.len(),
                        got: h.arity(),
                    }
                    .into());
                }
                let refs: Vec<Option<&MultilinearMap<Poly>>> =
                    subs.iter().map(|s| s.as_ref().map(|v| &v[j])).collect();
                h.compose_multi(&refs, leaf_space)?
            }
        };
        let piece = start.plus(&rate.map_coeffs(|p| p.integral_from(&bp[j])));
        start = piece.map_coeffs(|p| Poly::constant(p.eval(&bp[j + 1])));
        any |= !piece.is_zero();
        out.push(piece);
    }
    Ok(if any { Some(out) } else { None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graded::Grading;
    use crate::ring::{q, qi};

    fn g1() -> EnergyMonoid {
        EnergyMonoid::new(vec![qi(1)]).unwrap()
    }

    #[test]
    fn small_counts_at_zero_energy() {
        let m = EnergyMonoid::trivial();
        let mut e = TreeEnumerator::new(&m, &qi(0));
        let counts: Vec<usize> = (1..=5).map(|k| e.trees(k, &qi(0)).unwrap().len()).collect();
        assert_eq!(counts, vec![1, 1, 3, 11, 45]);
        assert_eq!(e.trees(1, &qi(0)).unwrap()[0], Tree::Leaf);
        assert!(e.trees(0, &qi(0)).unwrap().is_empty());
    }

    #[test]
    fn filtered_enumeration_matches_filtering() {
        let m = EnergyMonoid::new(vec![q(1, 2)]).unwrap();
        let keep = |a: usize, e: &Q| e.is_positive() && a != 2;
        fn all_kept(t: &Tree, keep: &dyn Fn(usize, &Q) -> bool) -> bool {
            match t {
                Tree::Leaf => true,
                Tree::Node { energy, children } => {
                    keep(children.len(), energy) && children.iter().all(|c| all_kept(c, keep))
                }
            }
        }
        let mut full = TreeEnumerator::new(&m, &qi(2));
        let mut cut = TreeEnumerator::with_filter(&m, &qi(2), &keep);
        for k in 0..=3 {
            for b in [qi(0), q(1, 2), q(3, 2), qi(2)] {
                let expect: Vec<Tree> = full.trees(k, &b).unwrap().iter().filter(|t| all_kept(t, &keep)).cloned().collect();
                assert_eq!(cut.trees(k, &b).unwrap().as_ref(), &expect, "k={k} b={b}");
            }
        }
    }

    #[test]
    fn pointed_counts() {
        let m = EnergyMonoid::trivial();
        let mut e = TreeEnumerator::new(&m, &qi(0));
        assert!(e.pointed_trees(1, &qi(0)).unwrap().is_empty());
        assert_eq!(e.pointed_trees(2, &qi(0)).unwrap().len(), 1);
        assert_eq!(e.pointed_trees(3, &qi(0)).unwrap().len(), 5);
    }

    #[test]
    fn errors() {
        let m = g1();
        assert!(matches!(
            enumerate_trees(1, &q(1, 2), &m, &qi(2)),
            Err(TreeError::EnergyNotInMonoid(_))
        ));
        assert!(matches!(
            enumerate_trees(1, &qi(3), &m, &qi(2)),
            Err(TreeError::AboveCutoff { .. })
        ));
    }

    #[test]
    fn positive_energy_trees() {
        // k=0, β=1: a single arity-0 vertex.
        let ts = enumerate_trees(0, &qi(1), &g1(), &qi(1)).unwrap();
        assert_eq!(ts, vec![Tree::node(qi(1), vec![])]);
        // k=1, β=1: unary vertex, or a zero vertex with leaf and a curvature input.
        let ts = enumerate_trees(1, &qi(1), &g1(), &qi(1)).unwrap();
        assert_eq!(ts.len(), 3);
        assert!(ts.iter().all(|t| t.is_stable() && t.total_energy() == qi(1)));
    }

    #[test]
    fn bracket_notation() {
        let t = Tree::node(
            qi(0),
            vec![Tree::node(qi(0), vec![Tree::Leaf, Tree::Leaf]), Tree::Leaf],
        );
        assert_eq!(t.bracket(), "(((·)(·))(·))");
        assert_eq!(t.to_string(), "(((·)(·))(·)) [v0:0, v1:0]");
        assert!(t.precedes(1, 0));
        assert!(!t.precedes(0, 1));
    }

    fn line_space() -> GradedSpace {
        GradedSpace::from_pairs(&[("x", 1)], Grading::Z).unwrap()
    }

    #[test]
    fn single_vertex_integrates_to_t_times_constant() {
        let s = line_space();
        let mut h = MultilinearMap::<Poly>::zero(1, 0);
        h.add_entry(vec![0], 0, Poly::constant(qi(3)));
        let t = Tree::node(qi(1), vec![Tree::Leaf]);
        let r = integrate_ordered(&t, &[qi(0), qi(1)], &|_, _, _, _| Ok(Some(&h)), &s).unwrap();
        assert_eq!(r[0].coeff(&[0], 0), Poly::monomial(qi(3), 1));
    }

    #[test]
    fn chain_integrates_to_half_t_squared() {
        let s = line_space();
        let mut a = MultilinearMap::<Poly>::zero(1, 0);
        a.add_entry(vec![0], 0, Poly::constant(qi(2)));
        let mut b = MultilinearMap::<Poly>::zero(1, 0);
        b.add_entry(vec![0], 0, Poly::constant(qi(5)));
        let t = Tree::node(qi(1), vec![Tree::node(qi(1), vec![Tree::Leaf])]);
        let labels = |id: usize, _: &Q, _: usize, _: usize| Ok(Some(if id == 0 { &b } else { &a }));
        let r = integrate_ordered(&t, &[qi(0), qi(1)], &labels, &s).unwrap();
        assert_eq!(r[0].coeff(&[0], 0), Poly::monomial(qi(5), 2));
    }

    #[test]
    fn piecewise_integration_is_continuous() {
        let s = line_space();
        let mut a = MultilinearMap::<Poly>::zero(1, 0);
        a.add_entry(vec![0], 0, Poly::t());
        let zero = MultilinearMap::<Poly>::zero(1, 0);
        let t = Tree::node(qi(1), vec![Tree::Leaf]);
        let bp = [qi(0), q(1, 2), qi(1)];
        let labels = |_: usize, _: &Q, _: usize, j: usize| Ok(Some(if j == 0 { &a } else { &zero }));
        let r = integrate_ordered(&t, &bp, &labels, &s).unwrap();
        assert_eq!(r[0].coeff(&[0], 0).eval(&q(1, 2)), q(1, 8));
        assert_eq!(r[1].coeff(&[0], 0), Poly::constant(q(1, 8)));
    }

    #[test]
    fn zero_integrand_gives_zero() {
        let s = line_space();
        let t = Tree::node(qi(1), vec![Tree::Leaf]);
        let r = integrate_ordered(&t, &[qi(0), qi(1)], &|_, _, _, _| Ok(None), &s).unwrap();
        assert!(r[0].is_zero());
    }
}
