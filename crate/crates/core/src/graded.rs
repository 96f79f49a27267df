//! Graded vector spaces with a fixed basis and sparse multilinear maps on the
//! suspension `V[1]`.
//!
//! All maps are stored by their values on basis tuples. Degrees attached to
//! maps are shifted degrees: `m_k` has degree 1, homotopies `h` of the
//! retraction degree −1, pseudo-isotopy and morphism components degree 0.
//! Partial composition follows the Koszul rule on shifted degrees.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use thiserror::Error;

use crate::ring::{Coeff, Q};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GradedError {
    #[error("arity mismatch: expected {expected}, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("space mismatch: {0}")]
    SpaceMismatch(String),
    #[error("degree mismatch: {0}")]
    DegreeMismatch(String),
    #[error("unknown generator `{0}`")]
    UnknownGenerator(String),
    #[error("invalid graded space: {0}")]
    InvalidSpace(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grading {
    /// ℤ-graded.
    Z,
    /// ℤ/2-graded; the default for Maslov-zero torus models.
    Z2,
}

impl Grading {
    pub fn reduce(self, d: i32) -> i32 {
        match self {
            Grading::Z => d,
            Grading::Z2 => d.rem_euclid(2),
        }
    }
}

/// Finite-dimensional graded space with named basis generators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GradedSpace {
    names: Vec<String>,
    degrees: Vec<i32>,
    mode: Grading,
}

impl GradedSpace {
    pub fn new(
        names: Vec<String>,
        degrees: Vec<i32>,
        mode: Grading,
    ) -> Result<Self, GradedError> {
        if names.len() != degrees.len() {
            return Err(GradedError::InvalidSpace(format!(
                "{} names but {} degrees",
                names.len(),
                degrees.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if !seen.insert(n) {
                return Err(GradedError::InvalidSpace(format!("duplicate generator `{n}`")));
            }
        }
        let degrees = degrees.into_iter().map(|d| mode.reduce(d)).collect();
        Ok(GradedSpace { names, degrees, mode })
    }

    pub fn from_pairs(pairs: &[(&str, i32)], mode: Grading) -> Result<Self, GradedError> {
        GradedSpace::new(
            pairs.iter().map(|(n, _)| n.to_string()).collect(),
            pairs.iter().map(|(_, d)| *d).collect(),
            mode,
        )
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn mode(&self) -> Grading {
        self.mode
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Result<usize, GradedError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| GradedError::UnknownGenerator(name.to_string()))
    }

    /// Unshifted degree.
    pub fn degree(&self, i: usize) -> i32 {
        self.degrees[i]
    }

    /// Degree on the suspension `V[1]`.
    pub fn shifted_degree(&self, i: usize) -> i32 {
        self.mode.reduce(self.degrees[i] - 1)
    }

    pub fn shifted_parity(&self, i: usize) -> bool {
        self.shifted_degree(i).rem_euclid(2) == 1
    }
}

/// Sparse vector: basis index → nonzero coefficient.
pub type Vector<R> = BTreeMap<usize, R>;

pub fn vec_add<R: Coeff>(a: &mut Vector<R>, i: usize, c: R) {
    if c.is_nil() {
        return;
    }
    match a.get_mut(&i) {
        Some(x) => {
            *x = x.plus(&c);
            if x.is_nil() {
                a.remove(&i);
            }
        }
        None => {
            a.insert(i, c);
        }
    }
}

pub fn vec_axpy<R: Coeff>(acc: &mut Vector<R>, scale: &R, v: &Vector<R>) {
    for (i, c) in v {
        vec_add(acc, *i, scale.times(c));
    }
}

pub fn basis_vector<R: Coeff>(i: usize) -> Vector<R> {
    let mut v = Vector::new();
    v.insert(i, R::unit());
    v
}

/// A `k`-linear map `V[1]^{⊗k} → W[1]` of fixed shifted degree, given by its
/// values on basis tuples. Arity-0 maps are a single vector (value on the
/// empty tuple).
#[derive(Clone, PartialEq)]
pub struct MultilinearMap<R> {
    arity: usize,
    degree: i32,
    entries: BTreeMap<Vec<usize>, Vector<R>>,
}

impl<R: Coeff> MultilinearMap<R> {
    pub fn zero(arity: usize, degree: i32) -> Self {
        MultilinearMap { arity, degree, entries: BTreeMap::new() }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = MultilinearMap::zero(1, 0);
        for i in 0..dim {
            m.add_entry(vec![i], i, R::unit());
        }
        m
    }

    /// Arity-0 map with the given value.
    pub fn constant(value: Vector<R>, degree: i32) -> Self {
        let mut m = MultilinearMap::zero(0, degree);
        for (i, c) in value {
            m.add_entry(vec![], i, c);
        }
        m
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn degree(&self) -> i32 {
        self.degree
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Vec<usize>, &Vector<R>)> {
        self.entries.iter()
    }

    pub fn num_entries(&self) -> usize {
        self.entries.values().map(|v| v.len()).sum()
    }

    pub fn get(&self, inputs: &[usize]) -> Option<&Vector<R>> {
        self.entries.get(inputs)
    }

    pub fn coeff(&self, inputs: &[usize], output: usize) -> R {
        self.entries
            .get(inputs)
            .and_then(|v| v.get(&output))
            .cloned()
            .unwrap_or_else(R::nil)
    }

    /// Adds `c · e_output` to the value on `inputs`.
    pub fn add_entry(&mut self, inputs: Vec<usize>, output: usize, c: R) {
        assert_eq!(inputs.len(), self.arity, "entry arity");
        if c.is_nil() {
            return;
        }
        let v = self.entries.entry(inputs.clone()).or_default();
        vec_add(v, output, c);
        if v.is_empty() {
            self.entries.remove(&inputs);
        }
    }

    /// Overwrites the coefficient of `e_output` in the value on `inputs`.
    pub fn set_entry(&mut self, inputs: Vec<usize>, output: usize, c: R) {
        let old = self.coeff(&inputs, output);
        self.add_entry(inputs, output, c.minus(&old));
    }

    pub fn add_assign(&mut self, other: &MultilinearMap<R>) {
        assert_eq!(self.arity, other.arity, "sum of maps of different arity");
        if self.is_zero() {
            self.degree = other.degree;
        }
        for (inp, v) in &other.entries {
            for (o, c) in v {
                self.add_entry(inp.clone(), *o, c.clone());
            }
        }
    }

    pub fn plus(&self, other: &MultilinearMap<R>) -> MultilinearMap<R> {
        let mut r = self.clone();
        r.add_assign(other);
        r
    }

    pub fn minus(&self, other: &MultilinearMap<R>) -> MultilinearMap<R> {
        self.plus(&other.negated())
    }

    pub fn negated(&self) -> MultilinearMap<R> {
        self.map_coeffs(|c| c.negated())
    }

    pub fn scaled(&self, c: &R) -> MultilinearMap<R> {
        self.map_coeffs(|x| x.times(c))
    }

    pub fn scaled_q(&self, c: &Q) -> MultilinearMap<R> {
        self.map_coeffs(|x| x.scaled(c))
    }

    pub fn map_coeffs<S: Coeff>(&self, f: impl Fn(&R) -> S) -> MultilinearMap<S> {
        let mut r = MultilinearMap::zero(self.arity, self.degree);
        for (inp, v) in &self.entries {
            for (o, c) in v {
                r.add_entry(inp.clone(), *o, f(c));
            }
        }
        r
    }

    pub fn with_degree(mut self, degree: i32) -> Self {
        self.degree = degree;
        self
    }

    /// Multilinear extension of the stored values.
    pub fn evaluate(&self, args: &[Vector<R>]) -> Result<Vector<R>, GradedError> {
        if args.len() != self.arity {
            return Err(GradedError::ArityMismatch { expected: self.arity, got: args.len() });
        }
        let mut out = Vector::new();
        'entries: for (inp, val) in &self.entries {
            let mut scale = R::unit();
            for (slot, &b) in inp.iter().enumerate() {
                match args[slot].get(&b) {
                    Some(c) => scale = scale.times(c),
                    None => continue 'entries,
                }
            }
            vec_axpy(&mut out, &scale, val);
        }
        Ok(out)
    }

    /// Partial composition `self ∘_pos inner` (0-based slot). The sign is
    /// `(−1)^{|inner|·(|x_0|'+…+|x_{pos−1}|')}` where the `x` are the composite's
    /// inputs, whose degrees are read from `leaf_space`.
    pub fn compose_at(
        &self,
        pos: usize,
        inner: &MultilinearMap<R>,
        leaf_space: &GradedSpace,
    ) -> Result<MultilinearMap<R>, GradedError> {
        if pos >= self.arity {
            return Err(GradedError::ArityMismatch { expected: self.arity, got: pos + 1 });
        }
        let arity = self.arity + inner.arity - 1;
        let mut out = MultilinearMap::zero(arity, self.degree + inner.degree);
        if self.is_zero() || inner.is_zero() {
            return Ok(out);
        }
        let inner_odd = inner.degree.rem_euclid(2) == 1;
        let mut by_output: HashMap<usize, Vec<(&Vec<usize>, &R)>> = HashMap::new();
        for (w, v) in &inner.entries {
            for (o, c) in v {
                by_output.entry(*o).or_default().push((w, c));
            }
        }
        for (u, val) in &self.entries {
            let Some(list) = by_output.get(&u[pos]) else { continue };
            let negate = inner_odd
                && u[..pos].iter().filter(|&&b| leaf_space.shifted_parity(b)).count() % 2 == 1;
            for (w, c) in list {
                let mut inputs = Vec::with_capacity(arity);
                inputs.extend_from_slice(&u[..pos]);
                inputs.extend_from_slice(w);
                inputs.extend_from_slice(&u[pos + 1..]);
                let scale = if negate { c.negated() } else { (*c).clone() };
                for (o, d) in val {
                    out.add_entry(inputs.clone(), *o, d.times(&scale));
                }
            }
        }
        Ok(out)
    }

    /// `self ∘ (g_1 ⊗ … ⊗ g_k)` with Koszul signs; `None` stands for the
    /// identity in that slot. Slots are filled left to right.
    pub fn compose_multi(
        &self,
        inners: &[Option<&MultilinearMap<R>>],
        leaf_space: &GradedSpace,
    ) -> Result<MultilinearMap<R>, GradedError> {
        if inners.len() != self.arity {
            return Err(GradedError::ArityMismatch { expected: self.arity, got: inners.len() });
        }
        let mut acc = self.clone();
        let mut pos = 0;
        for g in inners {
            match g {
                None => pos += 1,
                Some(g) => {
                    acc = acc.compose_at(pos, g, leaf_space)?;
                    pos += g.arity;
                }
            }
        }
        Ok(acc)
    }

    /// Checks that every stored value is homogeneous of degree
    /// `Σ |inputs|' + degree` on the suspended spaces.
    pub fn check_homogeneous(
        &self,
        input_space: &GradedSpace,
        output_space: &GradedSpace,
    ) -> Result<(), GradedError> {
        let mode = output_space.mode();
        for (inp, val) in &self.entries {
            let expected = mode.reduce(
                inp.iter().map(|&b| input_space.shifted_degree(b)).sum::<i32>() + self.degree,
            );
            for o in val.keys() {
                if mode.reduce(output_space.shifted_degree(*o)) != expected {
                    return Err(GradedError::DegreeMismatch(format!(
                        "value on ({}) has component `{}` of shifted degree {}, expected {}",
                        inp.iter().map(|&b| input_space.name(b)).collect::<Vec<_>>().join(","),
                        output_space.name(*o),
                        output_space.shifted_degree(*o),
                        expected
                    )));
                }
            }
        }
        Ok(())
    }
}

impl<R: fmt::Debug> fmt::Debug for MultilinearMap<R> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Map[arity {}, deg {}]{{", self.arity, self.degree)?;
        for (inp, v) in &self.entries {
            write!(f, " {inp:?}->{v:?}")?;
        }
        write!(f, " }}")
    }
}

/// All tuples in `{0..dim}^k`, lexicographic.
pub fn basis_tuples(dim: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..k {
        let mut next = Vec::with_capacity(out.len() * dim);
        for t in &out {
            for b in 0..dim {
                let mut t2 = t.clone();
                t2.push(b);
                next.push(t2);
            }
        }
        out = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::{q, qi};

    fn ext1() -> GradedSpace {
        // exterior algebra on one odd generator: 1 (deg 0), e (deg 1)
        GradedSpace::from_pairs(&[("1", 0), ("e", 1)], Grading::Z2).unwrap()
    }

    #[test]
    fn identity_evaluates_to_input() {
        let id = MultilinearMap::<Q>::identity(2);
        let e = basis_vector::<Q>(1);
        assert_eq!(id.evaluate(&[e.clone()]).unwrap(), e);
    }

    #[test]
    fn wedge_of_odd_generator_vanishes() {
        let mut wedge = MultilinearMap::<Q>::zero(2, 1);
        wedge.add_entry(vec![0, 0], 0, qi(1));
        wedge.add_entry(vec![0, 1], 1, qi(1));
        wedge.add_entry(vec![1, 0], 1, qi(-1));
        let e = basis_vector::<Q>(1);
        assert!(wedge.evaluate(&[e.clone(), e]).unwrap().is_empty());
    }

    #[test]
    fn bilinearity() {
        let mut f = MultilinearMap::<Q>::zero(2, 0);
        f.add_entry(vec![0, 1], 0, q(1, 3));
        f.add_entry(vec![0, 1], 1, qi(2));
        let mut a = Vector::new();
        a.insert(0, qi(2));
        let mut b = Vector::new();
        b.insert(1, qi(3));
        let r = f.evaluate(&[a, b]).unwrap();
        assert_eq!(r.get(&0), Some(&qi(2)));
        assert_eq!(r.get(&1), Some(&qi(12)));
        assert!(matches!(f.evaluate(&[]), Err(GradedError::ArityMismatch { .. })));
    }

    #[test]
    fn compose_with_identity_and_zero() {
        let s = ext1();
        let mut f = MultilinearMap::<Q>::zero(2, 1);
        f.add_entry(vec![1, 1], 0, qi(5));
        f.add_entry(vec![0, 1], 1, qi(-2));
        let id = MultilinearMap::identity(2);
        assert_eq!(f.compose_at(0, &id, &s).unwrap(), f);
        assert_eq!(f.compose_at(1, &id, &s).unwrap(), f);
        let z = MultilinearMap::<Q>::zero(3, 0);
        assert!(f.compose_at(1, &z, &s).unwrap().is_zero());
        assert_eq!(f.compose_at(1, &z, &s).unwrap().arity(), 4);
    }

    #[test]
    fn homogeneity_check() {
        let s = ext1();
        let mut f = MultilinearMap::<Q>::zero(1, 1);
        // e has shifted degree 0, 1 has shifted degree 1 (mod 2)
        f.add_entry(vec![1], 0, qi(1));
        assert!(f.check_homogeneous(&s, &s).is_ok());
        f.add_entry(vec![1], 1, qi(1));
        assert!(f.check_homogeneous(&s, &s).is_err());
    }

    #[test]
    fn space_validation() {
        assert!(GradedSpace::from_pairs(&[("a", 0), ("a", 1)], Grading::Z).is_err());
        let s = GradedSpace::from_pairs(&[("x", 3)], Grading::Z2).unwrap();
        assert_eq!(s.degree(0), 1);
        assert_eq!(s.shifted_degree(0), 0);
        assert!(s.index_of("y").is_err());
    }
}
