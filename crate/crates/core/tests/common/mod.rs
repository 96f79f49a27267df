//! Shared generators for integration tests: base DGAs, random gauge
//! transport, random retractions, chart atlases.
#![allow(dead_code)]

use ainf_core::ainf::{
    insertion_sum, tensor_sum, AInfMorphism, AInfStructure, Lookup, Retraction,
};
use ainf_core::graded::{basis_tuples, GradedSpace, Grading, MultilinearMap, Vector};
use ainf_core::linalg::Matrix;
use ainf_core::mirror::{Atlas, DiskClass, RationalDomain};
use ainf_core::novikov::EnergyMonoid;
use ainf_core::ring::{q, qi, Q};
use num_traits::Zero;
use rand::rngs::StdRng;
use rand::Rng;

pub fn small_q(rng: &mut StdRng) -> Q {
    let num = loop {
        let n: i64 = rng.gen_range(-3..=3);
        if n != 0 {
            break n;
        }
    };
    let den: i64 = if rng.gen_bool(0.25) { 2 } else { 1 };
    q(num, den)
}

/// `Λ(x) ⊗ ℚ[y]/(y²)` with `Dx = y`; basis `1, x, y, xy`. Returns the space,
/// the differential and the (unshifted) product.
pub fn base_dga(mode: Grading) -> (GradedSpace, MultilinearMap<Q>, MultilinearMap<Q>) {
    let degs = match mode {
        Grading::Z => [0, 1, 2, 3],
        Grading::Z2 => [0, 1, 0, 1],
    };
    let space = GradedSpace::from_pairs(
        &[("1", degs[0]), ("x", degs[1]), ("y", degs[2]), ("xy", degs[3])],
        mode,
    )
    .unwrap();
    let mut d = MultilinearMap::zero(1, 1);
    d.add_entry(vec![1], 2, qi(1));
    let mut prod = MultilinearMap::zero(2, 0);
    for b in 0..4 {
        prod.add_entry(vec![0, b], b, qi(1));
        if b != 0 {
            prod.add_entry(vec![b, 0], b, qi(1));
        }
    }
    prod.add_entry(vec![1, 2], 3, qi(1));
    prod.add_entry(vec![2, 1], 3, qi(1));
    (space, d, prod)
}

/// Random invertible degree-preserving change of basis fixing `e_0`.
/// Columns of the returned matrix are the new basis in old coordinates.
pub fn random_basis_change(space: &GradedSpace, rng: &mut StdRng) -> (Matrix, Matrix) {
    let n = space.dim();
    loop {
        let mut p = Matrix::zeros(n, n);
        for j in 0..n {
            for i in 0..n {
                if space.degree(i) != space.degree(j) {
                    continue;
                }
                let v = if j == 0 {
                    if i == 0 { qi(1) } else { qi(0) }
                } else if i == j {
                    qi(rng.gen_range(1..=2))
                } else if rng.gen_bool(0.5) {
                    qi(rng.gen_range(-2..=2))
                } else {
                    qi(0)
                };
                p[(i, j)] = v;
            }
        }
        if let Some(inv) = p.inverse() {
            return (p, inv);
        }
    }
}

fn column(m: &Matrix, j: usize) -> Vector<Q> {
    let mut v = Vector::new();
    for i in 0..m.rows() {
        if !m[(i, j)].is_zero() {
            v.insert(i, m[(i, j)].clone());
        }
    }
    v
}

/// `m'(e'_…) = P⁻¹ m(P e'_…)`.
pub fn transform(m: &MultilinearMap<Q>, p: &Matrix, pinv: &Matrix) -> MultilinearMap<Q> {
    let n = p.rows();
    let mut out = MultilinearMap::zero(m.arity(), m.degree());
    for tuple in basis_tuples(n, m.arity()) {
        let args: Vec<Vector<Q>> = tuple.iter().map(|&j| column(p, j)).collect();
        let val = m.evaluate(&args).unwrap();
        for i in 0..n {
            let c: Q = val.iter().map(|(k, x)| &pinv[(i, *k)] * x).sum();
            out.add_entry(tuple.clone(), i, c);
        }
    }
    out
}

/// Random homogeneous map with roughly `density` of the tuples populated.
pub fn random_map(
    input: &GradedSpace,
    output: &GradedSpace,
    arity: usize,
    degree: i32,
    density: f64,
    rng: &mut StdRng,
) -> MultilinearMap<Q> {
    let mut m = MultilinearMap::zero(arity, degree);
    let mode = output.mode();
    for tuple in basis_tuples(input.dim(), arity) {
        if !rng.gen_bool(density) {
            continue;
        }
        let target =
            mode.reduce(tuple.iter().map(|&b| input.shifted_degree(b)).sum::<i32>() + degree);
        let outs: Vec<usize> =
            (0..output.dim()).filter(|&o| output.shifted_degree(o) == target).collect();
        if outs.is_empty() {
            continue;
        }
        let o = outs[rng.gen_range(0..outs.len())];
        m.add_entry(tuple, o, small_q(rng));
    }
    m
}

/// Base DGA conjugated by a random basis change, optionally with curvature
/// `c·1` at the smallest positive energy (only in the ℤ/2 setting).
pub fn random_dga_structure(
    mode: Grading,
    monoid: &EnergyMonoid,
    cutoff: &Q,
    curvature: bool,
    rng: &mut StdRng,
) -> AInfStructure {
    let (space, d, prod) = base_dga(mode);
    let base = AInfStructure::from_dga(space.clone(), &d, &prod, monoid.clone(), cutoff.clone())
        .unwrap();
    let (p, pinv) = random_basis_change(&space, rng);
    let mut a = AInfStructure::new(space.clone(), monoid.clone(), cutoff.clone(), None);
    for ((k, b), m) in base.ops.iter() {
        a.set_op(*k, b.clone(), transform(m, &p, &pinv)).unwrap();
    }
    a.unit = Some(0);
    if curvature && mode == Grading::Z2 {
        let e = monoid.generators()[0].clone();
        if &e <= cutoff {
            let mut m0 = MultilinearMap::zero(0, 1);
            m0.add_entry(vec![], 0, small_q(rng));
            a.set_op(0, e, m0).unwrap();
        }
    }
    a
}

/// Random positive morphism `F` with `F_{1,0} = id` and random components
/// `F_{k,β}` for `1 ≤ k ≤ max_arity`, `β > 0`. Components vanish whenever an
/// input is `e_0`, so a strict unit `e_0` is preserved.
pub fn random_positive_morphism(
    space: &GradedSpace,
    monoid: &EnergyMonoid,
    cutoff: &Q,
    max_arity: usize,
    density: f64,
    rng: &mut StdRng,
) -> AInfMorphism {
    let mut f = AInfMorphism::identity(space, monoid, cutoff);
    for b in monoid.enumerate(cutoff).into_iter().filter(|b| !b.is_zero()) {
        for k in 1..=max_arity {
            let raw = random_map(space, space, k, 0, density, rng);
            let mut m = MultilinearMap::zero(k, 0);
            for (inp, v) in raw.entries() {
                if !inp.contains(&0) {
                    for (o, c) in v {
                        m.add_entry(inp.clone(), *o, c.clone());
                    }
                }
            }
            f.set_comp(k, b.clone(), m).unwrap();
        }
    }
    f
}

/// The structure `B` making `F: A → B` a morphism, solved energy by energy
/// from the morphism equation, up to arity `cap`.
pub fn transport(a: &AInfStructure, f: &AInfMorphism, cap: usize) -> AInfStructure {
    let energies = a.energies();
    let mut b = AInfStructure::new(a.space.clone(), a.monoid.clone(), a.cutoff.clone(), Some(cap));
    // F is the identity at energy zero, so the energy-zero part is A's
    b.ops.mark_complete(Q::zero());
    b.unit = a.unit;
    for beta in &energies {
        for n in 0..=cap {
            let fl = |k: usize, e: &Q| f.comp(k, e);
            let ma = |k: usize, e: &Q| a.op(k, e);
            let mb = |k: usize, e: &Q| {
                if k == n && e == beta { Lookup::Zero } else { b.op(k, e) }
            };
            let lhs = tensor_sum(n, beta, &energies, &mb, &fl, &a.space).unwrap().unwrap();
            let rhs = insertion_sum(n, beta, &energies, &fl, &ma, &a.space).unwrap().unwrap();
            let m = rhs.minus(&lhs).with_degree(1);
            b.set_op(n, beta.clone(), m).unwrap();
        }
    }
    b
}

/// Random deformation retraction of `(V, D)` where `D = m_{1,0}`.
pub fn random_retraction(
    space: &GradedSpace,
    d: &MultilinearMap<Q>,
    rng: &mut StdRng,
) -> Retraction {
    let n = space.dim();
    let mut dm = Matrix::zeros(n, n);
    for (inp, v) in d.entries() {
        for (o, c) in v {
            dm[(*o, inp[0])] = c.clone();
        }
    }
    let mut degrees: Vec<i32> = (0..n).map(|i| space.degree(i)).collect();
    degrees.sort();
    degrees.dedup();
    // cocycle representatives per degree
    let mut reps: Vec<(i32, Vec<Q>)> = Vec::new();
    let boundaries: Vec<Vec<Q>> = (0..n).map(|j| dm.col(j)).filter(|c| c.iter().any(|x| !x.is_zero())).collect();
    for &deg in &degrees {
        let idx: Vec<usize> = (0..n).filter(|&i| space.degree(i) == deg).collect();
        // kernel of D restricted to this degree
        let sub = Matrix::from_cols(n, &idx.iter().map(|&j| dm.col(j)).collect::<Vec<_>>());
        let kernel: Vec<Vec<Q>> = sub
            .nullspace()
            .into_iter()
            .map(|v| {
                let mut full = vec![Q::zero(); n];
                for (t, &j) in idx.iter().enumerate() {
                    full[j] = v[t].clone();
                }
                full
            })
            .collect();
        let bdry: Vec<Vec<Q>> = boundaries
            .iter()
            .filter(|c| c.iter().enumerate().all(|(i, x)| x.is_zero() || space.degree(i) == deg))
            .cloned()
            .collect();
        let mut span: Vec<Vec<Q>> = Vec::new();
        for b in bdry {
            let mut trial = span.clone();
            trial.push(b);
            if Matrix::from_cols(n, &trial).rank() == trial.len() {
                span = trial;
            }
        }
        let target = kernel.len() - span.len();
        let mut chosen = 0;
        let mut guard = 0;
        while chosen < target && guard < 200 {
            guard += 1;
            let mut v = vec![Q::zero(); n];
            for k in &kernel {
                let c = qi(rng.gen_range(-2..=2));
                for i in 0..n {
                    v[i] += &c * &k[i];
                }
            }
            let mut trial = span.clone();
            trial.push(v.clone());
            if Matrix::from_cols(n, &trial).rank() == trial.len() {
                span = trial;
                reps.push((deg, v));
                chosen += 1;
            }
        }
        assert_eq!(chosen, target, "could not find cohomology representatives");
    }
    let hdim = reps.len();
    let hs = GradedSpace::new(
        (0..hdim).map(|a| format!("h{a}")).collect(),
        reps.iter().map(|(d, _)| *d).collect(),
        space.mode(),
    )
    .unwrap();
    let mut i_map = MultilinearMap::zero(1, 0);
    for (a, (_, v)) in reps.iter().enumerate() {
        for (k, c) in v.iter().enumerate() {
            i_map.add_entry(vec![a], k, c.clone());
        }
    }
    // p: basis adapted to V = B ⊕ i(H) ⊕ C
    let mut adapted: Vec<Vec<Q>> = Vec::new();
    let mut kinds: Vec<Option<usize>> = Vec::new(); // Some(a) for rep a, None for boundary
    for b in &boundaries {
        let mut trial = adapted.clone();
        trial.push(b.clone());
        if Matrix::from_cols(n, &trial).rank() == trial.len() {
            adapted = trial;
            kinds.push(None);
        }
    }
    for (a, (_, v)) in reps.iter().enumerate() {
        adapted.push(v.clone());
        kinds.push(Some(a));
    }
    let mut complement_degs = Vec::new();
    for j in 0..n {
        let mut e = vec![Q::zero(); n];
        e[j] = qi(1);
        let mut trial = adapted.clone();
        trial.push(e.clone());
        if Matrix::from_cols(n, &trial).rank() == trial.len() {
            adapted = trial;
            kinds.push(None);
            complement_degs.push((adapted.len() - 1, space.degree(j)));
        }
    }
    assert_eq!(adapted.len(), n);
    // values of p on the adapted basis (as H-coordinates)
    let mut pvals = Matrix::zeros(hdim, n);
    for (col, kind) in kinds.iter().enumerate() {
        if let Some(a) = kind {
            pvals[(*a, col)] = qi(1);
        }
    }
    for (col, deg) in complement_degs {
        for a in 0..hdim {
            if reps[a].0 == deg && rng.gen_bool(0.5) {
                pvals[(a, col)] = qi(rng.gen_range(-2..=2));
            }
        }
    }
    let basis_m = Matrix::from_cols(n, &adapted);
    let pm = pvals.mul(&basis_m.inverse().unwrap());
    let mut p_map = MultilinearMap::zero(1, 0);
    for a in 0..hdim {
        for j in 0..n {
            p_map.add_entry(vec![j], a, pm[(a, j)].clone());
        }
    }
    // h: solve Dh + hD = id − ip over homogeneous unknowns
    let ip = Matrix::from_rows((0..n).map(|r| (0..n).map(|c| {
        (0..hdim).map(|a| i_map.coeff(&[a], r) * p_map.coeff(&[c], a)).sum()
    }).collect()).collect());
    let target = Matrix::identity(n).sub(&ip);
    let mode = space.mode();
    let unknowns: Vec<(usize, usize)> = (0..n)
        .flat_map(|r| (0..n).map(move |c| (r, c)))
        .filter(|&(r, c)| mode.reduce(space.degree(r) - space.degree(c) + 1) == 0)
        .collect();
    let mut sys = Matrix::zeros(n * n, unknowns.len());
    for (u, &(r, c)) in unknowns.iter().enumerate() {
        // contribution of h[r][c] to (D h)[i][c] = D[i][r] and (h D)[r][j] = D[c][j]
        for i in 0..n {
            if !dm[(i, r)].is_zero() {
                sys[(i * n + c, u)] += dm[(i, r)].clone();
            }
        }
        for j in 0..n {
            if !dm[(c, j)].is_zero() {
                sys[(r * n + j, u)] += dm[(c, j)].clone();
            }
        }
    }
    let rhs: Vec<Q> = (0..n * n).map(|k| target[(k / n, k % n)].clone()).collect();
    let mut sol = sys.solve(&rhs).expect("homotopy exists");
    for nv in sys.nullspace() {
        if rng.gen_bool(0.5) {
            let c = qi(rng.gen_range(-1..=1));
            for (x, y) in sol.iter_mut().zip(&nv) {
                *x += &c * y;
            }
        }
    }
    let mut h_map = MultilinearMap::zero(1, -1);
    for (u, &(r, c)) in unknowns.iter().enumerate() {
        h_map.add_entry(vec![c], r, sol[u].clone());
    }
    Retraction { ambient: space.clone(), cohomology: hs, i: i_map, p: p_map, h: h_map }
}

/// Three charts of the flat plane: `P0 = [0,2]²`, `P1 = [1,3]×[0,2]`,
/// `P2 = [1,3]×[1,3]`, seen through unimodular chart maps. The triple overlap
/// is `[1,2]²`.
pub fn three_charts(cutoff: Q) -> Atlas {
    let b = |lo: [i64; 2], hi: [i64; 2]| {
        RationalDomain::boxed(&[qi(lo[0]), qi(lo[1])], &[qi(hi[0]), qi(hi[1])]).unwrap()
    };
    Atlas::from_patches(
        vec![
            (b([0, 0], [2, 2]), vec![vec![1, 0], vec![0, 1]], vec![qi(0), qi(0)]),
            (b([1, 0], [3, 2]), vec![vec![1, 0], vec![1, 1]], vec![qi(-2), qi(0)]),
            (b([1, 1], [3, 3]), vec![vec![1, 1], vec![0, 1]], vec![qi(-1), q(-3, 2)]),
        ],
        cutoff,
        true,
    )
    .unwrap()
}

/// `three_charts` with one wall class `∂α = (0,1)` (chart-0 coordinates)
/// crossing from chart 0 into chart 1 and chart 2, with correction `c`.
/// The (0,2) datum is the composite of (0,1) and the wall-free (1,2), and the
/// overlaps back into chart 0 are synthesized inverses. In chart 0,
/// `Z_α = T^{1/2} z₂`, of weight `1/2` on `U_01`.
pub fn one_wall_charts(cutoff: Q, c: [Q; 2]) -> Atlas {
    let mut atlas = three_charts(cutoff);
    for j in [1, 2] {
        let p = atlas.overlap(0, j).unwrap().point_from.clone();
        // area 3/2 on the fiber over (·, 1), shifted to this overlap's point
        let area = q(3, 2) + (&p[1] - qi(1));
        let alpha = DiskClass::new(vec![0, 1], area, c.to_vec()).unwrap();
        atlas.set_walls(0, j, vec![alpha]).unwrap();
        atlas.synthesize_inverse(0, j).unwrap();
    }
    atlas
}

/// Random rational point of a polytope: a random convex combination of its
/// vertices.
pub fn random_point(dom: &RationalDomain, rng: &mut StdRng) -> Vec<Q> {
    let w: Vec<Q> = dom.vertices().iter().map(|_| qi(rng.gen_range(0..=6))).collect();
    let total: Q = w.iter().sum();
    let w: Vec<Q> = if total.is_zero() { vec![qi(1); w.len()] } else { w };
    let total: Q = w.iter().sum();
    (0..dom.dim())
        .map(|k| dom.vertices().iter().zip(&w).map(|(v, a)| &v[k] * a).sum::<Q>() / &total)
        .collect()
}
