mod common;

use ainf_core::ainf::{check_morphism, Lookup, OpFamily};
use ainf_core::graded::{GradedSpace, Grading, MultilinearMap};
use ainf_core::isotopy::{
    canonical_isotopy, check_derivative_law, check_integrated, check_isotopy, gauge_flow, integrate,
    PseudoIsotopy,
};
use ainf_core::novikov::EnergyMonoid;
use ainf_core::poly::Poly;
use ainf_core::ring::{q, qi, Coeff, Q};
use num_traits::Zero;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn random_h(space: &GradedSpace, monoid: &EnergyMonoid, cutoff: &Q, rng: &mut StdRng) -> OpFamily<Poly> {
    let mut h = OpFamily::new(None);
    for b in monoid.enumerate(cutoff).into_iter().filter(|b| !b.is_zero()) {
        for k in 0..=2 {
            let raw = common::random_map(space, space, k, 0, 0.3, rng);
            let slope = common::small_q(rng);
            let m = raw.map_coeffs(|c| Poly::new(vec![c.clone(), &slope * c]));
            h.insert(k, b.clone(), m);
        }
    }
    h
}

fn random_isotopy(seed: u64) -> PseudoIsotopy {
    let monoid = EnergyMonoid::new(vec![qi(1)]).unwrap();
    let cutoff = qi(2);
    let mut rng = StdRng::seed_from_u64(seed);
    let mode = if seed % 2 == 0 { Grading::Z2 } else { Grading::Z };
    let a = common::random_dga_structure(mode, &monoid, &cutoff, seed % 4 == 0, &mut rng);
    let h = random_h(&a.space, &monoid, &cutoff, &mut rng);
    gauge_flow(&a, h, 5).unwrap()
}

#[test]
fn gauge_flows_are_isotopies() {
    for seed in 0..6u64 {
        let g = random_isotopy(seed);
        let rep = check_isotopy(&g).unwrap();
        assert!(rep.passed(), "seed {seed}: {:?}", rep.pieces[0].flow.minimal_failure());
        assert!(check_isotopy(&g.reverse()).unwrap().passed(), "seed {seed}: reverse");
        let c = g.concat(&g.reverse()).unwrap();
        assert!(check_isotopy(&c).unwrap().passed(), "seed {seed}: concat");
    }
}

#[test]
fn integrated_morphisms_are_morphisms_for_symbolic_t() {
    for seed in 10..14u64 {
        let g = random_isotopy(seed);
        let f = integrate(&g, 3).unwrap();
        assert_eq!(f.arity_cap(), Some(3), "seed {seed}");
        for r in check_integrated(&g, &f).unwrap() {
            assert!(r.passed(), "seed {seed}: {:?}", r.minimal_failure());
            assert!(!r.checked.is_empty());
        }
        for r in check_derivative_law(&g, &f).unwrap() {
            assert!(r.passed(), "seed {seed}: derivative law {:?}", r.minimal_failure());
        }
        for k in 0..=3 {
            let expected = if k == 1 { Some(MultilinearMap::<Poly>::identity(g.space.dim())) } else { None };
            match (f.pieces[0].get(k, &Q::zero()), expected) {
                (Lookup::Zero, None) => {}
                (Lookup::Known(m), Some(e)) => assert_eq!(m.entries().collect::<Vec<_>>(), e.entries().collect::<Vec<_>>()),
                _ => panic!("seed {seed}: F_{{{k},0}} is not the identity part"),
            }
        }
        let t = q(2, 3);
        let ft = f.at(&t).unwrap();
        let a0 = g.structure_at(&qi(0)).unwrap();
        let at = g.structure_at(&t).unwrap();
        assert!(check_morphism(&ft, &a0, &at).unwrap().passed(), "seed {seed}: numeric t");
    }
}

#[test]
fn canonical_isotopies_pass() {
    for seed in 20..24u64 {
        let g = random_isotopy(seed);
        let d = match g.pieces[0].m.get(1, &Q::zero()) {
            Lookup::Known(d) => d.map_coeffs(|c| c.eval(&Q::zero())),
            _ => unreachable!(),
        };
        let mut rng = StdRng::seed_from_u64(seed);
        let r = common::random_retraction(&g.space, &d, &mut rng);
        let c = canonical_isotopy(&g, &r, 3).unwrap();
        let rep = check_isotopy(&c).unwrap();
        assert!(rep.passed(), "seed {seed}: {:?} / {:?}", rep.pieces[0].relations.minimal_failure(), rep.pieces[0].flow.minimal_failure());
        assert!(!rep.pieces[0].flow.checked.is_empty());
    }
}

#[test]
fn corrupted_h_breaks_the_flow() {
    for seed in 30..34u64 {
        let mut g = random_isotopy(seed);
        let mut rng = StdRng::seed_from_u64(seed);
        let k = rng.gen_range(1..=2usize);
        let mut bad = MultilinearMap::zero(k, 0);
        let raw = common::random_map(&g.space, &g.space, k, 0, 1.0, &mut rng);
        let (inp, out) = raw.entries().next().map(|(i, v)| (i.clone(), *v.keys().next().unwrap())).unwrap();
        bad.add_entry(inp, out, Poly::t().plus(&Poly::constant(qi(1))));
        g.pieces[0].h.add_to(k, qi(1), &bad);
        let rep = check_isotopy(&g).unwrap();
        assert!(!rep.passed(), "seed {seed}");
    }
}
