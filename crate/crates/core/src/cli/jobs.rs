//! One runner per job kind. A runner returns the verdict, residual
//! summaries, machine-readable details and a verbose trace for `explain`.

use num_traits::{One, Signed, Zero};
use serde_json::{json, Map, Value};

use super::report::ResidualSummary;
use super::session::{qs, Context, JobKind, SessionError};
use crate::ainf::{
    canonical_model, check_ainf, check_gapped, check_morphism, compose_morphisms, residual_entries, AInfMorphism,
    Lookup, OpFamily, RelationReport,
};
use crate::graded::{GradedSpace, MultilinearMap};
use crate::isotopy::{check_derivative_law, check_integrated, check_isotopy, integrate};
use crate::mc::{check_gauge, exp_point, is_zero_vector, mc_defect, potential, pushforward, NovVector};
use crate::mirror::{verify_gluing, Atlas, DiskClass, SeriesResidual, Substitution, TateSeries, WallMode};
use crate::novikov::{Nov, NovRepr};
use crate::ring::{q_to_string, Coeff, RatRepr, Q};
use crate::trees::{Tree, TreeEnumerator};

pub struct Outcome {
    pub passed: bool,
    pub residuals: Vec<ResidualSummary>,
    pub details: Map<String, Value>,
    pub trace: Vec<String>,
}

impl Outcome {
    fn new(passed: bool) -> Self {
        Outcome { passed, residuals: Vec::new(), details: Map::new(), trace: Vec::new() }
    }

    fn detail(&mut self, key: &str, v: Value) {
        self.details.insert(key.to_string(), v);
    }
}

pub fn run_job(ctx: &Context, kind: &JobKind) -> Result<Outcome, SessionError> {
    match kind {
        JobKind::CheckAinf { structure } => check_ainf_job(ctx, structure),
        JobKind::CanonicalModel { structure, retraction, max_arity } => {
            canonical_job(ctx, structure, retraction, *max_arity)
        }
        JobKind::CheckIsotopy { isotopy } => check_isotopy_job(ctx, isotopy),
        JobKind::Integrate { isotopy, max_arity } => integrate_job(ctx, isotopy, *max_arity),
        JobKind::Compose { first, second, source, middle, target } => {
            compose_job(ctx, first, second, source.as_deref(), middle.as_deref(), target.as_deref())
        }
        JobKind::McDefect { structure, element } => mc_defect_job(ctx, structure, element),
        JobKind::Potential { torus, point, element, max_arity } => {
            potential_job(ctx, torus, point.as_deref(), element.as_deref(), *max_arity)
        }
        JobKind::Pushforward { morphism, element, source, target } => {
            pushforward_job(ctx, morphism, element, source.as_deref(), target.as_deref())
        }
        JobKind::CheckGauge { structure, witness } => check_gauge_job(ctx, structure, witness),
        JobKind::Transition { atlas, from, to, point } => transition_job(ctx, atlas, *from, *to, point.as_deref()),
        JobKind::VerifyGluing { atlas, triple, point, second_point } => {
            gluing_job(ctx, atlas, *triple, point.as_deref(), second_point.as_deref())
        }
        JobKind::EnumerateTrees { arity, energy, pointed } => trees_job(ctx, *arity, &energy.0, *pointed),
    }
}

fn key(k: usize, b: &Q) -> String {
    format!("({k}, {})", q_to_string(b))
}

fn relation_residuals(label: &str, r: &RelationReport) -> Vec<ResidualSummary> {
    r.failures
        .iter()
        .map(|f| {
            let term = f
                .residuals
                .first()
                .map(|x| format!("({}) -> {}: {}", x.inputs.join(", "), x.output, x.value))
                .unwrap_or_default();
            ResidualSummary::new(format!("{label} {}", key(f.arity, &f.energy)), Some(f.energy.clone()), term)
        })
        .collect()
}

fn relation_details(r: &RelationReport) -> Value {
    json!({
        "checked": r.checked.len(),
        "undetermined": r.undetermined.iter().map(|(k, b)| key(*k, b)).collect::<Vec<_>>(),
        "failures": r.failures.len(),
    })
}

fn relation_trace(label: &str, r: &RelationReport, trace: &mut Vec<String>) {
    for (k, b) in &r.checked {
        let bad = r.failures.iter().find(|f| f.arity == *k && &f.energy == b);
        trace.push(format!("{label} {}: {}", key(*k, b), if bad.is_some() { "fails" } else { "holds" }));
        for x in bad.map(|f| f.residuals.as_slice()).unwrap_or_default() {
            trace.push(format!("    ({}) -> {}: {}", x.inputs.join(", "), x.output, x.value));
        }
    }
    for (k, b) in &r.undetermined {
        trace.push(format!("{label} {}: undetermined", key(*k, b)));
    }
}

fn family_lines<R: Coeff>(name: &str, f: &OpFamily<R>, input: &GradedSpace, output: &GradedSpace) -> Vec<String> {
    let mut out = Vec::new();
    for ((k, b), m) in f.iter() {
        for x in residual_entries(m, input, output) {
            out.push(format!("{name}_{{{k},{}}}({}) -> {}: {}", q_to_string(b), x.inputs.join(", "), x.output, x.value));
        }
    }
    out
}

fn check_ainf_job(ctx: &Context, name: &str) -> Result<Outcome, SessionError> {
    let a = ctx.structure(name)?;
    let rel = check_ainf(&a)?;
    let gapped = check_gapped(&a)?;
    let mut o = Outcome::new(rel.passed() && gapped.passed());
    o.residuals = relation_residuals("relation", &rel);
    o.residuals.extend(gapped.violations.iter().map(|v| ResidualSummary::new("energy-zero shape", None, v.clone())));
    o.detail("relations", relation_details(&rel));
    o.detail("shape", json!(gapped.violations));
    relation_trace("relation", &rel, &mut o.trace);
    Ok(o)
}

fn tree_lines(en: &mut TreeEnumerator, k: usize, b: &Q, volumes: bool) -> Result<Vec<String>, SessionError> {
    let trees = en.trees(k, b).map_err(|e| SessionError::Invalid(e.to_string()))?;
    Ok(trees
        .iter()
        .map(|t| if volumes { format!("{t}  vol {}", q_to_string(&volume(t))) } else { t.to_string() })
        .collect())
}

/// Volume of `ℳ¹(T)`: interior vertex times ordered along the tree, which
/// by the hook length formula is `Π_v 1/|subtree(v)|`.
pub fn volume(t: &Tree) -> Q {
    fn walk(t: &Tree, acc: &mut Q) -> usize {
        match t {
            Tree::Leaf => 0,
            Tree::Node { children, .. } => {
                let size = 1 + children.iter().map(|c| walk(c, acc)).sum::<usize>();
                *acc /= Q::from_integer(size.into());
                size
            }
        }
    }
    let mut v = Q::one();
    walk(t, &mut v);
    v
}

fn canonical_job(ctx: &Context, structure: &str, retraction: &str, max_arity: usize) -> Result<Outcome, SessionError> {
    let a = ctx.structure(structure)?;
    let r = ctx.retraction(retraction)?;
    let zero = Q::zero();
    let d = a.op_or_zero(1, &zero)?.cloned().unwrap_or_else(|| MultilinearMap::zero(1, 1));
    r.check(&d)?;
    let can = canonical_model(&a, &r, max_arity)?;
    let rel = check_ainf(&can)?;
    let minimal = can.op_or_zero(1, &zero)?.map_or(true, |m| m.is_zero());
    let mut o = Outcome::new(rel.passed() && minimal);
    o.residuals = relation_residuals("canonical relation", &rel);
    if !minimal {
        o.residuals.push(ResidualSummary::new("m_{1,0}", Some(zero.clone()), "canonical differential is nonzero"));
    }
    o.detail("relations", relation_details(&rel));
    o.detail("minimal", json!(minimal));
    o.detail("arity_cap", json!(can.arity_cap()));
    o.detail("operations", json!(family_lines("m", &can.ops, &can.space, &can.space)));
    let keep = |ar: usize, e: &Q| !matches!(a.op(ar, e), Lookup::Zero);
    let mut en = TreeEnumerator::with_filter(&a.monoid, &a.cutoff, &keep);
    let energies = en.energies().to_vec();
    for k in 0..=max_arity {
        for b in &energies {
            if k == 1 && b.is_zero() {
                continue;
            }
            let lines = tree_lines(&mut en, k, b, false)?;
            if lines.is_empty() {
                continue;
            }
            o.trace.push(format!("m^can {}: {} tree(s)", key(k, b), lines.len()));
            o.trace.extend(lines.into_iter().map(|l| format!("    {l}")));
        }
    }
    relation_trace("canonical relation", &rel, &mut o.trace);
    Ok(o)
}

fn check_isotopy_job(ctx: &Context, name: &str) -> Result<Outcome, SessionError> {
    let g = ctx.isotopy(name)?;
    let rep = check_isotopy(&g)?;
    let mut o = Outcome::new(rep.passed());
    for (j, p) in rep.pieces.iter().enumerate() {
        o.residuals.extend(relation_residuals(&format!("piece {j} relation"), &p.relations));
        o.residuals.extend(relation_residuals(&format!("piece {j} flow"), &p.flow));
        relation_trace(&format!("piece {j} relation"), &p.relations, &mut o.trace);
        relation_trace(&format!("piece {j} flow"), &p.flow, &mut o.trace);
    }
    o.residuals.extend(rep.shape.iter().map(|s| ResidualSummary::new("shape", None, s.clone())));
    o.detail(
        "pieces",
        Value::Array(
            rep.pieces
                .iter()
                .map(|p| json!({"relations": relation_details(&p.relations), "flow": relation_details(&p.flow)}))
                .collect(),
        ),
    );
    o.detail("undetermined", json!(rep.undetermined()));
    o.detail("shape", json!(rep.shape));
    Ok(o)
}

fn integrate_job(ctx: &Context, name: &str, max_arity: usize) -> Result<Outcome, SessionError> {
    let g = ctx.isotopy(name)?;
    let f = integrate(&g, max_arity)?;
    let morph = check_integrated(&g, &f)?;
    let deriv = check_derivative_law(&g, &f)?;
    let mut o = Outcome::new(morph.iter().chain(&deriv).all(|r| r.passed()));
    for (j, r) in morph.iter().enumerate() {
        o.residuals.extend(relation_residuals(&format!("piece {j} morphism"), r));
        relation_trace(&format!("piece {j} morphism"), r, &mut o.trace);
    }
    for (j, r) in deriv.iter().enumerate() {
        o.residuals.extend(relation_residuals(&format!("piece {j} derivative"), r));
        relation_trace(&format!("piece {j} derivative"), r, &mut o.trace);
    }
    o.detail("morphism", Value::Array(morph.iter().map(relation_details).collect()));
    o.detail("derivative", Value::Array(deriv.iter().map(relation_details).collect()));
    o.detail("arity_cap", json!(f.arity_cap()));
    let comps: Vec<String> = f.pieces.iter().flat_map(|p| family_lines("F", p, &f.space, &f.space)).collect();
    o.detail("components", json!(comps));

    let vanishes = |ar: usize, e: &Q| g.pieces.iter().all(|p| matches!(p.h.get(ar, e), Lookup::Zero));
    let keep = |ar: usize, e: &Q| !vanishes(ar, e);
    let mut en = TreeEnumerator::with_filter(&g.monoid, &g.cutoff, &keep);
    let energies = en.energies().to_vec();
    let cap = f.arity_cap().unwrap_or(max_arity).min(max_arity);
    let mut trace = Vec::new();
    for k in 0..=cap {
        for b in &energies {
            let lines = tree_lines(&mut en, k, b, true)?;
            if lines.is_empty() {
                continue;
            }
            trace.push(format!("F {}: {} tree(s)", key(k, b), lines.len()));
            trace.extend(lines.into_iter().map(|l| format!("    {l}")));
        }
    }
    trace.append(&mut o.trace);
    o.trace = trace;
    Ok(o)
}

fn compose_job(
    ctx: &Context,
    first: &str,
    second: &str,
    source: Option<&str>,
    middle: Option<&str>,
    target: Option<&str>,
) -> Result<Outcome, SessionError> {
    let f = ctx.morphism(first)?;
    let g = ctx.morphism(second)?;
    let gf = compose_morphisms(&g, &f)?;
    let mut o = Outcome::new(true);
    if let Err(e) = gf.check_positive() {
        o.passed = false;
        o.residuals.push(ResidualSummary::new("positivity", Some(Q::zero()), e.to_string()));
    }
    match (source, middle, target) {
        (Some(s), Some(m), Some(t)) => {
            let (s, m, t) = (ctx.structure(s)?, ctx.structure(m)?, ctx.structure(t)?);
            for (label, h, a, b) in [("first", &f, &s, &m), ("second", &g, &m, &t), ("composite", &gf, &s, &t)] {
                let r = check_morphism(h, a, b)?;
                o.passed &= r.passed();
                o.residuals.extend(relation_residuals(label, &r));
                o.detail(label, relation_details(&r));
                relation_trace(label, &r, &mut o.trace);
            }
        }
        (None, None, None) => {}
        _ => return Err(SessionError::Invalid("name all of source, middle and target, or none".into())),
    }
    let lines = family_lines("F", &gf.comps, &gf.source_space, &gf.target_space);
    o.detail("components", json!(lines));
    Ok(o)
}

fn nov_vector_lines(v: &NovVector, space: &GradedSpace) -> Vec<String> {
    v.iter().filter(|(_, c)| !c.is_zero()).map(|(i, c)| format!("{}: {c}", space.name(*i))).collect()
}

fn nov_vector_json(v: &NovVector, space: &GradedSpace) -> Value {
    let m: Map<String, Value> = v
        .iter()
        .filter(|(_, c)| !c.is_zero())
        .map(|(i, c)| (space.name(*i).to_string(), serde_json::to_value(c.to_quads()).expect("serializable")))
        .collect();
    Value::Object(m)
}

fn vector_residuals(label: &str, v: &NovVector, space: &GradedSpace) -> Vec<ResidualSummary> {
    v.iter()
        .filter(|(_, c)| !c.is_zero())
        .map(|(i, c)| ResidualSummary::new(format!("{label} {}", space.name(*i)), c.val().finite().cloned(), c.to_string()))
        .collect()
}

fn mc_defect_job(ctx: &Context, structure: &str, element: &str) -> Result<Outcome, SessionError> {
    let a = ctx.structure(structure)?;
    let b = ctx.element(element)?;
    let d = mc_defect(&a, &b)?;
    let mut o = Outcome::new(is_zero_vector(&d));
    o.residuals = vector_residuals("defect", &d, &a.space);
    o.detail("defect", nov_vector_json(&d, &a.space));
    o.trace = nov_vector_lines(&d, &a.space);
    Ok(o)
}

fn potential_job(
    ctx: &Context,
    torus: &str,
    point: Option<&[NovRepr]>,
    element: Option<&str>,
    max_arity: usize,
) -> Result<Outcome, SessionError> {
    let t = ctx.torus(torus)?;
    let mut o = Outcome::new(true);
    let (z, b) = match (point, element) {
        (Some(p), None) => (p.iter().map(|x| Nov::from(x).truncate(&ctx.cutoff)).collect::<Vec<_>>(), None),
        (None, Some(e)) => {
            let b = ctx.element(e)?;
            (exp_point(&t, &b)?, Some(b))
        }
        _ => return Err(SessionError::Invalid("give exactly one of point and element".into())),
    };
    let w = potential(&t, &z)?;
    if let Some(b) = b {
        let a = t.structure(max_arity)?;
        let d = mc_defect(&a, &b)?;
        let zero = Nov::default();
        let keys: std::collections::BTreeSet<usize> = w.keys().chain(d.keys()).copied().collect();
        for i in keys {
            let (x, y) = (w.get(&i).unwrap_or(&zero), d.get(&i).unwrap_or(&zero));
            if !x.eq_mod(y, &ctx.cutoff) {
                o.passed = false;
                let diff = x.sub(y);
                o.residuals.push(ResidualSummary::new(
                    format!("W - defect at {}", t.space.name(i)),
                    diff.val().finite().cloned(),
                    diff.to_string(),
                ));
            }
        }
        o.detail("defect", nov_vector_json(&d, &t.space));
    }
    o.detail("point", Value::Array(z.iter().map(|x| serde_json::to_value(x.to_quads()).expect("serializable")).collect()));
    o.detail("potential", nov_vector_json(&w, &t.space));
    o.trace = nov_vector_lines(&w, &t.space);
    Ok(o)
}

fn pushforward_job(
    ctx: &Context,
    morphism: &str,
    element: &str,
    source: Option<&str>,
    target: Option<&str>,
) -> Result<Outcome, SessionError> {
    let f: AInfMorphism = ctx.morphism(morphism)?;
    let b = ctx.element(element)?;
    let pushed = pushforward(&f, &b)?;
    let mut o = Outcome::new(true);
    if let Some(s) = source {
        let a = ctx.structure(s)?;
        let d = mc_defect(&a, &b)?;
        o.passed &= is_zero_vector(&d);
        o.residuals.extend(vector_residuals("source defect", &d, &a.space));
    }
    if let Some(t) = target {
        let a = ctx.structure(t)?;
        let d = mc_defect(&a, &pushed)?;
        o.passed &= is_zero_vector(&d);
        o.residuals.extend(vector_residuals("target defect", &d, &a.space));
        o.detail("target_defect", nov_vector_json(&d, &a.space));
    }
    o.detail("pushforward", nov_vector_json(pushed.coeffs(), &f.target_space));
    o.trace = nov_vector_lines(pushed.coeffs(), &f.target_space);
    Ok(o)
}

fn check_gauge_job(ctx: &Context, structure: &str, witness: &str) -> Result<Outcome, SessionError> {
    let a = ctx.structure(structure)?;
    let w = ctx.gauge(witness)?;
    let rep = check_gauge(&a, &w)?;
    let mut o = Outcome::new(rep.passed());
    for (label, list) in [("defect", &rep.defect), ("flow", &rep.flow)] {
        for r in list {
            o.residuals.push(ResidualSummary::new(
                format!("{label} piece {} {}", r.piece, a.space.name(r.generator)),
                Some(r.energy.clone()),
                r.value.clone(),
            ));
        }
    }
    o.residuals.extend(rep.shape.iter().map(|s| ResidualSummary::new("shape", None, s.clone())));
    o.detail("leading_energy", json!(rep.leading_energy().map(RatRepr)));
    let (b0, b1) = w.endpoints(&a.space, &a.cutoff)?;
    o.detail("start", nov_vector_json(b0.coeffs(), &a.space));
    o.detail("end", nov_vector_json(b1.coeffs(), &a.space));
    o.trace = o.residuals.iter().map(|r| format!("{}: {}", r.label, r.term)).collect();
    Ok(o)
}

/// `c T^e z1^a z2^b` terms, joined by `+`.
fn render_terms<'a>(terms: impl Iterator<Item = (&'a Vec<i64>, &'a Nov)>) -> String {
    let mut parts = Vec::new();
    for (k, c) in terms {
        let mono: Vec<String> = k
            .iter()
            .enumerate()
            .filter(|(_, e)| **e != 0)
            .map(|(l, e)| if *e == 1 { format!("z{}", l + 1) } else { format!("z{}^{e}", l + 1) })
            .collect();
        for (e, x) in c.terms() {
            let mut t = q_to_string(&x.abs());
            if !e.is_zero() {
                t.push_str(&format!(" T^{}", q_to_string(e)));
            }
            for m in &mono {
                t.push(' ');
                t.push_str(m);
            }
            parts.push((x.is_negative(), t));
        }
    }
    let mut out = String::new();
    for (i, (neg, t)) in parts.iter().enumerate() {
        match (i, neg) {
            (0, true) => out.push('-'),
            (0, false) => {}
            (_, true) => out.push_str(" - "),
            (_, false) => out.push_str(" + "),
        }
        out.push_str(t);
    }
    if out.is_empty() {
        "0".into()
    } else {
        out
    }
}

pub fn render_series(s: &TateSeries) -> String {
    render_terms(s.terms().iter())
}

fn series_json(s: &TateSeries) -> Value {
    Value::Array(
        s.terms()
            .iter()
            .filter(|(_, c)| !c.is_zero())
            .map(|(k, c)| json!({"exponent": k, "coeff": c.to_quads()}))
            .collect(),
    )
}

fn point_string(p: &[Q]) -> String {
    format!("({})", p.iter().map(q_to_string).collect::<Vec<_>>().join(", "))
}

fn substitution_lines(psi: &Substitution, cutoff: &Q) -> Result<(Vec<String>, Value), SessionError> {
    let mut lines = Vec::new();
    let mut js = Vec::new();
    for (k, c) in psi.comps.iter().enumerate() {
        let s = c.series()?.truncate(cutoff);
        lines.push(format!("z{} -> {}", k + 1, render_series(&s)));
        js.push(series_json(&s));
    }
    Ok((lines, Value::Array(js)))
}

fn transition_job(ctx: &Context, atlas: &str, i: usize, j: usize, point: Option<&[RatRepr]>) -> Result<Outcome, SessionError> {
    let at = ctx.atlas(atlas)?;
    let p = match point {
        Some(p) => qs(p),
        None => at.overlap_domain(i, j)?.barycenter(),
    };
    let psi = at.transition(i, j, &p, &ctx.cutoff)?;
    let (lines, js) = substitution_lines(&psi, &ctx.cutoff)?;
    let mut o = Outcome::new(true);
    o.detail("mode", json!(mode_name(at.overlap(i, j)?.mode)));
    o.detail("point", json!(p.iter().cloned().map(RatRepr).collect::<Vec<_>>()));
    o.detail("image", json!(lines));
    o.detail("series", js);
    o.trace = lines;
    Ok(o)
}

fn mode_name(m: WallMode) -> &'static str {
    match m {
        WallMode::Supplied => "supplied",
        WallMode::Synthesized => "synthesized",
    }
}

fn gluing_residual(label: &str, r: &SeriesResidual) -> ResidualSummary {
    let term = match &r.leading_term {
        Some((k, c)) => render_terms(std::iter::once((k, c))),
        None => match &r.precision {
            Some(p) => format!("known only to weight {}", q_to_string(p)),
            None => "0".into(),
        },
    };
    ResidualSummary::new(format!("{label} z{}", r.generator + 1), r.leading.finite().cloned(), term)
}

/// `(Z_{β₁}·Z_{β₂})* = (Z_{β₁})*·(Z_{β₂})*` on a supplied overlap, for the
/// unit coordinate classes and the wall classes.
fn multiplicativity(at: &Atlas, i: usize, j: usize, e: &Q) -> Result<Vec<(String, bool)>, SessionError> {
    let ov = at.overlap(i, j)?;
    let mut classes = Vec::new();
    for k in 0..at.n {
        let mut b = vec![0; at.n];
        b[k] = 1;
        classes.push((format!("e{}", k + 1), DiskClass::plain(b, Q::one())?));
    }
    for (n, w) in ov.walls.iter().enumerate() {
        classes.push((format!("wall{}", n + 1), DiskClass::plain(w.boundary.clone(), w.area.clone())?));
    }
    let series = classes
        .iter()
        .map(|(_, c)| at.corrected_monomial(i, j, c, e))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::new();
    for a in 0..classes.len() {
        for b in a..classes.len() {
            let sum = classes[a].1.sum(&classes[b].1);
            let joint = at.corrected_monomial(i, j, &sum, e)?;
            let ok = series[a].mul(&series[b])?.eq_mod(&joint, e)?;
            out.push((format!("({},{}) {}*{}", i, j, classes[a].0, classes[b].0), ok));
        }
    }
    Ok(out)
}

fn gluing_job(
    ctx: &Context,
    atlas: &str,
    triple: (usize, usize, usize),
    point: Option<&[RatRepr]>,
    second: Option<&[RatRepr]>,
) -> Result<Outcome, SessionError> {
    let at = ctx.atlas(atlas)?;
    let e = &ctx.cutoff;
    let rep = verify_gluing(&at, triple, e, point.map(qs), second.map(qs))?;
    let mut o = Outcome::new(rep.passed());
    let mut checks = Map::new();
    for c in rep.inverse.iter().chain(&rep.image).chain(std::iter::once(&rep.cocycle)).chain(&rep.basepoint) {
        checks.insert(c.label.clone(), json!(c.passed));
        o.trace.push(format!("{}: {}", c.label, if c.passed { "holds" } else { "fails" }));
        for r in c.residuals.iter().filter(|r| !r.passes(e)) {
            let s = gluing_residual(&c.label, r);
            o.trace.push(format!("    {}: {}", s.label, s.term));
            o.residuals.push(s);
        }
    }
    let (a, b, c) = triple;
    let mut corrected = Map::new();
    let mut mult = Map::new();
    for (x, y) in [(a, b), (b, c), (a, c)] {
        for (s, t) in [(x, y), (y, x)] {
            let ov = at.overlap(s, t)?;
            let p = if s == a { rep.point.clone() } else { at.change_chart(a, s, &rep.point)? };
            let psi = at.transition(s, t, &p, e)?;
            let (lines, _) = substitution_lines(&psi, e)?;
            o.trace.push(format!("transition ({s},{t}) at {}:", point_string(&p)));
            o.trace.extend(lines.iter().map(|l| format!("    {l}")));
            corrected.insert(format!("({s},{t})"), json!(lines));
            if ov.mode == WallMode::Supplied && !ov.walls.is_empty() {
                for (label, ok) in multiplicativity(&at, s, t, e)? {
                    o.passed &= ok;
                    if !ok {
                        o.residuals.push(ResidualSummary::new(format!("multiplicativity {label}"), None, "products differ"));
                    }
                    o.trace.push(format!("multiplicativity {label}: {}", if ok { "holds" } else { "fails" }));
                    mult.insert(label, json!(ok));
                }
            }
        }
    }
    o.detail("checks", Value::Object(checks));
    o.detail("multiplicativity", Value::Object(mult));
    o.detail("corrected_monomials", Value::Object(corrected));
    o.detail(
        "modes",
        Value::Object(rep.modes.iter().map(|((s, t), m)| (format!("({s},{t})"), json!(mode_name(*m)))).collect()),
    );
    o.detail("point", json!(rep.point.iter().cloned().map(RatRepr).collect::<Vec<_>>()));
    o.detail("second_point", json!(rep.second_point.iter().cloned().map(RatRepr).collect::<Vec<_>>()));
    o.detail("working_cutoff", json!(RatRepr(rep.working_cutoff.clone())));
    Ok(o)
}

fn trees_job(ctx: &Context, k: usize, beta: &Q, pointed: bool) -> Result<Outcome, SessionError> {
    let mut en = TreeEnumerator::new(&ctx.monoid, &ctx.cutoff);
    let lines: Vec<String> = if pointed {
        en.pointed_trees(k, beta)
            .map_err(|e| SessionError::Invalid(e.to_string()))?
            .iter()
            .map(|p| format!("{} at v{}", p.tree, p.vertex))
            .collect()
    } else {
        tree_lines(&mut en, k, beta, false)?
    };
    let mut o = Outcome::new(true);
    o.detail("count", json!(lines.len()));
    o.trace = lines;
    Ok(o)
}
