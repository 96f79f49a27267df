//! Session files: named spaces, structures, morphisms, isotopies, elements,
//! torus models and chart atlases, plus a job list. Rationals are
//! `[numerator, denominator]` pairs; basis vectors are referred to by name.

use std::collections::BTreeMap;

use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ainf::{AInfMorphism, AInfStructure, OpFamily, Retraction};
use crate::graded::{GradedSpace, Grading, MultilinearMap};
use crate::isotopy::{gauge_flow, PseudoIsotopy};
use crate::mc::{GaugeWitness, MCElement, Series, SeriesVector, TorusModel};
use crate::mirror::{Atlas, DiskClass, IntMatrix, Overlap, RationalDomain, WallMode};
use crate::novikov::{EnergyMonoid, Nov, NovRepr};
use crate::poly::Poly;
use crate::ring::{q_to_string, RatRepr, Q};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("cannot read {0}: {1}")]
    Io(String, String),
    #[error("unresolved references: {}", .0.join("; "))]
    References(Vec<String>),
    #[error("duplicate job id {0}")]
    DuplicateJob(String),
    #[error("{0}")]
    Invalid(String),
}

impl SessionError {
    fn invalid(msg: impl Into<String>) -> Self {
        SessionError::Invalid(msg.into())
    }
}

macro_rules! from_err {
    ($($t:ty),*) => {$(
        impl From<$t> for SessionError {
            fn from(e: $t) -> Self {
                SessionError::Invalid(e.to_string())
            }
        }
    )*};
}
from_err!(
    crate::graded::GradedError,
    crate::ainf::AinfError,
    crate::isotopy::IsotopyError,
    crate::mc::McError,
    crate::mirror::MirrorError,
    crate::novikov::NovikovError
);

/// One coefficient of a multilinear map: `inputs ↦ coeff · output`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntrySpec {
    #[serde(default)]
    pub inputs: Vec<String>,
    pub output: String,
    pub coeff: RatRepr,
}

/// A multilinear map with constant coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub arity: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<i32>,
    #[serde(default)]
    pub entries: Vec<EntrySpec>,
}

/// One operation `(k, β)` of a family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpSpec {
    pub arity: usize,
    pub energy: RatRepr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<i32>,
    #[serde(default)]
    pub entries: Vec<EntrySpec>,
}

/// Entry whose coefficient is a polynomial in `t`, lowest degree first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyEntrySpec {
    #[serde(default)]
    pub inputs: Vec<String>,
    pub output: String,
    pub coeff: Vec<RatRepr>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyOpSpec {
    pub arity: usize,
    pub energy: RatRepr,
    #[serde(default)]
    pub entries: Vec<PolyEntrySpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StructureSpec {
    /// Operations listed one by one.
    Ops {
        space: String,
        #[serde(default)]
        arity_cap: Option<usize>,
        /// Energies at which every unlisted operation vanishes.
        #[serde(default)]
        complete: Vec<RatRepr>,
        #[serde(default)]
        unit: Option<String>,
        ops: Vec<OpSpec>,
    },
    /// A DGA: `m₁ = d`, `m₂` from the unshifted product, plus optional
    /// positive-energy operations.
    Dga {
        space: String,
        d: MapSpec,
        product: MapSpec,
        #[serde(default)]
        unit: Option<String>,
        #[serde(default)]
        ops: Vec<OpSpec>,
    },
    /// The structure of a torus model up to a given arity.
    Torus { torus: String, max_arity: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MorphismSpec {
    Identity { space: String },
    Ops {
        source: String,
        target: String,
        #[serde(default)]
        arity_cap: Option<usize>,
        #[serde(default)]
        complete: Vec<RatRepr>,
        comps: Vec<OpSpec>,
    },
    /// `F^t` of an isotopy at a rational time.
    Integrated { isotopy: String, time: RatRepr, max_arity: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetractionSpec {
    pub ambient: String,
    pub cohomology: String,
    pub i: MapSpec,
    pub p: MapSpec,
    pub h: MapSpec,
}

/// The isotopy obtained by flowing `structure` along `h` (polynomial in `t`,
/// positive energies only).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsotopySpec {
    pub structure: String,
    pub max_arity: usize,
    #[serde(default)]
    pub h: Vec<PolyOpSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementSpec {
    pub space: String,
    pub coeffs: BTreeMap<String, NovRepr>,
}

/// `Σ_i (Σ_e T^e p_{i,e}(t)) e_i` with `p` listed lowest degree first.
pub type PolySeriesSpec = BTreeMap<String, Vec<(RatRepr, Vec<RatRepr>)>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaugeSpec {
    pub space: String,
    pub b: PolySeriesSpec,
    #[serde(default)]
    pub c: PolySeriesSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiskSpec {
    pub boundary: Vec<i64>,
    pub area: RatRepr,
    pub m0: BTreeMap<String, RatRepr>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorusSpec {
    pub n: usize,
    #[serde(default)]
    pub disks: Vec<DiskSpec>,
    #[serde(default = "yes")]
    pub divisor: bool,
}

fn yes() -> bool {
    true
}

/// A wall class. `area` is measured over `at` (chart coordinates of the
/// overlap's source); without `at` it is measured at the overlap point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallSpec {
    pub boundary: Vec<i64>,
    pub area: RatRepr,
    #[serde(default)]
    pub at: Option<Vec<RatRepr>>,
    pub correction: Vec<RatRepr>,
}

/// Patch of a flat affine plane seen through `x = A y + shift`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    pub vertices: Vec<Vec<RatRepr>>,
    pub matrix: IntMatrix,
    pub shift: Vec<RatRepr>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlapSpec {
    pub from: usize,
    pub to: usize,
    pub matrix: IntMatrix,
    pub point_from: Vec<RatRepr>,
    pub point_to: Vec<RatRepr>,
    #[serde(default)]
    pub walls: Vec<WallSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallsSpec {
    pub from: usize,
    pub to: usize,
    pub walls: Vec<WallSpec>,
}

/// Either explicit charts and overlaps, or patches whose pairwise overlaps
/// are generated. `walls` then attaches wall data to generated overlaps and
/// `synthesize` lists `[from, to]` pairs whose reverse is the series inverse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtlasSpec {
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub charts: Vec<Vec<Vec<RatRepr>>>,
    #[serde(default)]
    pub overlaps: Vec<OverlapSpec>,
    #[serde(default)]
    pub patches: Vec<PatchSpec>,
    #[serde(default)]
    pub walls: Vec<WallsSpec>,
    #[serde(default)]
    pub synthesize: Vec<(usize, usize)>,
    #[serde(default = "yes")]
    pub unobstructed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum JobKind {
    CheckAinf { structure: String },
    CanonicalModel { structure: String, retraction: String, max_arity: usize },
    CheckIsotopy { isotopy: String },
    Integrate { isotopy: String, max_arity: usize },
    /// `second ∘ first`, checked as a morphism when structures are named.
    Compose {
        first: String,
        second: String,
        #[serde(default)]
        source: Option<String>,
        #[serde(default)]
        middle: Option<String>,
        #[serde(default)]
        target: Option<String>,
    },
    McDefect { structure: String, element: String },
    /// `W(z)` at `point`, or at `exp(b)` for `element`, where it is also
    /// compared with the defect of `b`.
    Potential {
        torus: String,
        #[serde(default)]
        point: Option<Vec<NovRepr>>,
        #[serde(default)]
        element: Option<String>,
        #[serde(default = "four")]
        max_arity: usize,
    },
    Pushforward {
        morphism: String,
        element: String,
        #[serde(default)]
        source: Option<String>,
        #[serde(default)]
        target: Option<String>,
    },
    CheckGauge { structure: String, witness: String },
    Transition {
        atlas: String,
        from: usize,
        to: usize,
        #[serde(default)]
        point: Option<Vec<RatRepr>>,
    },
    VerifyGluing {
        atlas: String,
        triple: (usize, usize, usize),
        #[serde(default)]
        point: Option<Vec<RatRepr>>,
        #[serde(default)]
        second_point: Option<Vec<RatRepr>>,
    },
    EnumerateTrees {
        arity: usize,
        energy: RatRepr,
        #[serde(default)]
        pointed: bool,
    },
}

fn four() -> usize {
    4
}

impl JobKind {
    pub fn name(&self) -> &'static str {
        match self {
            JobKind::CheckAinf { .. } => "check-ainf",
            JobKind::CanonicalModel { .. } => "canonical-model",
            JobKind::CheckIsotopy { .. } => "check-isotopy",
            JobKind::Integrate { .. } => "integrate",
            JobKind::Compose { .. } => "compose",
            JobKind::McDefect { .. } => "mc-defect",
            JobKind::Potential { .. } => "potential",
            JobKind::Pushforward { .. } => "pushforward",
            JobKind::CheckGauge { .. } => "check-gauge",
            JobKind::Transition { .. } => "transition",
            JobKind::VerifyGluing { .. } => "verify-gluing",
            JobKind::EnumerateTrees { .. } => "enumerate-trees",
        }
    }

    /// `(table, name)` pairs this job refers to.
    fn references(&self) -> Vec<(Table, &str)> {
        use Table::*;
        fn opt(t: Table, n: &Option<String>) -> Option<(Table, &str)> {
            n.as_deref().map(|n| (t, n))
        }
        let mut out = Vec::new();
        match self {
            JobKind::CheckAinf { structure } => out.push((Structures, structure.as_str())),
            JobKind::CanonicalModel { structure, retraction, .. } => {
                out.push((Structures, structure.as_str()));
                out.push((Retractions, retraction.as_str()));
            }
            JobKind::CheckIsotopy { isotopy } | JobKind::Integrate { isotopy, .. } => {
                out.push((Isotopies, isotopy.as_str()))
            }
            JobKind::Compose { first, second, source, middle, target } => {
                out.push((Morphisms, first.as_str()));
                out.push((Morphisms, second.as_str()));
                out.extend(opt(Structures, source));
                out.extend(opt(Structures, middle));
                out.extend(opt(Structures, target));
            }
            JobKind::McDefect { structure, element } => {
                out.push((Structures, structure.as_str()));
                out.push((Elements, element.as_str()));
            }
            JobKind::Potential { torus, element, .. } => {
                out.push((Tori, torus.as_str()));
                out.extend(opt(Elements, element));
            }
            JobKind::Pushforward { morphism, element, source, target } => {
                out.push((Morphisms, morphism.as_str()));
                out.push((Elements, element.as_str()));
                out.extend(opt(Structures, source));
                out.extend(opt(Structures, target));
            }
            JobKind::CheckGauge { structure, witness } => {
                out.push((Structures, structure.as_str()));
                out.push((Gauges, witness.as_str()));
            }
            JobKind::Transition { atlas, .. } | JobKind::VerifyGluing { atlas, .. } => {
                out.push((Atlases, atlas.as_str()))
            }
            JobKind::EnumerateTrees { .. } => {}
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    #[serde(flatten)]
    pub kind: JobKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Session {
    pub monoid: Vec<RatRepr>,
    pub cutoff: RatRepr,
    #[serde(default = "z_grading")]
    pub grading: Grading,
    /// Basis names and degrees.
    #[serde(default)]
    pub spaces: BTreeMap<String, Vec<(String, i32)>>,
    #[serde(default)]
    pub structures: BTreeMap<String, StructureSpec>,
    #[serde(default)]
    pub morphisms: BTreeMap<String, MorphismSpec>,
    #[serde(default)]
    pub retractions: BTreeMap<String, RetractionSpec>,
    #[serde(default)]
    pub isotopies: BTreeMap<String, IsotopySpec>,
    #[serde(default)]
    pub elements: BTreeMap<String, ElementSpec>,
    #[serde(default)]
    pub gauges: BTreeMap<String, GaugeSpec>,
    #[serde(default)]
    pub tori: BTreeMap<String, TorusSpec>,
    #[serde(default)]
    pub atlases: BTreeMap<String, AtlasSpec>,
    #[serde(default)]
    pub jobs: Vec<Job>,
}

fn z_grading() -> Grading {
    Grading::Z
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Table {
    Spaces,
    Structures,
    Morphisms,
    Retractions,
    Isotopies,
    Elements,
    Gauges,
    Tori,
    Atlases,
}

impl Table {
    fn label(self) -> &'static str {
        match self {
            Table::Spaces => "space",
            Table::Structures => "structure",
            Table::Morphisms => "morphism",
            Table::Retractions => "retraction",
            Table::Isotopies => "isotopy",
            Table::Elements => "element",
            Table::Gauges => "gauge",
            Table::Tori => "torus",
            Table::Atlases => "atlas",
        }
    }
}

impl Session {
    pub fn parse(text: &str) -> Result<Session, SessionError> {
        let s: Session = serde_json::from_str(text).map_err(|e| SessionError::Parse {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &std::path::Path) -> Result<Session, SessionError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SessionError::Io(path.display().to_string(), e.to_string()))?;
        Session::parse(&text)
    }

    fn has(&self, t: Table, name: &str) -> bool {
        match t {
            // torus models carry their own spaces
            Table::Spaces => self.spaces.contains_key(name) || self.tori.contains_key(name),
            Table::Structures => self.structures.contains_key(name),
            Table::Morphisms => self.morphisms.contains_key(name),
            Table::Retractions => self.retractions.contains_key(name),
            Table::Isotopies => self.isotopies.contains_key(name),
            Table::Elements => self.elements.contains_key(name),
            Table::Gauges => self.gauges.contains_key(name),
            Table::Tori => self.tori.contains_key(name),
            Table::Atlases => self.atlases.contains_key(name),
        }
    }

    /// Every named reference resolves and job ids are unique.
    pub fn validate(&self) -> Result<(), SessionError> {
        use Table::*;
        let mut refs: Vec<(String, Table, &str)> = Vec::new();
        for (name, s) in &self.structures {
            let at = format!("structure {name}");
            match s {
                StructureSpec::Ops { space, .. } | StructureSpec::Dga { space, .. } => {
                    refs.push((at, Spaces, space))
                }
                StructureSpec::Torus { torus, .. } => refs.push((at, Tori, torus)),
            }
        }
        for (name, m) in &self.morphisms {
            let at = format!("morphism {name}");
            match m {
                MorphismSpec::Identity { space } => refs.push((at, Spaces, space)),
                MorphismSpec::Ops { source, target, .. } => {
                    refs.push((at.clone(), Spaces, source));
                    refs.push((at, Spaces, target));
                }
                MorphismSpec::Integrated { isotopy, .. } => refs.push((at, Isotopies, isotopy)),
            }
        }
        for (name, r) in &self.retractions {
            refs.push((format!("retraction {name}"), Spaces, &r.ambient));
            refs.push((format!("retraction {name}"), Spaces, &r.cohomology));
        }
        for (name, g) in &self.isotopies {
            refs.push((format!("isotopy {name}"), Structures, &g.structure));
        }
        for (name, e) in &self.elements {
            refs.push((format!("element {name}"), Spaces, &e.space));
        }
        for (name, g) in &self.gauges {
            refs.push((format!("gauge {name}"), Spaces, &g.space));
        }
        let mut seen = std::collections::BTreeSet::new();
        for job in &self.jobs {
            if !seen.insert(job.id.as_str()) {
                return Err(SessionError::DuplicateJob(job.id.clone()));
            }
            for (t, n) in job.kind.references() {
                refs.push((format!("job {}", job.id), t, n));
            }
        }
        let missing: Vec<String> = refs
            .into_iter()
            .filter(|(_, t, n)| !self.has(*t, n))
            .map(|(at, t, n)| format!("{at}: unknown {} {n}", t.label()))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(SessionError::References(missing))
        }
    }

    pub fn job(&self, id: &str) -> Option<&Job> {
        self.jobs.iter().find(|j| j.id == id)
    }
}

/// A session with its global truncation resolved; builds core objects on
/// demand.
pub struct Context<'s> {
    pub session: &'s Session,
    pub monoid: EnergyMonoid,
    pub cutoff: Q,
}

impl<'s> Context<'s> {
    pub fn new(session: &'s Session, cutoff: Option<Q>) -> Result<Self, SessionError> {
        let monoid = EnergyMonoid::new(session.monoid.iter().map(|g| g.0.clone()))?;
        let cutoff = cutoff.unwrap_or_else(|| session.cutoff.0.clone());
        if cutoff < Q::zero() {
            return Err(SessionError::invalid(format!("negative cutoff {}", q_to_string(&cutoff))));
        }
        Ok(Context { session, monoid, cutoff })
    }

    fn lookup<'a, T>(table: &'a BTreeMap<String, T>, what: &str, name: &str) -> Result<&'a T, SessionError> {
        table.get(name).ok_or_else(|| SessionError::invalid(format!("unknown {what} {name}")))
    }

    pub fn space(&self, name: &str) -> Result<GradedSpace, SessionError> {
        if let Some(basis) = self.session.spaces.get(name) {
            let names = basis.iter().map(|(n, _)| n.clone()).collect();
            let degrees = basis.iter().map(|(_, d)| *d).collect();
            return Ok(GradedSpace::new(names, degrees, self.session.grading)?);
        }
        if self.session.tori.contains_key(name) {
            return Ok(self.torus(name)?.space);
        }
        Err(SessionError::invalid(format!("unknown space {name}")))
    }

    fn keep(&self, energy: &Q) -> bool {
        energy <= &self.cutoff
    }

    fn map(
        &self,
        spec: &MapSpec,
        input: &GradedSpace,
        output: &GradedSpace,
        default_degree: i32,
    ) -> Result<MultilinearMap<Q>, SessionError> {
        let m = map_from_entries(
            spec.arity,
            spec.degree.unwrap_or(default_degree),
            spec.entries.iter().map(|e| (&e.inputs, &e.output, e.coeff.0.clone())),
            input,
            output,
        )?;
        m.check_homogeneous(input, output)?;
        Ok(m)
    }

    /// An unshifted product, homogeneous in the unshifted grading.
    fn product(&self, spec: &MapSpec, v: &GradedSpace) -> Result<MultilinearMap<Q>, SessionError> {
        map_from_entries(
            spec.arity,
            spec.degree.unwrap_or(0),
            spec.entries.iter().map(|e| (&e.inputs, &e.output, e.coeff.0.clone())),
            v,
            v,
        )
    }

    fn family(
        &self,
        ops: &[OpSpec],
        input: &GradedSpace,
        output: &GradedSpace,
        default_degree: i32,
    ) -> Result<Vec<(usize, Q, MultilinearMap<Q>)>, SessionError> {
        ops.iter()
            .filter(|o| self.keep(&o.energy.0))
            .map(|o| {
                let m = map_from_entries(
                    o.arity,
                    o.degree.unwrap_or(default_degree),
                    o.entries.iter().map(|e| (&e.inputs, &e.output, e.coeff.0.clone())),
                    input,
                    output,
                )?;
                m.check_homogeneous(input, output)?;
                Ok((o.arity, o.energy.0.clone(), m))
            })
            .collect()
    }

    pub fn structure(&self, name: &str) -> Result<AInfStructure, SessionError> {
        match Self::lookup(&self.session.structures, "structure", name)? {
            StructureSpec::Ops { space, arity_cap, complete, unit, ops } => {
                let v = self.space(space)?;
                let mut a = AInfStructure::new(v.clone(), self.monoid.clone(), self.cutoff.clone(), *arity_cap);
                for e in complete.iter().filter(|e| self.keep(&e.0)) {
                    a.ops.mark_complete(e.0.clone());
                }
                for (k, b, m) in self.family(ops, &v, &v, 1)? {
                    a.set_op(k, b, m)?;
                }
                a.unit = unit.as_deref().map(|u| v.index_of(u)).transpose()?;
                Ok(a)
            }
            StructureSpec::Dga { space, d, product, unit, ops } => {
                let v = self.space(space)?;
                let d = self.map(d, &v, &v, 1)?;
                let product = self.product(product, &v)?;
                let mut a = AInfStructure::from_dga(v.clone(), &d, &product, self.monoid.clone(), self.cutoff.clone())?;
                for (k, b, m) in self.family(ops, &v, &v, 1)? {
                    a.set_op(k, b, m)?;
                }
                a.unit = unit.as_deref().map(|u| v.index_of(u)).transpose()?;
                Ok(a)
            }
            StructureSpec::Torus { torus, max_arity } => Ok(self.torus(torus)?.structure(*max_arity)?),
        }
    }

    pub fn morphism(&self, name: &str) -> Result<AInfMorphism, SessionError> {
        match Self::lookup(&self.session.morphisms, "morphism", name)? {
            MorphismSpec::Identity { space } => {
                Ok(AInfMorphism::identity(&self.space(space)?, &self.monoid, &self.cutoff))
            }
            MorphismSpec::Ops { source, target, arity_cap, complete, comps } => {
                let (s, t) = (self.space(source)?, self.space(target)?);
                let mut f = AInfMorphism::new(s.clone(), t.clone(), self.monoid.clone(), self.cutoff.clone(), *arity_cap);
                for e in complete.iter().filter(|e| self.keep(&e.0)) {
                    f.comps.mark_complete(e.0.clone());
                }
                for (k, b, m) in self.family(comps, &s, &t, 0)? {
                    f.set_comp(k, b, m)?;
                }
                Ok(f)
            }
            MorphismSpec::Integrated { isotopy, time, max_arity } => {
                let g = self.isotopy(isotopy)?;
                Ok(crate::isotopy::integrate_to_morphism(&g, &time.0, *max_arity)?)
            }
        }
    }

    pub fn retraction(&self, name: &str) -> Result<Retraction, SessionError> {
        let r = Self::lookup(&self.session.retractions, "retraction", name)?;
        let (v, h) = (self.space(&r.ambient)?, self.space(&r.cohomology)?);
        Ok(Retraction {
            i: self.map(&r.i, &h, &v, 0)?,
            p: self.map(&r.p, &v, &h, 0)?,
            h: self.map(&r.h, &v, &v, -1)?,
            ambient: v,
            cohomology: h,
        })
    }

    pub fn isotopy(&self, name: &str) -> Result<PseudoIsotopy, SessionError> {
        let g = Self::lookup(&self.session.isotopies, "isotopy", name)?;
        let a = self.structure(&g.structure)?;
        let v = a.space.clone();
        let mut h: OpFamily<Poly> = OpFamily::new(None);
        for o in g.h.iter().filter(|o| self.keep(&o.energy.0)) {
            let mut m = MultilinearMap::zero(o.arity, 0);
            for e in &o.entries {
                let (ins, out) = resolve_entry(&e.inputs, &e.output, &v, &v)?;
                m.add_entry(ins, out, Poly::new(e.coeff.iter().map(|c| c.0.clone()).collect()));
            }
            m.check_homogeneous(&v, &v)?;
            h.add_to(o.arity, o.energy.0.clone(), &m);
        }
        Ok(gauge_flow(&a, h, g.max_arity)?)
    }

    pub fn element(&self, name: &str) -> Result<MCElement, SessionError> {
        let e = Self::lookup(&self.session.elements, "element", name)?;
        let v = self.space(&e.space)?;
        let coeffs = e
            .coeffs
            .iter()
            .map(|(b, x)| Ok((v.index_of(b)?, Nov::from(x).truncate(&self.cutoff))))
            .collect::<Result<Vec<_>, SessionError>>()?;
        Ok(MCElement::new(v, coeffs)?)
    }

    fn poly_series(&self, spec: &PolySeriesSpec, v: &GradedSpace) -> Result<SeriesVector<Poly>, SessionError> {
        spec.iter()
            .map(|(b, terms)| {
                let s = Series::from_terms(
                    terms
                        .iter()
                        .filter(|(e, _)| self.keep(&e.0))
                        .map(|(e, p)| (e.0.clone(), Poly::new(p.iter().map(|c| c.0.clone()).collect()))),
                );
                Ok((v.index_of(b)?, s))
            })
            .collect()
    }

    pub fn gauge(&self, name: &str) -> Result<GaugeWitness, SessionError> {
        let g = Self::lookup(&self.session.gauges, "gauge", name)?;
        let v = self.space(&g.space)?;
        Ok(GaugeWitness {
            breakpoints: vec![Q::zero(), Q::from_integer(1.into())],
            b: vec![self.poly_series(&g.b, &v)?],
            c: vec![self.poly_series(&g.c, &v)?],
        })
    }

    pub fn torus(&self, name: &str) -> Result<TorusModel, SessionError> {
        let t = Self::lookup(&self.session.tori, "torus", name)?;
        let mut model = TorusModel::new(t.n, self.monoid.clone(), self.cutoff.clone())?;
        for d in &t.disks {
            let m0 = d
                .m0
                .iter()
                .map(|(b, c)| Ok((model.space.index_of(b)?, c.0.clone())))
                .collect::<Result<_, SessionError>>()?;
            model.add_disk(d.boundary.clone(), d.area.0.clone(), m0)?;
        }
        model.divisor_declared = t.divisor;
        Ok(model)
    }

    pub fn atlas(&self, name: &str) -> Result<Atlas, SessionError> {
        let a = Self::lookup(&self.session.atlases, "atlas", name)?;
        let mut atlas = if !a.patches.is_empty() {
            if !a.charts.is_empty() || !a.overlaps.is_empty() {
                return Err(SessionError::invalid(format!("atlas {name}: give patches or charts, not both")));
            }
            let patches = a
                .patches
                .iter()
                .map(|p| Ok((domain(&p.vertices)?, p.matrix.clone(), qs(&p.shift))))
                .collect::<Result<Vec<_>, SessionError>>()?;
            Atlas::from_patches(patches, self.cutoff.clone(), a.unobstructed)?
        } else {
            let domains = a.charts.iter().map(|c| domain(c)).collect::<Result<Vec<_>, _>>()?;
            let n = a.n.or_else(|| domains.first().map(|d| d.dim())).unwrap_or(0);
            let mut atlas = Atlas::new(n, domains, self.cutoff.clone(), a.unobstructed)?;
            for o in &a.overlaps {
                let point_from = qs(&o.point_from);
                let walls = walls(&o.walls, &point_from)?;
                let ov = Overlap {
                    matrix: o.matrix.clone(),
                    point_from,
                    point_to: qs(&o.point_to),
                    walls,
                    mode: WallMode::Supplied,
                };
                atlas.set_overlap(o.from, o.to, ov)?;
            }
            atlas
        };
        if let Some(n) = a.n {
            if n != atlas.n {
                return Err(SessionError::invalid(format!("atlas {name}: dimension {} declared as {n}", atlas.n)));
            }
        }
        for w in &a.walls {
            let p = atlas.overlap(w.from, w.to)?.point_from.clone();
            atlas.set_walls(w.from, w.to, walls(&w.walls, &p)?)?;
        }
        for &(from, to) in &a.synthesize {
            atlas.synthesize_inverse(from, to)?;
        }
        Ok(atlas)
    }
}

pub fn qs(v: &[RatRepr]) -> Vec<Q> {
    v.iter().map(|x| x.0.clone()).collect()
}

fn domain(vertices: &[Vec<RatRepr>]) -> Result<RationalDomain, SessionError> {
    Ok(RationalDomain::from_vertices(vertices.iter().map(|v| qs(v)).collect())?)
}

fn walls(specs: &[WallSpec], point_from: &[Q]) -> Result<Vec<DiskClass>, SessionError> {
    specs
        .iter()
        .map(|w| {
            let raw = DiskClass { boundary: w.boundary.clone(), area: w.area.0.clone(), correction: qs(&w.correction) };
            let area = match &w.at {
                Some(at) => raw.area_at(&qs(at), point_from),
                None => raw.area.clone(),
            };
            Ok(DiskClass::new(raw.boundary, area, raw.correction)?)
        })
        .collect()
}

fn resolve_entry(
    inputs: &[String],
    output: &str,
    input: &GradedSpace,
    out: &GradedSpace,
) -> Result<(Vec<usize>, usize), SessionError> {
    let ins = inputs.iter().map(|b| input.index_of(b)).collect::<Result<Vec<_>, _>>()?;
    Ok((ins, out.index_of(output)?))
}

fn map_from_entries<'a>(
    arity: usize,
    degree: i32,
    entries: impl Iterator<Item = (&'a Vec<String>, &'a String, Q)>,
    input: &GradedSpace,
    output: &GradedSpace,
) -> Result<MultilinearMap<Q>, SessionError> {
    let mut m = MultilinearMap::zero(arity, degree);
    for (ins, out, c) in entries {
        if ins.len() != arity {
            return Err(SessionError::invalid(format!("entry with {} inputs in an arity-{arity} map", ins.len())));
        }
        let (ins, out) = resolve_entry(ins, out, input, output)?;
        m.add_entry(ins, out, c);
    }
    Ok(m)
}
