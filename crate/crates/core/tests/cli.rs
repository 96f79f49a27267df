use std::path::PathBuf;
use std::process::Command;

use ainf_core::cli::{self, Session, SessionError, Status};
use ainf_core::novikov::{EnergyMonoid, Nov, NovRepr};
use ainf_core::ring::{q, qi, Q, RatRepr};
use ainf_core::trees::enumerate_trees;
use num_traits::Zero;
use serde_json::Value;

fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../sessions").join(name)
}

fn load(name: &str) -> Session {
    Session::load(&bundled(name)).unwrap()
}

fn job<'a>(r: &'a cli::Report, id: &str) -> &'a cli::JobReport {
    r.jobs.iter().find(|j| j.id == id).unwrap()
}

fn nov_at(details: &Value, path: &[&str]) -> Nov {
    let mut v = details;
    for p in path {
        v = &v[*p];
    }
    if v.is_null() {
        return Nov::default();
    }
    let r: NovRepr = serde_json::from_value(v.clone()).unwrap();
    Nov::from(&r)
}

#[test]
fn empty_job_list_passes() {
    let r = cli::run(&load("empty.json"), None, Some(1)).unwrap();
    assert!(r.passed);
    assert!(r.jobs.is_empty());
}

#[test]
fn semi_flat_atlas_passes_every_check() {
    let r = cli::run(&load("semi_flat.json"), None, None).unwrap();
    assert!(r.passed, "{}", r.human());
    for j in r.jobs.iter().filter(|j| j.kind == "verify-gluing") {
        let checks = j.details["checks"].as_object().unwrap();
        assert!(checks.len() >= 10);
        assert!(checks.values().all(|v| v == &Value::Bool(true)));
    }
}

/// Terms `(exponent, energy, coeff)` listed for one component.
fn series_terms(v: &Value) -> Vec<(Vec<i64>, Q, Q)> {
    v.as_array()
        .unwrap()
        .iter()
        .flat_map(|t| {
            let k: Vec<i64> = serde_json::from_value(t["exponent"].clone()).unwrap();
            let c: NovRepr = serde_json::from_value(t["coeff"].clone()).unwrap();
            c.terms.into_iter().map(move |[e, x]| (k.clone(), e.0, x.0))
        })
        .collect()
}

#[test]
fn one_wall_example_matches_hand_expansion() {
    let r = cli::run(&load("one_wall.json"), None, None).unwrap();
    assert!(r.passed, "{}", r.human());
    let glue = job(&r, "glue-012");
    assert_eq!(glue.details["checks"]["Psi_12 o Psi_01 = Psi_02"], Value::Bool(true));
    let mult = glue.details["multiplicativity"].as_object().unwrap();
    assert!(!mult.is_empty() && mult.values().all(|v| v == &Value::Bool(true)));
    assert!(glue.details["corrected_monomials"]["(0,1)"].as_array().unwrap().len() == 2);

    // z ↦ T^{s_k} z^{A_k} exp(⟨A_k, c⟩ w), w = T^{1/2} z2 at the overlap
    // point, A = [[1,0],[1,1]], c = (1, 1/2), s = (−2, 0).
    let psi = &job(&r, "psi-01").details["series"];
    let rows: [([i64; 2], Q, Q); 2] = [([1, 0], qi(-2), qi(1)), ([1, 1], qi(0), q(3, 2))];
    for (k, (a, shift, rate)) in rows.iter().enumerate() {
        let got = series_terms(&psi[k]);
        let mut fact = Q::from_integer(1.into());
        let mut pow = Q::from_integer(1.into());
        for n in 0..4i64 {
            if n > 0 {
                fact *= qi(n);
                pow *= rate;
            }
            let want = (vec![a[0], a[1] + n], shift + q(n, 2), &pow / &fact);
            assert!(got.contains(&want), "component {k}, order {n}: {want:?} not in {got:?}");
        }
        let exps: Vec<i64> = got.iter().map(|t| t.0[1] - a[1]).collect();
        assert!(exps.iter().all(|&n| n >= 0), "{got:?}");
    }
}

#[test]
fn algebra_example_passes_and_is_deterministic() {
    let s = load("algebra.json");
    let r1 = cli::run(&s, None, Some(1)).unwrap();
    assert!(r1.passed, "{}", r1.human());
    let r4 = cli::run(&s, None, Some(4)).unwrap();
    assert_eq!(r1.machine_untimed(), r4.machine_untimed());
    let ids: Vec<&str> = r1.jobs.iter().map(|j| j.id.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    assert_eq!(job(&r1, "trees").details["count"], 3);
}

#[test]
fn lower_cutoff_reports_truncations() {
    let s = load("algebra.json");
    let hi = cli::run(&s, None, None).unwrap();
    let e = qi(1);
    let lo = cli::run(&s, Some(e.clone()), None).unwrap();
    assert_eq!(lo.cutoff, RatRepr(e.clone()));
    for (id, path) in [("potential", ["potential", "1"]), ("potential", ["defect", "1"]), ("push", ["pushforward", "e"])] {
        let a = nov_at(&hi.jobs.iter().find(|j| j.id == id).unwrap().details, &path);
        let b = nov_at(&lo.jobs.iter().find(|j| j.id == id).unwrap().details, &path);
        assert!(a.eq_mod(&b, &e), "{id}: {a} vs {b}");
        assert!(b.terms().iter().all(|(x, _)| x <= &e));
    }
    let comps = |r: &cli::Report| -> Vec<String> {
        serde_json::from_value(job(r, "integrate").details["components"].clone()).unwrap()
    };
    let (ch, cl) = (comps(&hi), comps(&lo));
    let low_energy = |l: &String| {
        let b = l.split(',').nth(1).unwrap().split('}').next().unwrap();
        b.parse::<Q>().unwrap() <= e
    };
    assert_eq!(cl, ch.into_iter().filter(low_energy).collect::<Vec<_>>());
}

fn session_with(jobs: &str, extra: &str) -> Session {
    let text = format!(
        r#"{{
  "monoid": [[1, 1]],
  "cutoff": [2, 1],
  "grading": "z2",
  "spaces": {{ "E": [["1", 0], ["e", 1]] }},
  "structures": {{
    "ext": {{ "dga": {{
      "space": "E",
      "d": {{ "arity": 1 }},
      "product": {{ "arity": 2, "entries": [
        {{ "inputs": ["1", "1"], "output": "1", "coeff": [1, 1] }},
        {{ "inputs": ["1", "e"], "output": "e", "coeff": [1, 1] }},
        {{ "inputs": ["e", "1"], "output": "e", "coeff": [1, 1] }}
      ] }}
    }} }}
  }},
  "isotopies": {{ "still": {{ "structure": "ext", "max_arity": 3 }} }}{extra},
  "jobs": [{jobs}]
}}"#
    );
    Session::parse(&text).unwrap()
}

#[test]
fn explain_lists_contributing_trees() {
    let s = session_with(
        r#"{ "id": "f", "kind": "integrate", "isotopy": "still", "max_arity": 3 },
           { "id": "trees", "kind": "enumerate-trees", "arity": 3, "energy": [0, 1] }"#,
        "",
    );
    let (rep, trace) = cli::explain(&s, "f", None, None).unwrap();
    assert_eq!(rep.status, Status::Pass);
    let trees: Vec<&String> = trace.iter().filter(|l| l.starts_with("    (")).collect();
    assert_eq!(trees.len(), 1, "{trace:?}");
    assert!(trees[0].trim_start().starts_with("(·)"));

    let (_, trace) = cli::explain(&s, "trees", None, None).unwrap();
    let oracle: Vec<String> = enumerate_trees(3, &Q::zero(), &EnergyMonoid::new([qi(1)]).unwrap(), &qi(2))
        .unwrap()
        .iter()
        .map(|t| t.to_string())
        .collect();
    assert_eq!(oracle.len(), 3);
    assert_eq!(trace, oracle);

    assert!(cli::explain(&s, "missing", None, None).is_err());
}

#[test]
fn canonical_explain_skips_trees_through_vanishing_operations() {
    let s = load("algebra.json");
    let (_, trace) = cli::explain(&s, "canonical", None, None).unwrap();
    let at = trace.iter().position(|l| l.starts_with("m^can (3, 0)")).unwrap();
    // m_{3,0} of a DGA vanishes, leaving the two binary composites
    assert_eq!(trace[at], "m^can (3, 0): 2 tree(s)");
    let shapes: Vec<&str> = trace[at + 1..at + 3].iter().map(|l| l.trim_start().split(' ').next().unwrap()).collect();
    assert_eq!(shapes, ["((·)((·)(·)))", "(((·)(·))(·))"]);
}

#[test]
fn job_errors_do_not_abort_siblings() {
    let s = session_with(
        r#"{ "id": "a", "kind": "check-ainf", "structure": "ext" },
           { "id": "b", "kind": "mc-defect", "structure": "ext", "element": "bad" },
           { "id": "c", "kind": "enumerate-trees", "arity": 2, "energy": [1, 1] }"#,
        r#", "elements": { "bad": { "space": "E", "coeffs": { "e": { "terms": [[[0, 1], [1, 1]]] } } } }"#,
    );
    let r = cli::run(&s, None, None).unwrap();
    assert!(!r.passed);
    assert_eq!(job(&r, "a").status, Status::Pass);
    assert_eq!(job(&r, "b").status, Status::Error);
    assert!(job(&r, "b").error.is_some());
    assert_eq!(job(&r, "c").status, Status::Pass);
}

#[test]
fn parse_and_reference_errors() {
    match Session::parse("{\n  \"monoid\": [[1, 1]],\n  \"cutoff\": [2 1]\n}") {
        Err(SessionError::Parse { line, column, .. }) => assert_eq!((line, column), (3, 16)),
        other => panic!("{other:?}"),
    }
    assert!(matches!(Session::parse(r#"{ "monoid": [[1, 1]], "cutoff": [2, 0] }"#), Err(SessionError::Parse { .. })));
    let text = r#"{ "monoid": [[1, 1]], "cutoff": [1, 1],
        "jobs": [{ "id": "x", "kind": "check-ainf", "structure": "nowhere" }] }"#;
    match Session::parse(text) {
        Err(SessionError::References(r)) => assert!(r[0].contains("nowhere")),
        other => panic!("{other:?}"),
    }
    let text = r#"{ "monoid": [[1, 1]], "cutoff": [1, 1], "jobs": [
        { "id": "x", "kind": "enumerate-trees", "arity": 1, "energy": [0, 1] },
        { "id": "x", "kind": "enumerate-trees", "arity": 1, "energy": [0, 1] }] }"#;
    assert!(matches!(Session::parse(text), Err(SessionError::DuplicateJob(_))));
}

#[test]
fn sessions_and_reports_round_trip() {
    let s = load("one_wall.json");
    let back = Session::parse(&serde_json::to_string(&s).unwrap()).unwrap();
    assert_eq!(s, back);
    let r = cli::run(&load("semi_flat.json"), Some(q(7, 4)), None).unwrap();
    let parsed: cli::Report = serde_json::from_str(&r.machine()).unwrap();
    assert_eq!(parsed, r);
    assert_eq!(parsed.cutoff.0, q(7, 4));
}

#[test]
fn binary_exit_status_follows_checks() {
    let bin = env!("CARGO_BIN_EXE_ainf");
    let ok = Command::new(bin).args(["run", "--format", "machine"]).arg(bundled("semi_flat.json")).output().unwrap();
    assert!(ok.status.success());
    let report: cli::Report = serde_json::from_slice(&ok.stdout).unwrap();
    assert!(report.passed);

    let dir = tempfile::tempdir().unwrap();
    let failing = dir.path().join("failing.json");
    let s = Session::parse(
        r#"{ "monoid": [[1, 1]], "cutoff": [2, 1], "grading": "z2",
        "spaces": { "E": [["1", 0], ["e", 1]] },
        "structures": { "curved": { "ops": { "space": "E", "complete": [[0, 1]],
            "ops": [{ "arity": 0, "energy": [1, 1], "entries": [{ "output": "1", "coeff": [1, 1] }] }] } } },
        "elements": { "b": { "space": "E", "coeffs": { "e": { "terms": [[[1, 2], [1, 1]]] } } } },
        "jobs": [{ "id": "defect", "kind": "mc-defect", "structure": "curved", "element": "b" }] }"#,
    )
    .unwrap();
    std::fs::write(&failing, serde_json::to_string_pretty(&s).unwrap()).unwrap();
    let bad = Command::new(bin).args(["run"]).arg(&failing).output().unwrap();
    assert_eq!(bad.status.code(), Some(1), "{}", String::from_utf8_lossy(&bad.stdout));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("[FAIL] defect"));

    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "{ \"monoid\": ").unwrap();
    let out = Command::new(bin).args(["run"]).arg(&garbage).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    let out = Command::new(bin).args(["explain"]).arg(bundled("algebra.json")).arg("trees").output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().filter(|l| l.starts_with("  (")).count(), 3);
}
