mod common;

use proptest::prelude::*;

use stpa_plus::process::{
    aggregate, check_arrow5, watch_assumptions, Arrow, Assumption, CondValue, ConditionSnapshot, Construct,
    ConstraintAssumptionPair, ElementRef, ProcessError, ProcessModel, Space, ValueSet,
};

fn evtol_angle(nominal: bool) -> (ValueSet, Vec<String>, Vec<String>) {
    let mut cfg = common::config("evtol_nominal");
    cfg.conditions.insert("Nom".into(), CondValue::Bool(nominal));
    let plant = cfg.build_plant().unwrap();
    let model = cfg.build_model(&*plant).unwrap();
    let dcs = aggregate(&model, &cfg.conditions).unwrap();
    let angle = model.construct().resolve("x.angle").unwrap();
    let excluded = dcs.excluded.iter().map(|e| e.id.clone()).collect();
    (dcs.set(angle), dcs.active.clone(), excluded)
}

#[test]
fn evtol_angle_envelope_under_nominal_conditions() {
    let (set, active, excluded) = evtol_angle(true);
    assert_eq!(set, ValueSet::interval(5.0, 8.0));
    assert!(excluded.is_empty(), "{excluded:?}");
    assert_eq!(active.len(), 3);
}

#[test]
fn evtol_angle_envelope_when_nominal_assumption_fails() {
    let (set, _, excluded) = evtol_angle(false);
    assert_eq!(set, ValueSet::interval(3.0, 8.0));
    assert_eq!(excluded, vec!["G3".to_string()]);
}

#[test]
fn backup_pad_config_aggregates_without_the_nominal_pair() {
    let cfg = common::config("evtol_backup_pad");
    let plant = cfg.build_plant().unwrap();
    let model = cfg.build_model(&*plant).unwrap();
    let dcs = aggregate(&model, &cfg.conditions).unwrap();
    let angle = model.construct().resolve("x.angle").unwrap();
    assert_eq!(dcs.set(angle), ValueSet::interval(3.0, 8.0));
}

#[test]
fn watch_reports_the_flipped_pair_and_the_widened_set() {
    let cfg = common::config("evtol_nominal");
    let plant = cfg.build_plant().unwrap();
    let model = cfg.build_model(&*plant).unwrap();
    let before = aggregate(&model, &cfg.conditions).unwrap();
    let mut off = cfg.conditions.clone();
    off.insert("Nom".into(), CondValue::Bool(false));
    let delta = watch_assumptions(&model, &off, &before).unwrap();
    assert_eq!(delta.changes.len(), 1);
    assert_eq!(delta.changes[0].pair, "G3");
    assert!(!delta.changes[0].now_holds);
    let angle = model.construct().resolve("x.angle").unwrap();
    let change = delta.set_changes.iter().find(|c| c.element == angle).unwrap();
    assert!(!change.tightened());
    let back = watch_assumptions(&model, &cfg.conditions, &delta.current).unwrap();
    assert!(back.changes[0].now_holds);
    assert!(back.set_changes.iter().any(|c| c.element == angle && c.tightened()));
    assert!(watch_assumptions(&model, &cfg.conditions, &before).unwrap().is_empty());
}

#[test]
fn arrow5_flags_the_inconsistent_fixture_only() {
    for (name, consistent) in [("evtol_nominal", true), ("evtol_inconsistent", false)] {
        let cfg = common::config(name);
        let plant = cfg.build_plant().unwrap();
        let model = cfg.build_model(&*plant).unwrap();
        let dcs = aggregate(&model, &cfg.conditions).unwrap();
        let report = check_arrow5(&model, &dcs, 1000, 11);
        assert_eq!(report.is_consistent(), consistent, "{name}: {report}");
        assert_eq!(report, check_arrow5(&model, &dcs, 1000, 11), "{name}: seeded check is reproducible");
    }
}

fn toy_model() -> ProcessModel {
    let construct = Construct::builder(0.1, |u, x, _p| (vec![u[0]], vec![x[0] + u[0]]))
        .inputs(&["a"], &[(-10.0, 10.0)])
        .states(&["s"], &[(-10.0, 10.0)])
        .outputs(&["y"])
        .build();
    ProcessModel::new(construct)
}

fn pair(id: &str, target: ElementRef, lo: f64, hi: f64, sys: &str, env: &str) -> ConstraintAssumptionPair {
    ConstraintAssumptionPair {
        id: id.to_string(),
        target,
        constraint: ValueSet::interval(lo, hi),
        assumption_system: sys.parse().unwrap(),
        assumption_env: env.parse().unwrap(),
        arrow: Arrow::A1Mechanism,
        justification: "fixture".to_string(),
    }
}

#[test]
fn unjustified_pair_without_assumptions_is_rejected() {
    let mut model = toy_model();
    let mut p = pair("bare", ElementRef::new(Space::U, 0), 0.0, 1.0, "NA", "NA");
    p.justification = "  ".into();
    assert!(matches!(model.add_pair(p), Err(ProcessError::Unjustified { .. })));
    let p = pair("ok", ElementRef::new(Space::U, 0), 0.0, 1.0, "BL >= 30", "NA");
    assert!(model.add_pair(ConstraintAssumptionPair {
        justification: String::new(),
        ..p
    })
    .is_ok());
}

#[test]
fn undeclared_condition_is_an_error() {
    let mut model = toy_model();
    model
        .add_pair(pair("p", ElementRef::new(Space::X, 0), 0.0, 1.0, "Nom", "NA"))
        .unwrap();
    assert!(aggregate(&model, &ConditionSnapshot::new()).is_err());
}

const VARS: [&str; 3] = ["A", "B", "C"];

fn side() -> impl Strategy<Value = Option<usize>> {
    prop::option::of(0..VARS.len())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn aggregate_is_intersection_of_active_pairs(
        decl in prop::collection::vec((0..3usize, -5i32..5, 0i32..6, side(), side()), 0..8),
        truth in prop::collection::vec(any::<bool>(), VARS.len()),
    ) {
        let elements = [ElementRef::new(Space::U, 0), ElementRef::new(Space::X, 0), ElementRef::new(Space::Y, 0)];
        let mut model = toy_model();
        let text = |s: Option<usize>| s.map_or("NA".to_string(), |i| VARS[i].to_string());
        for (k, (e, lo, w, sys, env)) in decl.iter().enumerate() {
            let p = pair(&format!("p{k}"), elements[*e], *lo as f64, (*lo + *w) as f64, &text(*sys), &text(*env));
            model.add_pair(p).unwrap();
        }
        let conditions: ConditionSnapshot =
            VARS.iter().zip(&truth).map(|(v, b)| (v.to_string(), CondValue::Bool(*b))).collect();
        let dcs = aggregate(&model, &conditions).unwrap();

        let holds = |s: Option<usize>| s.is_none_or(|i| truth[i]);
        for (e, r) in elements.iter().enumerate() {
            // independent oracle: running max of lows and min of highs
            let mut bounds: Option<(f64, f64)> = None;
            for (lo, w, _, _) in decl.iter().filter(|d| d.0 == e && holds(d.3) && holds(d.4)).map(|d| (d.1, d.2, d.3, d.4)) {
                let (l, h) = (lo as f64, (lo + w) as f64);
                bounds = Some(bounds.map_or((l, h), |(a, b)| (a.max(l), b.min(h))));
            }
            let set = dcs.set(*r);
            match bounds {
                None => prop_assert!(set.is_universal()),
                Some((l, h)) if l > h => prop_assert!(set.is_empty()),
                Some((l, h)) => prop_assert_eq!(set, ValueSet::interval(l, h)),
            }
        }
        let active = decl.iter().filter(|d| holds(d.3) && holds(d.4)).count();
        prop_assert_eq!(dcs.active.len(), active);
        prop_assert_eq!(dcs.excluded.len(), decl.len() - active);
    }
}

#[test]
fn assumption_text_round_trips() {
    for text in ["NA", "Nom", "BL >= 30 && Nom", "CW < 12.5"] {
        let a: Assumption = text.parse().unwrap();
        assert_eq!(a.to_string(), text);
    }
}
