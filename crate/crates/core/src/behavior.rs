//! Prescriptive constraints on an output behavior.
//!
//! A behavior is characterized by its start tick, its stop tick and the
//! trajectory in between. The trajectory is bounded by a performance
//! constraint; the start and stop ticks are bounded by must / must-not / can
//! windows derived from the performance constraints of the neighboring
//! behaviors (in-behavior for the start, out-behavior for the stop).

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::window::{can_window, Interval, Tick, WindowSet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BehaviorError {
    #[error("planning horizon [{lo},{hi}) is empty")]
    EmptyHorizon { lo: Tick, hi: Tick },
    #[error("behavior {name:?} cannot be its own {role}")]
    SelfLink { name: String, role: &'static str },
    #[error("trace stop tick {sp} is not after start tick {st}")]
    StopBeforeStart { st: Tick, sp: Tick },
    #[error("trace has no output sample at tick {tick}")]
    MissingSample { tick: Tick },
}

/// Builds a non-empty horizon interval.
pub fn horizon(lo: Tick, hi: Tick) -> Result<Interval, BehaviorError> {
    Interval::new(lo, hi).map_err(|_| BehaviorError::EmptyHorizon { lo, hi })
}

type Admissible = dyn Fn(Tick, &[f64]) -> bool + Send + Sync;

/// Time-indexed admissible-output predicate `y(t) ∈ Y(t)`.
#[derive(Clone)]
pub struct PerformanceConstraint {
    name: String,
    admissible: Arc<Admissible>,
}

impl PerformanceConstraint {
    pub fn new(
        name: impl Into<String>,
        admissible: impl Fn(Tick, &[f64]) -> bool + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            admissible: Arc::new(admissible),
        }
    }

    /// Accepts every output.
    pub fn universal(name: impl Into<String>) -> Self {
        Self::new(name, |_, _| true)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn admits(&self, t: Tick, y: &[f64]) -> bool {
        (self.admissible)(t, y)
    }
}

impl fmt::Debug for PerformanceConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PerformanceConstraint")
            .field("name", &self.name)
            .finish_non_exhaustive()
    }
}

/// A neighboring behavior, reduced to what the derivation needs.
#[derive(Debug, Clone)]
pub struct LinkedBehavior {
    pub name: String,
    pub pc: PerformanceConstraint,
}

#[derive(Debug, Clone)]
pub struct BehaviorSpec {
    name: String,
    pc: PerformanceConstraint,
    in_behavior: LinkedBehavior,
    out_behavior: LinkedBehavior,
}

impl BehaviorSpec {
    pub fn new(
        name: impl Into<String>,
        pc: PerformanceConstraint,
        in_behavior: LinkedBehavior,
        out_behavior: LinkedBehavior,
    ) -> Result<Self, BehaviorError> {
        let name = name.into();
        for (link, role) in [(&in_behavior, "in-behavior"), (&out_behavior, "out-behavior")] {
            if link.name == name {
                return Err(BehaviorError::SelfLink { name, role });
            }
        }
        Ok(Self {
            name,
            pc,
            in_behavior,
            out_behavior,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn pc(&self) -> &PerformanceConstraint {
        &self.pc
    }

    pub fn in_behavior(&self) -> &LinkedBehavior {
        &self.in_behavior
    }

    pub fn out_behavior(&self) -> &LinkedBehavior {
        &self.out_behavior
    }
}

/// The four transition predicates a world model supplies for one behavior.
///
/// `*_safe_until(t)`: the neighboring behavior still satisfies its performance
/// constraint if the transition happens at or before `t`.
/// `*_feasible(t)`: a transition at `t` lets the behavior on the far side of
/// the transition satisfy its performance constraint throughout.
pub trait TransitionPredicates {
    fn start_safe_until(&self, t: Tick) -> bool;
    fn start_feasible(&self, t: Tick) -> bool;
    fn stop_safe_until(&self, t: Tick) -> bool;
    fn stop_feasible(&self, t: Tick) -> bool;
}

/// Result of a must-window derivation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MustWindow {
    pub window: WindowSet,
    /// Set when the neighboring behavior is already doomed on the whole
    /// horizon (the safe-until predicate never holds).
    pub conflict: bool,
}

/// Must-transition window.
///
/// With `t_last` the final tick of the first run on which `safe_until`
/// holds, the window is the last `margin` ticks of that run:
/// `[t_last + 1 - margin, t_last + 1)`. When the run reaches the end of the
/// horizon there is no deadline and the window is empty.
pub fn derive_must_window(
    safe_until: impl Fn(Tick) -> bool,
    horizon: Interval,
    margin: i64,
) -> MustWindow {
    let Some(first_safe) = horizon.ticks().find(|&t| safe_until(t)) else {
        return MustWindow {
            window: WindowSet::empty(),
            conflict: true,
        };
    };
    let Some(first_unsafe) = (first_safe..horizon.hi()).find(|&t| !safe_until(t)) else {
        return MustWindow {
            window: WindowSet::empty(),
            conflict: false,
        };
    };
    let lo = (first_unsafe - margin.max(1)).max(horizon.lo());
    MustWindow {
        window: WindowSet::span(lo, first_unsafe),
        conflict: false,
    }
}

/// Must-not-transition window: every tick where the transition is infeasible.
pub fn derive_must_not_window(feasible: impl Fn(Tick) -> bool, horizon: Interval) -> WindowSet {
    WindowSet::from_predicate(horizon, |t| !feasible(t))
}

/// The six derived windows plus the final start/stop sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Windows {
    pub mst: WindowSet,
    pub nst: WindowSet,
    pub cst: WindowSet,
    pub msp: WindowSet,
    pub nsp: WindowSet,
    pub csp: WindowSet,
    pub st: WindowSet,
    pub sp: WindowSet,
}

#[derive(Debug, Clone)]
pub struct PrescriptiveConstraints {
    pub y: PerformanceConstraint,
    pub windows: Windows,
    pub derivation_epoch: Tick,
    pub horizon: Interval,
    /// `mst` is doomed (never safe) or entirely inside `nst`.
    pub conflict: bool,
}

impl PrescriptiveConstraints {
    pub fn st(&self) -> &WindowSet {
        &self.windows.st
    }

    pub fn sp(&self) -> &WindowSet {
        &self.windows.sp
    }
}

struct Side {
    must: WindowSet,
    must_not: WindowSet,
    can: WindowSet,
    allowed: WindowSet,
    conflict: bool,
}

fn derive_side(
    safe_until: impl Fn(Tick) -> bool,
    feasible: impl Fn(Tick) -> bool,
    now: Tick,
    horizon: Interval,
    margin: i64,
) -> Side {
    let must = derive_must_window(safe_until, horizon, margin);
    let must_not = derive_must_not_window(feasible, horizon);
    // Time before the must window expires; the whole remaining horizon when
    // there is no deadline.
    let before_expiry = match must.window.sup() {
        Some(sup) => WindowSet::span(now.max(horizon.lo()), sup),
        None => WindowSet::span(now.max(horizon.lo()), horizon.hi()),
    };
    let can = can_window(&must.window, &must_not, &before_expiry);
    let allowed = must
        .window
        .union(&can)
        .intersect(&must_not.complement_unchecked(horizon));
    let conflict = must.conflict || (!must.window.is_empty() && must.window.is_subset(&must_not));
    Side {
        must: must.window,
        must_not,
        can,
        allowed,
        conflict,
    }
}

/// Derives `(Y, ST, SP)` for `spec` from the world's transition predicates.
///
/// `ST = (mst ∪ cst) ∩ ¬nst`, and symmetrically for `SP`.
pub fn derive_prescriptive(
    spec: &BehaviorSpec,
    world: &impl TransitionPredicates,
    now: Tick,
    horizon: Interval,
    margin: i64,
) -> PrescriptiveConstraints {
    let start = derive_side(
        |t| world.start_safe_until(t),
        |t| world.start_feasible(t),
        now,
        horizon,
        margin,
    );
    let stop = derive_side(
        |t| world.stop_safe_until(t),
        |t| world.stop_feasible(t),
        now,
        horizon,
        margin,
    );
    PrescriptiveConstraints {
        y: spec.pc().clone(),
        windows: Windows {
            mst: start.must,
            nst: start.must_not,
            cst: start.can,
            msp: stop.must,
            nsp: stop.must_not,
            csp: stop.can,
            st: start.allowed,
            sp: stop.allowed,
        },
        derivation_epoch: now,
        horizon,
        conflict: start.conflict,
    }
}

/// An executed behavior: start, stop, and one output sample per tick.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorTrace {
    pub st: Tick,
    pub sp: Tick,
    pub samples: Vec<(Tick, Vec<f64>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Clause {
    StartWindow,
    StopWindow,
    Performance,
}

impl Clause {
    pub fn id(self) -> &'static str {
        match self {
            Clause::StartWindow => "start-window",
            Clause::StopWindow => "stop-window",
            Clause::Performance => "performance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub clause: Clause,
    pub tick: Tick,
    pub observed: String,
    pub bound: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{}\t{}\t{}\t{}", v.clause.id(), v.tick, v.observed, v.bound)?;
        }
        Ok(())
    }
}

fn window_miss(
    clause: Clause,
    tick: Tick,
    allowed: &WindowSet,
    must_not: &WindowSet,
    must_not_name: &str,
    allowed_name: &str,
) -> Option<Violation> {
    if allowed.contains(tick) {
        return None;
    }
    let bound = if must_not.contains(tick) {
        format!("{must_not_name}={must_not}")
    } else {
        format!("{allowed_name}={allowed}")
    };
    Some(Violation {
        clause,
        tick,
        observed: tick.to_string(),
        bound,
    })
}

pub(crate) fn format_sample(y: &[f64]) -> String {
    let parts: Vec<String> = y.iter().map(|v| v.to_string()).collect();
    format!("({})", parts.join(","))
}

/// Checks an executed behavior against its prescriptive constraints.
pub fn validate_execution(
    trace: &BehaviorTrace,
    pcs: &PrescriptiveConstraints,
) -> Result<ValidationReport, BehaviorError> {
    if trace.sp <= trace.st {
        return Err(BehaviorError::StopBeforeStart {
            st: trace.st,
            sp: trace.sp,
        });
    }
    let mut violations = Vec::new();
    let w = &pcs.windows;
    violations.extend(window_miss(Clause::StartWindow, trace.st, &w.st, &w.nst, "nst_T", "ST"));
    violations.extend(window_miss(Clause::StopWindow, trace.sp, &w.sp, &w.nsp, "nsp_T", "SP"));

    let mut performance = None;
    for t in trace.st..=trace.sp {
        let y = trace
            .samples
            .iter()
            .find(|(tick, _)| *tick == t)
            .map(|(_, y)| y)
            .ok_or(BehaviorError::MissingSample { tick: t })?;
        if performance.is_none() && !pcs.y.admits(t, y) {
            performance = Some(Violation {
                clause: Clause::Performance,
                tick: t,
                observed: format_sample(y),
                bound: pcs.y.name().to_string(),
            });
        }
    }
    violations.extend(performance);
    Ok(ValidationReport { violations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ws(pairs: &[(Tick, Tick)]) -> WindowSet {
        WindowSet::from_pairs(pairs)
    }

    struct Scripted {
        last_safe: Tick,
        blocked: WindowSet,
    }

    impl TransitionPredicates for Scripted {
        fn start_safe_until(&self, t: Tick) -> bool {
            t <= self.last_safe
        }
        fn start_feasible(&self, t: Tick) -> bool {
            !self.blocked.contains(t)
        }
        fn stop_safe_until(&self, _t: Tick) -> bool {
            true
        }
        fn stop_feasible(&self, _t: Tick) -> bool {
            true
        }
    }

    fn spec() -> BehaviorSpec {
        let link = |n: &str| LinkedBehavior {
            name: n.into(),
            pc: PerformanceConstraint::universal(n),
        };
        BehaviorSpec::new(
            "merge",
            PerformanceConstraint::new("y<=5", |_, y| y[0] <= 5.0),
            link("lane-keep"),
            link("cruise"),
        )
        .unwrap()
    }

    #[test]
    fn must_window_margin() {
        let h = horizon(0, 100).unwrap();
        let must = derive_must_window(|t| t < 80, h, 20);
        assert_eq!(must.window, ws(&[(60, 80)]));
        assert!(!must.conflict);
    }

    #[test]
    fn must_window_absent_when_always_safe() {
        let must = derive_must_window(|_| true, horizon(0, 100).unwrap(), 20);
        assert!(must.window.is_empty());
        assert!(!must.conflict);
    }

    #[test]
    fn must_window_conflict_when_never_safe() {
        let must = derive_must_window(|_| false, horizon(0, 100).unwrap(), 20);
        assert!(must.window.is_empty());
        assert!(must.conflict);
    }

    #[test]
    fn empty_horizon_rejected() {
        assert_eq!(horizon(5, 5), Err(BehaviorError::EmptyHorizon { lo: 5, hi: 5 }));
    }

    #[test]
    fn must_not_window_is_predicate_image() {
        let h = horizon(0, 100).unwrap();
        let nst = derive_must_not_window(|t| !((0..20).contains(&t) || (50..70).contains(&t)), h);
        assert_eq!(nst, ws(&[(0, 20), (50, 70)]));
        assert!(derive_must_not_window(|_| true, h).is_empty());
    }

    #[test]
    fn prescriptive_start_set() {
        let world = Scripted {
            last_safe: 79,
            blocked: ws(&[(0, 20)]),
        };
        let pcs = derive_prescriptive(&spec(), &world, 0, horizon(0, 100).unwrap(), 20);
        assert_eq!(pcs.windows.mst, ws(&[(60, 80)]));
        assert_eq!(pcs.windows.nst, ws(&[(0, 20)]));
        assert_eq!(pcs.windows.cst, ws(&[(20, 60)]));
        assert_eq!(pcs.windows.st, ws(&[(20, 80)]));
        assert!(!pcs.conflict);
    }

    #[test]
    fn prescriptive_conflict_when_must_inside_must_not() {
        let world = Scripted {
            last_safe: 79,
            blocked: ws(&[(0, 80)]),
        };
        let pcs = derive_prescriptive(&spec(), &world, 0, horizon(0, 100).unwrap(), 20);
        assert!(pcs.conflict);
        assert!(pcs.windows.st.is_empty());
    }

    #[test]
    fn self_link_rejected() {
        let link = LinkedBehavior {
            name: "merge".into(),
            pc: PerformanceConstraint::universal("x"),
        };
        let other = LinkedBehavior {
            name: "cruise".into(),
            pc: PerformanceConstraint::universal("x"),
        };
        let err = BehaviorSpec::new("merge", PerformanceConstraint::universal("pc"), link, other);
        assert!(matches!(err, Err(BehaviorError::SelfLink { .. })));
    }

    fn pcs_for_validation() -> PrescriptiveConstraints {
        let world = Scripted {
            last_safe: 79,
            blocked: ws(&[(0, 20)]),
        };
        derive_prescriptive(&spec(), &world, 0, horizon(0, 100).unwrap(), 20)
    }

    fn trace(st: Tick, sp: Tick, value: impl Fn(Tick) -> f64) -> BehaviorTrace {
        BehaviorTrace {
            st,
            sp,
            samples: (st..=sp).map(|t| (t, vec![value(t)])).collect(),
        }
    }

    #[test]
    fn clean_execution() {
        let report = validate_execution(&trace(30, 40, |_| 1.0), &pcs_for_validation()).unwrap();
        assert!(report.is_clean(), "{report}");
    }

    #[test]
    fn start_inside_must_not_is_named() {
        let report = validate_execution(&trace(10, 40, |_| 1.0), &pcs_for_validation()).unwrap();
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].clause, Clause::StartWindow);
        assert!(report.violations[0].bound.starts_with("nst_T"));
    }

    #[test]
    fn first_performance_breach_reported() {
        let report =
            validate_execution(&trace(30, 40, |t| if t >= 33 { 9.0 } else { 0.0 }), &pcs_for_validation())
                .unwrap();
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].tick, 33);
        assert_eq!(report.to_string(), "performance\t33\t(9)\ty<=5\n");
    }

    #[test]
    fn reversed_trace_rejected() {
        let err = validate_execution(&trace(40, 40, |_| 0.0), &pcs_for_validation());
        assert_eq!(err, Err(BehaviorError::StopBeforeStart { st: 40, sp: 40 }));
    }

    #[test]
    fn missing_sample_rejected() {
        let mut t = trace(30, 40, |_| 0.0);
        t.samples.retain(|(tick, _)| *tick != 35);
        assert_eq!(
            validate_execution(&t, &pcs_for_validation()),
            Err(BehaviorError::MissingSample { tick: 35 })
        );
    }
}
