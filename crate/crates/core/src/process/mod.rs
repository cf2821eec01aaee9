//! Descriptive constraints on the controlled process.
//!
//! The process is modeled as `(u, x, p) -f-> (ẋ, y)`. Every element of
//! `(u, x, p, ẋ, y)` is constrained through constraint-assumption pairs
//! `{constraint | assumption on system/human | assumption on environment}`,
//! each tagged with the arrow of the constraint map it came from. A pair only
//! contributes while both of its assumptions hold.

mod assumption;
mod valueset;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use assumption::{Assumption, Atom, CmpOp, CondExpr, CondValue, ConditionSnapshot, ExprError};
pub use valueset::ValueSet;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProcessError {
    #[error(
        "pair {id:?} has no assumption on either side and no justification; \
         constraints and assumptions must appear in pairs unless justified"
    )]
    Unjustified { id: String },
    #[error("pair {id:?} targets {target}, which the construct does not declare")]
    UnknownTarget { id: String, target: String },
    #[error("pair id {id:?} is already registered")]
    DuplicatePair { id: String },
    #[error("pair {id:?}: {source}")]
    Condition {
        id: String,
        #[source]
        source: ExprError,
    },
    #[error("unknown element {0:?}")]
    BadElement(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Space {
    U,
    X,
    P,
    XDot,
    Y,
}

impl Space {
    pub const ALL: [Space; 5] = [Space::U, Space::X, Space::P, Space::XDot, Space::Y];

    pub fn prefix(self) -> &'static str {
        match self {
            Space::U => "u",
            Space::X => "x",
            Space::P => "p",
            Space::XDot => "xdot",
            Space::Y => "y",
        }
    }
}

/// One scalar element of `(u, x, p, ẋ, y)`, e.g. `x[1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ElementRef {
    pub space: Space,
    pub index: usize,
}

impl ElementRef {
    pub fn new(space: Space, index: usize) -> Self {
        Self { space, index }
    }
}

impl fmt::Display for ElementRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.space.prefix(), self.index)
    }
}

impl FromStr for ElementRef {
    type Err = ProcessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ProcessError::BadElement(s.to_string());
        let (prefix, rest) = s.split_once('[').ok_or_else(bad)?;
        let index: usize = rest.strip_suffix(']').ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let space = Space::ALL
            .into_iter()
            .find(|sp| sp.prefix() == prefix)
            .ok_or_else(bad)?;
        Ok(Self { space, index })
    }
}

impl Serialize for ElementRef {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ElementRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Which edge of the constraint map produced a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arrow {
    /// The mechanism `f` only processes a finite set of inputs.
    #[serde(rename = "A1_mechanism")]
    A1Mechanism,
    /// Everything the environment may feed in.
    #[serde(rename = "A2_env_inputs")]
    A2EnvInputs,
    /// What the environment requires of the outputs.
    #[serde(rename = "A3_env_output_requirement")]
    A3EnvOutputRequirement,
    /// Finite design / manufacture / natural capacity of the system or human.
    #[serde(rename = "A4_capacity")]
    A4Capacity,
    /// Consistency of the constraint sets with `f` itself.
    #[serde(rename = "A5_internal_consistency")]
    A5InternalConsistency,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintAssumptionPair {
    pub id: String,
    pub target: ElementRef,
    pub constraint: ValueSet,
    pub assumption_system: Assumption,
    pub assumption_env: Assumption,
    pub arrow: Arrow,
    pub justification: String,
}

impl ConstraintAssumptionPair {
    pub fn validate(&self) -> Result<(), ProcessError> {
        if self.assumption_system.is_na()
            && self.assumption_env.is_na()
            && self.justification.trim().is_empty()
        {
            return Err(ProcessError::Unjustified { id: self.id.clone() });
        }
        Ok(())
    }

    /// `Ok(None)` when both assumptions hold, else the failing side(s).
    fn failed_assumptions(&self, conditions: &ConditionSnapshot) -> Result<Option<String>, ProcessError> {
        let wrap = |source| ProcessError::Condition {
            id: self.id.clone(),
            source,
        };
        let sys = self.assumption_system.eval(conditions).map_err(wrap)?;
        let env = self.assumption_env.eval(conditions).map_err(wrap)?;
        let mut failed = Vec::new();
        if !sys {
            failed.push(self.assumption_system.to_string());
        }
        if !env {
            failed.push(self.assumption_env.to_string());
        }
        Ok((!failed.is_empty()).then(|| failed.join(" && ")))
    }
}

impl fmt::Display for ConstraintAssumptionPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{{{}|{}|{}}}",
            self.id, self.assumption_system, self.assumption_env
        )
    }
}

type Dynamics = dyn Fn(&[f64], &[f64], &[f64]) -> (Vec<f64>, Vec<f64>) + Send + Sync;
type Projection = dyn Fn(&mut [f64]) + Send + Sync;

/// The process construct `(u, x, p) -f-> (ẋ, y)` on the tick lattice.
#[derive(Clone)]
pub struct Construct {
    pub dt: f64,
    pub input_names: Vec<String>,
    pub state_names: Vec<String>,
    pub param_names: Vec<String>,
    pub output_names: Vec<String>,
    pub params: Vec<f64>,
    /// Finite sampling ranges for `u`, `x` and `p` (used where a set is unbounded).
    pub nominal_u: Vec<(f64, f64)>,
    pub nominal_x: Vec<(f64, f64)>,
    dynamics: Arc<Dynamics>,
    projection: Option<Arc<Projection>>,
}

impl fmt::Debug for Construct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Construct")
            .field("dt", &self.dt)
            .field("state_names", &self.state_names)
            .field("input_names", &self.input_names)
            .finish_non_exhaustive()
    }
}

pub struct ConstructBuilder {
    inner: Construct,
}

impl ConstructBuilder {
    pub fn inputs(mut self, names: &[&str], nominal: &[(f64, f64)]) -> Self {
        self.inner.input_names = names.iter().map(|s| s.to_string()).collect();
        self.inner.nominal_u = nominal.to_vec();
        self
    }

    pub fn states(mut self, names: &[&str], nominal: &[(f64, f64)]) -> Self {
        self.inner.state_names = names.iter().map(|s| s.to_string()).collect();
        self.inner.nominal_x = nominal.to_vec();
        self
    }

    pub fn params(mut self, names: &[&str], values: &[f64]) -> Self {
        self.inner.param_names = names.iter().map(|s| s.to_string()).collect();
        self.inner.params = values.to_vec();
        self
    }

    pub fn outputs(mut self, names: &[&str]) -> Self {
        self.inner.output_names = names.iter().map(|s| s.to_string()).collect();
        self
    }

    /// Clamp applied after every integration step (e.g. no negative speed).
    pub fn projection(mut self, p: impl Fn(&mut [f64]) + Send + Sync + 'static) -> Self {
        self.inner.projection = Some(Arc::new(p));
        self
    }

    pub fn build(self) -> Construct {
        self.inner
    }
}

impl Construct {
    pub fn builder(
        dt: f64,
        dynamics: impl Fn(&[f64], &[f64], &[f64]) -> (Vec<f64>, Vec<f64>) + Send + Sync + 'static,
    ) -> ConstructBuilder {
        ConstructBuilder {
            inner: Construct {
                dt,
                input_names: Vec::new(),
                state_names: Vec::new(),
                param_names: Vec::new(),
                output_names: Vec::new(),
                params: Vec::new(),
                nominal_u: Vec::new(),
                nominal_x: Vec::new(),
                dynamics: Arc::new(dynamics),
                projection: None,
            },
        }
    }

    pub fn dim(&self, space: Space) -> usize {
        match space {
            Space::U => self.input_names.len(),
            Space::X | Space::XDot => self.state_names.len(),
            Space::P => self.param_names.len(),
            Space::Y => self.output_names.len(),
        }
    }

    /// Resolves `x.speed`, `u.accel`, `xdot.speed` or positional `x[1]`.
    pub fn resolve(&self, text: &str) -> Result<ElementRef, ProcessError> {
        if let Ok(r) = text.parse::<ElementRef>() {
            return if r.index < self.dim(r.space) {
                Ok(r)
            } else {
                Err(ProcessError::BadElement(text.to_string()))
            };
        }
        let (prefix, name) = text
            .split_once('.')
            .ok_or_else(|| ProcessError::BadElement(text.to_string()))?;
        let space = Space::ALL
            .into_iter()
            .find(|sp| sp.prefix() == prefix)
            .ok_or_else(|| ProcessError::BadElement(text.to_string()))?;
        let names = match space {
            Space::U => &self.input_names,
            Space::X | Space::XDot => &self.state_names,
            Space::P => &self.param_names,
            Space::Y => &self.output_names,
        };
        names
            .iter()
            .position(|n| n == name)
            .map(|index| ElementRef { space, index })
            .ok_or_else(|| ProcessError::BadElement(text.to_string()))
    }

    pub fn eval(&self, u: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (self.dynamics)(u, x, &self.params)
    }

    pub fn eval_with(&self, u: &[f64], x: &[f64], p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (self.dynamics)(u, x, p)
    }

    /// One explicit first-order tick: `x' = x + dt·ẋ`, then the projection.
    pub fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let (xdot, _) = self.eval(u, x);
        let mut next: Vec<f64> = x.iter().zip(&xdot).map(|(xi, di)| xi + self.dt * di).collect();
        if let Some(p) = &self.projection {
            p(&mut next);
        }
        next
    }
}

/// A concrete `(u, x, p, ẋ, y)` sample. `None` marks an element that is not
/// meaningful in the current mode of the process.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ElementValues {
    pub u: Vec<Option<f64>>,
    pub x: Vec<Option<f64>>,
    pub p: Vec<Option<f64>>,
    pub xdot: Vec<Option<f64>>,
    pub y: Vec<Option<f64>>,
}

impl ElementValues {
    pub fn all(u: &[f64], x: &[f64], p: &[f64], xdot: &[f64], y: &[f64]) -> Self {
        let wrap = |v: &[f64]| v.iter().copied().map(Some).collect();
        Self {
            u: wrap(u),
            x: wrap(x),
            p: wrap(p),
            xdot: wrap(xdot),
            y: wrap(y),
        }
    }

    pub fn get(&self, r: ElementRef) -> Option<f64> {
        let v = match r.space {
            Space::U => &self.u,
            Space::X => &self.x,
            Space::P => &self.p,
            Space::XDot => &self.xdot,
            Space::Y => &self.y,
        };
        v.get(r.index).copied().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedPair {
    pub id: String,
    pub failed: String,
}

/// Aggregated `(U, X, P, Ẋ, Y)` with the assumptions they rest on.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DescriptiveConstraints {
    pub sets: BTreeMap<ElementRef, ValueSet>,
    pub active: Vec<String>,
    pub excluded: Vec<ExcludedPair>,
    /// Per-space conjunction of the active assumptions (`AS_x`, `AS_u`, ...).
    pub assumptions: BTreeMap<String, Vec<String>>,
}

impl DescriptiveConstraints {
    pub fn set(&self, r: ElementRef) -> ValueSet {
        self.sets.get(&r).cloned().unwrap_or_else(ValueSet::universal)
    }

    pub fn admits(&self, r: ElementRef, v: f64) -> bool {
        self.sets.get(&r).is_none_or(|s| s.contains(v))
    }

    /// Every constrained element whose sampled value lies outside its set.
    pub fn violations(&self, values: &ElementValues) -> Vec<(ElementRef, f64)> {
        self.sets
            .iter()
            .filter_map(|(r, set)| {
                let v = values.get(*r)?;
                (!set.contains(v)).then_some((*r, v))
            })
            .collect()
    }

    /// The full assumption conjunction `AS`.
    pub fn assumption_conjunction(&self) -> Vec<String> {
        self.assumptions.values().flatten().cloned().collect()
    }
}

#[derive(Debug, Clone)]
pub struct ProcessModel {
    construct: Construct,
    pairs: Vec<ConstraintAssumptionPair>,
    stale: bool,
}

impl ProcessModel {
    pub fn new(construct: Construct) -> Self {
        Self {
            construct,
            pairs: Vec::new(),
            stale: true,
        }
    }

    pub fn construct(&self) -> &Construct {
        &self.construct
    }

    pub fn pairs(&self) -> &[ConstraintAssumptionPair] {
        &self.pairs
    }

    pub fn is_stale(&self) -> bool {
        self.stale
    }

    pub fn add_pair(&mut self, pair: ConstraintAssumptionPair) -> Result<(), ProcessError> {
        pair.validate()?;
        if pair.target.index >= self.construct.dim(pair.target.space) {
            return Err(ProcessError::UnknownTarget {
                id: pair.id.clone(),
                target: pair.target.to_string(),
            });
        }
        if self.pairs.iter().any(|p| p.id == pair.id) {
            return Err(ProcessError::DuplicatePair { id: pair.id });
        }
        self.pairs.push(pair);
        self.stale = true;
        Ok(())
    }

    pub fn with_pair(mut self, pair: ConstraintAssumptionPair) -> Result<Self, ProcessError> {
        self.add_pair(pair)?;
        Ok(self)
    }

    /// Replaces the constraint of a registered pair (scripted parameter edits).
    pub fn set_constraint(&mut self, id: &str, constraint: ValueSet) -> bool {
        match self.pairs.iter_mut().find(|p| p.id == id) {
            Some(p) => {
                p.constraint = constraint;
                self.stale = true;
                true
            }
            None => false,
        }
    }

    /// Every condition variable referenced by some assumption.
    pub fn condition_variables(&self) -> Vec<String> {
        let mut vars: Vec<String> = self
            .pairs
            .iter()
            .flat_map(|p| [&p.assumption_system, &p.assumption_env])
            .filter_map(|a| match a {
                Assumption::Holds(e) => Some(e.variables().map(str::to_string).collect::<Vec<_>>()),
                Assumption::NotApplicable => None,
            })
            .flatten()
            .collect();
        vars.sort();
        vars.dedup();
        vars
    }

    pub fn aggregate(&mut self, conditions: &ConditionSnapshot) -> Result<DescriptiveConstraints, ProcessError> {
        let out = aggregate(self, conditions)?;
        self.stale = false;
        Ok(out)
    }
}

/// Intersects the constraints of every pair whose assumptions hold.
pub fn aggregate(
    model: &ProcessModel,
    conditions: &ConditionSnapshot,
) -> Result<DescriptiveConstraints, ProcessError> {
    let mut out = DescriptiveConstraints::default();
    for pair in &model.pairs {
        match pair.failed_assumptions(conditions)? {
            Some(failed) => out.excluded.push(ExcludedPair {
                id: pair.id.clone(),
                failed,
            }),
            None => {
                let set = out.sets.entry(pair.target).or_insert_with(ValueSet::universal);
                *set = set.intersect(&pair.constraint);
                out.active.push(pair.id.clone());
                let bucket = out
                    .assumptions
                    .entry(pair.target.space.prefix().to_string())
                    .or_default();
                for a in [&pair.assumption_system, &pair.assumption_env] {
                    if let Assumption::Holds(e) = a {
                        let text = e.to_string();
                        if !bucket.contains(&text) {
                            bucket.push(text);
                        }
                    }
                }
            }
        }
    }
    out.active.sort();
    out.excluded.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionChange {
    pub pair: String,
    /// The assumption text whose truth flipped.
    pub assumption: String,
    pub now_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetChange {
    pub element: ElementRef,
    pub before: ValueSet,
    pub after: ValueSet,
}

impl SetChange {
    pub fn tightened(&self) -> bool {
        self.after.is_subset(&self.before) && self.after != self.before
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AssumptionDelta {
    pub changes: Vec<AssumptionChange>,
    pub set_changes: Vec<SetChange>,
    pub current: DescriptiveConstraints,
}

impl AssumptionDelta {
    pub fn is_empty(&self) -> bool {
        self.changes.is_empty() && self.set_changes.is_empty()
    }
}

/// Re-aggregates under `conditions` and diffs against `previous`.
pub fn watch_assumptions(
    model: &ProcessModel,
    conditions: &ConditionSnapshot,
    previous: &DescriptiveConstraints,
) -> Result<AssumptionDelta, ProcessError> {
    let current = aggregate(model, conditions)?;
    let mut changes = Vec::new();
    for ex in &current.excluded {
        if previous.active.contains(&ex.id) {
            changes.push(AssumptionChange {
                pair: ex.id.clone(),
                assumption: ex.failed.clone(),
                now_holds: false,
            });
        }
    }
    for ex in &previous.excluded {
        if current.active.contains(&ex.id) {
            changes.push(AssumptionChange {
                pair: ex.id.clone(),
                assumption: ex.failed.clone(),
                now_holds: true,
            });
        }
    }
    let mut elements: Vec<ElementRef> = previous.sets.keys().chain(current.sets.keys()).copied().collect();
    elements.sort();
    elements.dedup();
    let set_changes = elements
        .into_iter()
        .filter_map(|e| {
            let (before, after) = (previous.set(e), current.set(e));
            (before != after).then_some(SetChange {
                element: e,
                before,
                after,
            })
        })
        .collect();
    Ok(AssumptionDelta {
        changes,
        set_changes,
        current,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arrow5Violation {
    pub sample: usize,
    pub element: ElementRef,
    pub value: f64,
    pub bound: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub samples: usize,
    pub seed: u64,
    pub violations: Vec<Arrow5Violation>,
}

impl ConsistencyReport {
    pub fn is_consistent(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ConsistencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "arrow-5 check: {} samples, seed {}, {} violations",
            self.samples,
            self.seed,
            self.violations.len()
        )?;
        for v in &self.violations {
            writeln!(f, "sample {}\t{}\t{}\t{}", v.sample, v.element, v.value, v.bound)?;
        }
        Ok(())
    }
}

fn sample_from(set: &ValueSet, nominal: (f64, f64), rng: &mut ChaCha8Rng) -> Option<f64> {
    let bounded = set.intersect(&ValueSet::interval(nominal.0, nominal.1));
    let total: f64 = bounded.pieces().iter().map(|(lo, hi)| hi - lo).sum();
    if bounded.is_empty() {
        return None;
    }
    if total <= 0.0 {
        return Some(bounded.pieces()[0].0);
    }
    let mut pick = rng.gen_range(0.0..total);
    for &(lo, hi) in bounded.pieces() {
        let w = hi - lo;
        if pick <= w {
            return Some(lo + pick);
        }
        pick -= w;
    }
    bounded.upper()
}

/// Seeded Monte-Carlo falsifier for consistency of `(U, X, P)` with
/// `(Ẋ, Y)` under `f`.
pub fn check_arrow5(
    model: &ProcessModel,
    dcs: &DescriptiveConstraints,
    samples: usize,
    seed: u64,
) -> ConsistencyReport {
    let c = &model.construct;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    'outer: for i in 0..samples {
        let mut draw = |space: Space, nominal: &[(f64, f64)]| -> Option<Vec<f64>> {
            (0..c.dim(space))
                .map(|k| {
                    let range = nominal.get(k).copied().unwrap_or((-1.0, 1.0));
                    sample_from(&dcs.set(ElementRef::new(space, k)), range, &mut rng)
                })
                .collect()
        };
        let Some(u) = draw(Space::U, &c.nominal_u) else { break 'outer };
        let Some(x) = draw(Space::X, &c.nominal_x) else { break 'outer };
        let nominal_p: Vec<(f64, f64)> = c.params.iter().map(|&v| (v, v)).collect();
        let Some(p) = draw(Space::P, &nominal_p) else { break 'outer };
        let (xdot, y) = c.eval_with(&u, &x, &p);
        for (space, values) in [(Space::XDot, &xdot), (Space::Y, &y)] {
            for (k, &v) in values.iter().enumerate() {
                let r = ElementRef::new(space, k);
                if !dcs.admits(r, v) {
                    violations.push(Arrow5Violation {
                        sample: i,
                        element: r,
                        value: v,
                        bound: dcs.set(r).to_string(),
                    });
                }
            }
        }
    }
    ConsistencyReport {
        samples,
        seed,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conds(pairs: &[(&str, CondValue)]) -> ConditionSnapshot {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn gamma_model() -> ProcessModel {
        let construct = Construct::builder(0.1, |u, x, _| (vec![u[0] - x[0]], vec![x[0]]))
            .inputs(&["gamma_cmd"], &[(0.0, 20.0)])
            .states(&["gamma"], &[(0.0, 20.0)])
            .outputs(&["gamma"])
            .build();
        let pair = |id: &str, lo, hi, sys: &str, env: &str, arrow, just: &str| ConstraintAssumptionPair {
            id: id.into(),
            target: ElementRef::new(Space::X, 0),
            constraint: ValueSet::interval(lo, hi),
            assumption_system: sys.parse().unwrap(),
            assumption_env: env.parse().unwrap(),
            arrow,
            justification: just.into(),
        };
        ProcessModel::new(construct)
            .with_pair(pair("G1", 3.0, 10.0, "BL", "CW", Arrow::A1Mechanism, ""))
            .unwrap()
            .with_pair(pair("G3", 5.0, 90.0, "NA", "Nom", Arrow::A3EnvOutputRequirement, "vertiport rule"))
            .unwrap()
            .with_pair(pair("G4", 2.0, 8.0, "PD", "EL", Arrow::A4Capacity, ""))
            .unwrap()
    }

    fn all_true() -> ConditionSnapshot {
        conds(&[
            ("BL", CondValue::Bool(true)),
            ("CW", CondValue::Bool(true)),
            ("Nom", CondValue::Bool(true)),
            ("PD", CondValue::Bool(true)),
            ("EL", CondValue::Bool(true)),
        ])
    }

    #[test]
    fn unjustified_pair_rejected() {
        let mut m = gamma_model();
        let err = m.add_pair(ConstraintAssumptionPair {
            id: "lonely".into(),
            target: ElementRef::new(Space::X, 0),
            constraint: ValueSet::interval(0.0, 1.0),
            assumption_system: Assumption::NotApplicable,
            assumption_env: Assumption::NotApplicable,
            arrow: Arrow::A4Capacity,
            justification: "  ".into(),
        });
        assert_eq!(err, Err(ProcessError::Unjustified { id: "lonely".into() }));
        assert!(err.unwrap_err().to_string().contains("must appear in pairs"));
    }

    #[test]
    fn unknown_target_rejected() {
        let mut m = gamma_model();
        let err = m.add_pair(ConstraintAssumptionPair {
            id: "far".into(),
            target: ElementRef::new(Space::X, 3),
            constraint: ValueSet::universal(),
            assumption_system: "BL".parse().unwrap(),
            assumption_env: Assumption::NotApplicable,
            arrow: Arrow::A4Capacity,
            justification: String::new(),
        });
        assert!(matches!(err, Err(ProcessError::UnknownTarget { .. })));
    }

    #[test]
    fn aggregation_intersects_active_pairs() {
        let m = gamma_model();
        let gamma = ElementRef::new(Space::X, 0);
        let dcs = aggregate(&m, &all_true()).unwrap();
        assert_eq!(dcs.set(gamma), ValueSet::interval(5.0, 8.0));
        assert_eq!(dcs.assumption_conjunction(), vec!["BL", "CW", "Nom", "PD", "EL"]);

        let mut c = all_true();
        c.insert("Nom".into(), CondValue::Bool(false));
        let dcs = aggregate(&m, &c).unwrap();
        assert_eq!(dcs.set(gamma), ValueSet::interval(3.0, 8.0));
        assert_eq!(dcs.excluded, vec![ExcludedPair { id: "G3".into(), failed: "Nom".into() }]);
    }

    #[test]
    fn missing_condition_named() {
        let m = gamma_model();
        let mut c = all_true();
        c.remove("EL");
        let err = aggregate(&m, &c).unwrap_err();
        assert!(err.to_string().contains("\"EL\""), "{err}");
    }

    #[test]
    fn unconstrained_element_is_universal() {
        let m = ProcessModel::new(gamma_model().construct().clone());
        let dcs = aggregate(&m, &ConditionSnapshot::new()).unwrap();
        assert!(dcs.set(ElementRef::new(Space::X, 0)).is_universal());
    }

    #[test]
    fn watch_reports_flipped_assumption() {
        let m = gamma_model();
        let before = aggregate(&m, &all_true()).unwrap();
        assert!(watch_assumptions(&m, &all_true(), &before).unwrap().is_empty());

        let mut c = all_true();
        c.insert("BL".into(), CondValue::Bool(false));
        let delta = watch_assumptions(&m, &c, &before).unwrap();
        assert_eq!(
            delta.changes,
            vec![AssumptionChange { pair: "G1".into(), assumption: "BL".into(), now_holds: false }]
        );
        // Γ3∩Γ4 = [5,8] either way: dropping Γ1 does not change the set
        assert!(delta.set_changes.is_empty());
        assert!(!delta.current.active.contains(&"G1".to_string()));
    }

    #[test]
    fn element_resolution() {
        let c = gamma_model().construct().clone();
        assert_eq!(c.resolve("x.gamma").unwrap(), ElementRef::new(Space::X, 0));
        assert_eq!(c.resolve("xdot[0]").unwrap(), ElementRef::new(Space::XDot, 0));
        assert!(c.resolve("x[1]").is_err());
        assert!(c.resolve("q.gamma").is_err());
    }

    #[test]
    fn arrow5_identity_is_consistent() {
        let c = Construct::builder(0.1, |u, _x, _| (u.to_vec(), u.to_vec()))
            .inputs(&["v"], &[(-5.0, 5.0)])
            .states(&["s"], &[(-5.0, 5.0)])
            .outputs(&["v"])
            .build();
        let m = ProcessModel::new(c);
        let dcs = aggregate(&m, &ConditionSnapshot::new()).unwrap();
        assert!(check_arrow5(&m, &dcs, 1000, 7).is_consistent());
    }

    #[test]
    fn arrow5_flags_linear_image_outside_bound() {
        // ẋ = 2u with u ∈ [0,1] has image [0,2]; Ẋ = [0,1] must fail for u > 0.5
        let c = Construct::builder(0.1, |u, _x, _| (vec![2.0 * u[0]], vec![]))
            .inputs(&["u"], &[(0.0, 1.0)])
            .states(&["s"], &[(0.0, 1.0)])
            .build();
        let m = ProcessModel::new(c)
            .with_pair(ConstraintAssumptionPair {
                id: "U".into(),
                target: ElementRef::new(Space::U, 0),
                constraint: ValueSet::interval(0.0, 1.0),
                assumption_system: Assumption::NotApplicable,
                assumption_env: Assumption::NotApplicable,
                arrow: Arrow::A1Mechanism,
                justification: "actuator range".into(),
            })
            .unwrap()
            .with_pair(ConstraintAssumptionPair {
                id: "Xd".into(),
                target: ElementRef::new(Space::XDot, 0),
                constraint: ValueSet::interval(0.0, 1.0),
                assumption_system: Assumption::NotApplicable,
                assumption_env: Assumption::NotApplicable,
                arrow: Arrow::A4Capacity,
                justification: "rate limit".into(),
            })
            .unwrap();
        let dcs = aggregate(&m, &ConditionSnapshot::new()).unwrap();
        let report = check_arrow5(&m, &dcs, 2000, 11);
        assert!(!report.is_consistent());
        assert!(report.violations.iter().all(|v| v.value > 1.0 && v.value <= 2.0));
        // about half of the samples have u > 0.5
        let frac = report.violations.len() as f64 / 2000.0;
        assert!((0.4..0.6).contains(&frac), "{frac}");
        assert_eq!(report, check_arrow5(&m, &dcs, 2000, 11));
    }
}
