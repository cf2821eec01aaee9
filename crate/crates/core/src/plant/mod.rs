//! Controlled processes: the lane-merge vehicle and the eVTOL descent.
//!
//! A plant couples a continuous [`Construct`] with a discrete behavior
//! phase ([`Mode`]) and knows how to project its environment forward in
//! time. Everything the controller and the monitor need from a concrete
//! process goes through the [`Plant`] trait.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::behavior::{BehaviorSpec, TransitionPredicates};
use crate::process::{ConditionSnapshot, ValueSet, Construct, DescriptiveConstraints, ElementRef, ElementValues};
use crate::window::{Interval, Tick, WindowSet};

pub mod descent;
pub mod merge;

pub use descent::DescentPlant;
pub use merge::MergePlant;

/// Phase of the intended behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "kebab-case")]
pub enum Mode {
    /// Still in the in-behavior (lane keeping, level flight).
    Before,
    /// The behavior was started by the command issued at `since`.
    Active { since: Tick },
    /// The behavior completed at `at`.
    Done { at: Tick },
}

impl Mode {
    pub fn is_before(self) -> bool {
        matches!(self, Mode::Before)
    }

    pub fn is_done(self) -> bool {
        matches!(self, Mode::Done { .. })
    }
}

/// A main-lane vehicle moving at constant speed from an anchor point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: String,
    pub anchor_tick: Tick,
    pub anchor_pos: f64,
    /// `None` when the controller is not allowed to see it.
    pub speed: Option<f64>,
}

impl Vehicle {
    pub fn position(&self, t: Tick, dt: f64) -> f64 {
        let speed = self.speed.unwrap_or(0.0);
        self.anchor_pos + speed * dt * (t - self.anchor_tick) as f64
    }

    /// Re-anchor at `t` so later speed edits keep the position continuous.
    pub fn reanchor(&mut self, t: Tick, dt: f64) {
        self.anchor_pos = self.position(t, dt);
        self.anchor_tick = t;
    }
}

/// What surrounds the ego process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Environment {
    Traffic { vehicles: Vec<Vehicle> },
    Approach {
        /// Ground position of the pad in use.
        pad: f64,
        corridor_busy: WindowSet,
        pad_busy: WindowSet,
    },
}

/// Everything the controller may see at one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSnapshot {
    pub tick: Tick,
    pub state: Vec<f64>,
    pub mode: Mode,
    pub env: Environment,
    pub conditions: ConditionSnapshot,
    /// Constraint edits in force, keyed by pair id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<String, ValueSet>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Terminal {
    Merged,
    Landed,
    FallbackComplete,
    Hazard,
    Horizon,
    Halted,
}

impl Terminal {
    pub fn as_str(self) -> &'static str {
        match self {
            Terminal::Merged => "merged",
            Terminal::Landed => "landed",
            Terminal::FallbackComplete => "fallback-complete",
            Terminal::Hazard => "hazard",
            Terminal::Horizon => "horizon",
            Terminal::Halted => "halted",
        }
    }
}

/// A reference program: hold one control until `start`, then another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Program {
    pub start: Tick,
    pub hold: Vec<f64>,
    pub during: Vec<f64>,
}

impl Program {
    pub fn control_at(&self, t: Tick) -> &[f64] {
        if t < self.start {
            &self.hold
        } else {
            &self.during
        }
    }

    /// Largest absolute control value, used as a tie-break.
    pub fn peak(&self) -> f64 {
        self.hold
            .iter()
            .chain(&self.during)
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Inputs for window derivation at one tick.
pub struct PlanningView<'a> {
    pub snapshot: &'a WorldSnapshot,
    pub dcs: &'a DescriptiveConstraints,
    /// Controls already committed for ticks `now..now + committed.len()`.
    pub committed: &'a [Vec<f64>],
    /// The active plan, continued past the committed controls.
    pub continuation: Option<&'a Program>,
    pub horizon: Interval,
}

impl PlanningView<'_> {
    pub fn now(&self) -> Tick {
        self.snapshot.tick
    }

    /// First tick whose control is still open.
    pub fn earliest_effect(&self) -> Tick {
        self.snapshot.tick + self.committed.len() as Tick
    }
}

pub trait Plant: Send + Sync {
    fn name(&self) -> &'static str;
    fn construct(&self) -> &Construct;
    fn behavior(&self) -> &BehaviorSpec;
    /// Names of the entries of [`Plant::behavior_output`].
    fn output_names(&self) -> &'static [&'static str];

    /// Control applied when nothing was committed for a tick.
    fn idle_control(&self) -> Vec<f64>;
    /// Phase after applying `u` at tick `t` and reaching `x_next`.
    fn next_mode(&self, mode: Mode, u: &[f64], x_next: &[f64], t: Tick) -> Mode;

    fn step(&self, x: &[f64], mode: Mode, u: &[f64], t: Tick) -> (Vec<f64>, Mode) {
        let next = self.construct().step(x, u);
        let m = self.next_mode(mode, u, &next, t);
        (next, m)
    }

    /// Sample fed to the performance constraints at tick `t`.
    fn behavior_output(&self, t: Tick, x: &[f64], env: &Environment) -> Vec<f64>;
    /// Element values for the descriptive check; `u` is absent for the
    /// last state of a rollout.
    fn element_values(&self, x: &[f64], mode: Mode, u: Option<&[f64]>) -> ElementValues;

    fn predicates<'a>(&'a self, view: &'a PlanningView<'a>) -> Box<dyn TransitionPredicates + 'a>;

    /// Reference candidates starting the behavior at `start`, in
    /// preference order.
    fn family(
        &self,
        start: Tick,
        dcs: &DescriptiveConstraints,
        x: &[f64],
        mode: Mode,
        t: Tick,
        env: &Environment,
    ) -> Vec<Program>;
    /// Constant controls tried when the committed segment has to be patched.
    /// `None` entries keep the committed behavior command of each tick.
    fn patch_family(&self, dcs: &DescriptiveConstraints) -> Vec<PatchControl>;
    /// Committed control with a patch applied.
    fn apply_patch(&self, committed: &[f64], patch: &PatchControl) -> Vec<f64>;
    /// Tracking law: reference control corrected by the state error.
    fn track(&self, reference_u: &[f64], x_ref: &[f64], x_hat: &[f64], dcs: &DescriptiveConstraints, gain: f64) -> Vec<f64>;

    fn fallback_control(&self, x: &[f64], mode: Mode, dcs: &DescriptiveConstraints) -> Vec<f64>;
    fn fallback_complete(&self, x: &[f64], mode: Mode) -> bool;
    /// Terminal condition of the true world, if any.
    fn terminal(&self, snapshot: &WorldSnapshot, in_fallback: bool) -> Option<Terminal>;

    /// Element the tracking error is measured on.
    fn tracked_element(&self) -> ElementRef;

    /// Distance the fallback needs and the distance available, when the
    /// plant has such a notion.
    fn fallback_margin(&self, _x: &[f64], _dcs: &DescriptiveConstraints, _lead: i64) -> Option<(f64, f64)> {
        None
    }
}

/// A constant patch control for the open part of the committed segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchControl {
    pub value: f64,
    /// Replacement for the behavior command, `None` keeps what was committed.
    pub command: Option<f64>,
}

/// Forward run of a plant under a control source.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub t0: Tick,
    /// `states[k]` is the state at `t0 + k`.
    pub states: Vec<Vec<f64>>,
    pub modes: Vec<Mode>,
    /// `controls[k]` is applied at `t0 + k`; one shorter than `states`.
    pub controls: Vec<Vec<f64>>,
    pub st: Option<Tick>,
    pub sp: Option<Tick>,
}

impl Rollout {
    pub fn end(&self) -> Tick {
        self.t0 + self.states.len() as Tick - 1
    }

    pub fn state_at(&self, t: Tick) -> Option<&[f64]> {
        let k = usize::try_from(t - self.t0).ok()?;
        self.states.get(k).map(Vec::as_slice)
    }

    pub fn mode_at(&self, t: Tick) -> Option<Mode> {
        let k = usize::try_from(t - self.t0).ok()?;
        self.modes.get(k).copied()
    }
}

/// Steps from `(x0, mode0)` at `t0` with `control(t)` until the behavior
/// completes or `until` is reached.
pub fn rollout(
    plant: &dyn Plant,
    x0: &[f64],
    mode0: Mode,
    t0: Tick,
    until: Tick,
    mut control: impl FnMut(Tick) -> Vec<f64>,
) -> Rollout {
    let mut out = Rollout {
        t0,
        states: vec![x0.to_vec()],
        modes: vec![mode0],
        controls: Vec::new(),
        st: match mode0 {
            Mode::Active { since } => Some(since),
            _ => None,
        },
        sp: match mode0 {
            Mode::Done { at } => Some(at),
            _ => None,
        },
    };
    let mut t = t0;
    while t < until && out.sp.is_none() {
        let u = control(t);
        let (x, mode) = {
            let k = out.states.len() - 1;
            plant.step(&out.states[k], out.modes[k], &u, t)
        };
        if let Mode::Active { since } = mode {
            out.st.get_or_insert(since);
        }
        if let Mode::Done { at } = mode {
            if out.st.is_none() {
                out.st = Some(t);
            }
            out.sp = Some(at);
        }
        if mode.is_before() {
            out.st = None;
        }
        out.controls.push(u);
        out.states.push(x);
        out.modes.push(mode);
        t += 1;
    }
    out
}

/// Rolls the committed controls forward from the observation.
pub fn predict_state(
    plant: &dyn Plant,
    x_obs: &[f64],
    mode: Mode,
    now: Tick,
    committed: &[Vec<f64>],
    d: i64,
) -> Result<(Vec<f64>, Mode), PredictError> {
    if d < 0 {
        return Err(PredictError::NegativeDelay(d));
    }
    if committed.len() < d as usize {
        return Err(PredictError::MissingControls {
            need: d as usize,
            have: committed.len(),
        });
    }
    let mut x = x_obs.to_vec();
    let mut m = mode;
    for (k, u) in committed.iter().take(d as usize).enumerate() {
        (x, m) = plant.step(&x, m, u, now + k as Tick);
    }
    Ok((x, m))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PredictError {
    #[error("prediction delay must be non-negative, got {0}")]
    NegativeDelay(i64),
    #[error("prediction needs {need} controls in flight, only {have} given")]
    MissingControls { need: usize, have: usize },
}

/// First reason a rollout fails the constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "breach", rename_all = "kebab-case")]
pub enum Breach {
    Descriptive { tick: Tick, element: ElementRef, value: f64 },
    Performance { tick: Tick, clause: String },
    StartWindow { tick: Tick },
    StopWindow { tick: Tick },
    Incomplete { until: Tick },
}

impl Breach {
    pub fn tick(&self) -> Tick {
        match self {
            Breach::Descriptive { tick, .. }
            | Breach::Performance { tick, .. }
            | Breach::StartWindow { tick }
            | Breach::StopWindow { tick } => *tick,
            Breach::Incomplete { until } => *until,
        }
    }
}

impl std::fmt::Display for Breach {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Breach::Descriptive { tick, element, value } => write!(f, "{element}={value} outside its set at tick {tick}"),
            Breach::Performance { tick, clause } => write!(f, "{clause} violated at tick {tick}"),
            Breach::StartWindow { tick } => write!(f, "start {tick} outside ST"),
            Breach::StopWindow { tick } => write!(f, "stop {tick} outside SP"),
            Breach::Incomplete { until } => write!(f, "behavior not complete by tick {until}"),
        }
    }
}

/// What a rollout is checked against.
pub struct CheckScope<'a> {
    pub dcs: &'a DescriptiveConstraints,
    pub env: &'a Environment,
    /// Windows the start and stop must fall in; `None` skips that check.
    pub windows: Option<(&'a WindowSet, &'a WindowSet)>,
    /// Ticks before this one are not checked.
    pub from: Tick,
    /// Apply the in-behavior constraint before the start.
    pub in_behavior: bool,
    /// Require the behavior to complete within the rollout.
    pub require_completion: bool,
}

/// Per-tick check of a rollout against both constraint families.
pub fn check_rollout(plant: &dyn Plant, r: &Rollout, scope: &CheckScope<'_>) -> Result<(), Breach> {
    let spec = plant.behavior();
    for (k, x) in r.states.iter().enumerate() {
        let t = r.t0 + k as Tick;
        if t < scope.from {
            continue;
        }
        let mode = r.modes[k];
        let u = r.controls.get(k).map(Vec::as_slice);
        let values = plant.element_values(x, mode, u);
        if let Some((element, value)) = scope.dcs.violations(&values).into_iter().next() {
            return Err(Breach::Descriptive { tick: t, element, value });
        }
        let y = plant.behavior_output(t, x, scope.env);
        let during = match (r.st, r.sp) {
            (Some(st), Some(sp)) => st <= t && t <= sp,
            (Some(st), None) => st <= t,
            _ => false,
        };
        if during {
            if !spec.pc().admits(t, &y) {
                return Err(Breach::Performance {
                    tick: t,
                    clause: spec.pc().name().to_string(),
                });
            }
        } else if scope.in_behavior && mode.is_before() && !spec.in_behavior().pc.admits(t, &y) {
            return Err(Breach::Performance {
                tick: t,
                clause: spec.in_behavior().pc.name().to_string(),
            });
        }
    }
    if scope.require_completion && r.sp.is_none() {
        return Err(Breach::Incomplete { until: r.end() });
    }
    if let Some((st_set, sp_set)) = scope.windows {
        if let Some(st) = r.st {
            if st >= scope.from && !st_set.contains(st) {
                return Err(Breach::StartWindow { tick: st });
            }
        }
        if let Some(sp) = r.sp {
            if !sp_set.contains(sp) {
                return Err(Breach::StopWindow { tick: sp });
            }
        }
    }
    Ok(())
}

/// Acceleration-style grid `lo, lo+step, ..., hi` inside `set`, ordered by
/// magnitude then value.
pub fn control_grid(lo: f64, hi: f64, step: f64, keep: impl Fn(f64) -> bool) -> Vec<f64> {
    let mut out = Vec::new();
    if step <= 0.0 || lo > hi {
        return out;
    }
    let n = ((hi - lo) / step + 1e-9).floor() as i64;
    for k in 0..=n {
        // lattice values come from integer multiples so they are reproducible
        let v = ((lo / step).round() as i64 + k) as f64 * step;
        if v >= lo - 1e-12 && v <= hi + 1e-12 && keep(v) {
            out.push(if v == 0.0 { 0.0 } else { v });
        }
    }
    out.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_order_prefers_small_magnitude() {
        let g = control_grid(-1.0, 1.0, 0.5, |_| true);
        assert_eq!(g, vec![0.0, -0.5, 0.5, -1.0, 1.0]);
        let capped = control_grid(-3.0, 3.0, 0.5, |a| a <= 2.0);
        assert_eq!(capped.last(), Some(&-3.0));
        assert_eq!(capped.iter().copied().fold(f64::MIN, f64::max), 2.0);
        assert_eq!(capped.len(), 11);
    }

    #[test]
    fn vehicle_moves_from_anchor() {
        let mut v = Vehicle {
            id: "a".into(),
            anchor_tick: 0,
            anchor_pos: 10.0,
            speed: Some(20.0),
        };
        assert_eq!(v.position(10, 0.1), 30.0);
        v.reanchor(10, 0.1);
        v.speed = Some(0.0);
        assert_eq!(v.position(50, 0.1), 30.0);
    }
}
