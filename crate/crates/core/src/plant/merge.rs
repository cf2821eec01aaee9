//! Ego vehicle merging from an ending lane into constant-speed traffic.
//!
//! State `x = [position, speed]`, control `u = [accel, lane]` where a lane
//! command of 1 requests (or continues) the lane change. The lane change
//! takes a fixed number of ticks and can be abandoned only before its
//! commit point.

use crate::behavior::{BehaviorSpec, TransitionPredicates};
use crate::process::{Construct, DescriptiveConstraints, ElementRef, ElementValues, Space};
use crate::window::Tick;

use super::{control_grid, Environment, Mode, PatchControl, PlanningView, Plant, Program, Terminal, WorldSnapshot};

pub const ACCEL: ElementRef = ElementRef { space: Space::U, index: 0 };
pub const SPEED: ElementRef = ElementRef { space: Space::X, index: 1 };

#[derive(Debug, Clone, PartialEq)]
pub struct MergeParams {
    pub dt: f64,
    pub lane_end: f64,
    pub d_end_min: f64,
    pub d_gap_min: f64,
    pub merge_ticks: i64,
    /// Ticks into the lane change after which it can no longer be abandoned.
    pub commit_ticks: i64,
    /// Acceleration range the prescriptive windows are derived against.
    pub envelope: (f64, f64),
    pub accel_step: f64,
}

pub struct MergePlant {
    params: MergeParams,
    construct: Construct,
    behavior: BehaviorSpec,
}

impl MergePlant {
    pub fn new(params: MergeParams, behavior: BehaviorSpec) -> Self {
        let construct = Construct::builder(params.dt, |u, x, _p| (vec![x[1], u[0]], vec![x[0], x[1]]))
            .inputs(&["accel", "lane"], &[(-10.0, 10.0), (0.0, 1.0)])
            .states(&["position", "speed"], &[(0.0, 500.0), (0.0, 60.0)])
            .outputs(&["position", "speed"])
            .projection(|x| x[1] = x[1].max(0.0))
            .build();
        Self {
            params,
            construct,
            behavior,
        }
    }

    pub fn params(&self) -> &MergeParams {
        &self.params
    }

    fn merge_span(&self) -> f64 {
        self.params.merge_ticks as f64 * self.params.dt
    }

    /// Lane change started at `t` from `(s, v)` at constant speed keeps the
    /// gap to every vehicle on one side and ends short of the lane end.
    pub fn merge_admissible(&self, t: Tick, s: f64, v: f64, vehicles: &[super::Vehicle]) -> bool {
        let p = &self.params;
        let s_end = s + v * self.merge_span();
        if p.lane_end - s_end < p.d_end_min {
            return false;
        }
        let t_end = t + p.merge_ticks;
        vehicles.iter().all(|veh| {
            let d0 = veh.position(t, p.dt) - s;
            let d1 = veh.position(t_end, p.dt) - s_end;
            (d0 >= p.d_gap_min && d1 >= p.d_gap_min) || (d0 <= -p.d_gap_min && d1 <= -p.d_gap_min)
        })
    }

    /// Lane end still reachable with a full lane change starting at `t`.
    pub fn start_still_safe(&self, s: f64, v: f64) -> bool {
        self.params.lane_end - s - v * self.merge_span() >= self.params.d_end_min
    }

    fn envelope_grid(&self) -> Vec<f64> {
        let (lo, hi) = self.params.envelope;
        control_grid(lo, hi, self.params.accel_step, |_| true)
    }
}

fn vehicles(env: &Environment) -> &[super::Vehicle] {
    match env {
        Environment::Traffic { vehicles } => vehicles,
        _ => &[],
    }
}

impl Plant for MergePlant {
    fn name(&self) -> &'static str {
        "merge"
    }

    fn construct(&self) -> &Construct {
        &self.construct
    }

    fn behavior(&self) -> &BehaviorSpec {
        &self.behavior
    }

    fn output_names(&self) -> &'static [&'static str] {
        &["gap", "end_margin", "speed", "position"]
    }

    fn idle_control(&self) -> Vec<f64> {
        vec![0.0, 0.0]
    }

    fn next_mode(&self, mode: Mode, u: &[f64], _x_next: &[f64], t: Tick) -> Mode {
        let lane = u[1] >= 0.5;
        let p = &self.params;
        match mode {
            Mode::Before if lane => {
                if p.merge_ticks <= 1 {
                    Mode::Done { at: t + 1 }
                } else {
                    Mode::Active { since: t }
                }
            }
            Mode::Before => Mode::Before,
            Mode::Active { since } => {
                if !lane && t - since < p.commit_ticks {
                    Mode::Before
                } else if t + 1 - since >= p.merge_ticks {
                    Mode::Done { at: t + 1 }
                } else {
                    Mode::Active { since }
                }
            }
            done @ Mode::Done { .. } => done,
        }
    }

    fn behavior_output(&self, t: Tick, x: &[f64], env: &Environment) -> Vec<f64> {
        let gap = vehicles(env)
            .iter()
            .map(|v| (v.position(t, self.params.dt) - x[0]).abs())
            .fold(f64::MAX, f64::min);
        vec![gap, self.params.lane_end - x[0], x[1], x[0]]
    }

    fn element_values(&self, x: &[f64], _mode: Mode, u: Option<&[f64]>) -> ElementValues {
        match u {
            Some(u) => {
                let (xdot, y) = self.construct.eval(u, x);
                ElementValues::all(u, x, &[], &xdot, &y)
            }
            None => ElementValues {
                u: vec![None, None],
                x: x.iter().copied().map(Some).collect(),
                p: Vec::new(),
                xdot: vec![None, None],
                y: x.iter().copied().map(Some).collect(),
            },
        }
    }

    fn predicates<'a>(&'a self, view: &'a PlanningView<'a>) -> Box<dyn TransitionPredicates + 'a> {
        Box::new(MergePredicates::new(self, view))
    }

    fn family(
        &self,
        start: Tick,
        dcs: &DescriptiveConstraints,
        _x: &[f64],
        mode: Mode,
        _t: Tick,
        _env: &Environment,
    ) -> Vec<Program> {
        match mode {
            Mode::Before => {
                let u_set = dcs.set(ACCEL);
                let (lo, hi) = self.params.envelope;
                control_grid(lo, hi, self.params.accel_step, |a| u_set.contains(a))
                    .into_iter()
                    .map(|a| Program {
                        start,
                        hold: vec![a, 0.0],
                        during: vec![0.0, 1.0],
                    })
                    .collect()
            }
            Mode::Active { since } => vec![Program {
                start: since,
                hold: vec![0.0, 0.0],
                during: vec![0.0, 1.0],
            }],
            Mode::Done { .. } => Vec::new(),
        }
    }

    fn patch_family(&self, dcs: &DescriptiveConstraints) -> Vec<PatchControl> {
        let u_set = dcs.set(ACCEL);
        let (lo, hi) = self.params.envelope;
        let lo = u_set.lower().filter(|l| l.is_finite()).map_or(lo, |l| l.min(lo));
        let grid = control_grid(lo, hi, self.params.accel_step, |a| u_set.contains(a));
        let keep = grid.iter().map(|&value| PatchControl { value, command: None });
        let abort = grid.iter().map(|&value| PatchControl {
            value,
            command: Some(0.0),
        });
        keep.chain(abort).collect()
    }

    fn apply_patch(&self, committed: &[f64], patch: &PatchControl) -> Vec<f64> {
        vec![patch.value, patch.command.unwrap_or(committed[1])]
    }

    fn track(&self, reference_u: &[f64], x_ref: &[f64], x_hat: &[f64], dcs: &DescriptiveConstraints, gain: f64) -> Vec<f64> {
        let raw = reference_u[0] + gain * (x_ref[1] - x_hat[1]);
        let a = dcs.set(ACCEL).clamp(raw).unwrap_or(raw);
        vec![a, reference_u[1]]
    }

    fn fallback_control(&self, _x: &[f64], _mode: Mode, dcs: &DescriptiveConstraints) -> Vec<f64> {
        let brake = dcs
            .set(ACCEL)
            .lower()
            .filter(|a| a.is_finite())
            .unwrap_or(self.params.envelope.0);
        vec![brake, 0.0]
    }

    fn fallback_complete(&self, x: &[f64], mode: Mode) -> bool {
        x[1] <= 0.0 && !matches!(mode, Mode::Active { .. })
    }

    fn terminal(&self, snapshot: &WorldSnapshot, in_fallback: bool) -> Option<Terminal> {
        let x = &snapshot.state;
        match snapshot.mode {
            Mode::Done { .. } => Some(Terminal::Merged),
            Mode::Before if x[0] >= self.params.lane_end => Some(Terminal::Hazard),
            mode if in_fallback && self.fallback_complete(x, mode) => Some(Terminal::FallbackComplete),
            _ => None,
        }
    }

    fn tracked_element(&self) -> ElementRef {
        ElementRef::new(Space::X, 0)
    }

    fn fallback_margin(&self, x: &[f64], dcs: &DescriptiveConstraints, lead: i64) -> Option<(f64, f64)> {
        let brake = self.fallback_control(x, Mode::Before, dcs)[0];
        let v = x[1];
        let coasting = v * lead as f64 * self.params.dt;
        let needed = if brake < 0.0 { coasting + v * v / (2.0 * -brake) } else { f64::MAX };
        Some((needed, self.params.lane_end - x[0] - self.params.d_end_min))
    }
}

/// Start/stop predicates over the planning horizon, tabulated once.
struct MergePredicates {
    lo: Tick,
    merge_ticks: i64,
    safe: Vec<bool>,
    feasible: Vec<bool>,
}

impl MergePredicates {
    fn new(plant: &MergePlant, view: &PlanningView<'_>) -> Self {
        let snap = view.snapshot;
        let now = snap.tick;
        let lo = view.horizon.lo();
        let hi = view.horizon.hi();
        let e = view.earliest_effect();
        let traffic = vehicles(&snap.env);
        let n = (hi - lo).max(0) as usize;

        // committed part: the actual controls in flight
        let mut committed_states = vec![snap.state.clone()];
        let mut mode = snap.mode;
        for (k, u) in view.committed.iter().enumerate() {
            let last = committed_states.last().expect("non-empty");
            let (x, m) = plant.step(last, mode, u, now + k as Tick);
            committed_states.push(x);
            mode = m;
        }
        let x_e = committed_states.last().expect("non-empty").clone();
        let state_at_committed = |t: Tick| -> Option<&Vec<f64>> {
            usize::try_from(t - now).ok().and_then(|k| committed_states.get(k))
        };

        // nominal continuation without starting: the plan's hold control
        let hold = view
            .continuation
            .map(|p| p.hold[0])
            .unwrap_or(0.0);
        let forward = |accel: f64| -> Vec<Vec<f64>> {
            let steps = (hi - e).max(0) as usize;
            let mut out = Vec::with_capacity(steps + 1);
            out.push(x_e.clone());
            for k in 0..steps {
                let next = plant.construct.step(&out[k], &[accel, 0.0]);
                out.push(next);
            }
            out
        };
        let nominal = forward(hold);
        let state_at = |t: Tick, traj: &[Vec<f64>]| -> Option<Vec<f64>> {
            if t < e {
                state_at_committed(t).cloned()
            } else {
                traj.get((t - e) as usize).cloned()
            }
        };

        let mut safe = Vec::with_capacity(n);
        for t in lo..hi {
            safe.push(state_at(t, &nominal).is_some_and(|x| plant.start_still_safe(x[0], x[1])));
        }

        let grid = plant.envelope_grid();
        let trajectories: Vec<Vec<Vec<f64>>> = grid.iter().map(|&a| forward(a)).collect();
        let mut feasible = Vec::with_capacity(n);
        for t in lo..hi {
            let ok = if t < e {
                state_at_committed(t).is_some_and(|x| plant.merge_admissible(t, x[0], x[1], traffic))
            } else {
                trajectories.iter().any(|traj| {
                    traj.get((t - e) as usize)
                        .is_some_and(|x| plant.merge_admissible(t, x[0], x[1], traffic))
                })
            };
            feasible.push(ok);
        }
        Self {
            lo,
            merge_ticks: plant.params.merge_ticks,
            safe,
            feasible,
        }
    }

    fn lookup(&self, table: &[bool], t: Tick) -> bool {
        usize::try_from(t - self.lo)
            .ok()
            .and_then(|k| table.get(k).copied())
            .unwrap_or(false)
    }
}

impl TransitionPredicates for MergePredicates {
    fn start_safe_until(&self, t: Tick) -> bool {
        self.lookup(&self.safe, t)
    }

    fn start_feasible(&self, t: Tick) -> bool {
        self.lookup(&self.feasible, t)
    }

    fn stop_safe_until(&self, t: Tick) -> bool {
        self.lookup(&self.safe, t - self.merge_ticks)
    }

    fn stop_feasible(&self, t: Tick) -> bool {
        self.lookup(&self.feasible, t - self.merge_ticks)
    }
}
