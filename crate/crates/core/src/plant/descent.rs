//! eVTOL descent to a landing pad at a constant descent angle.
//!
//! State `x = [ground position, altitude, angle]` (angle in degrees),
//! control `u = [angle command]`. Ground speed is constant, so the ground
//! position over time does not depend on when the descent starts; the
//! descent angle that reaches the pad from a given point does.

use crate::behavior::{BehaviorSpec, TransitionPredicates};
use crate::process::{Construct, DescriptiveConstraints, ElementRef, ElementValues, Space};
use crate::window::Tick;

use super::{Environment, Mode, PatchControl, PlanningView, Plant, Program, Terminal, WorldSnapshot};

pub const ANGLE: ElementRef = ElementRef { space: Space::X, index: 2 };

#[derive(Debug, Clone, PartialEq)]
pub struct DescentParams {
    pub dt: f64,
    pub ground_speed: f64,
    /// Touchdown accepted within this ground distance of the pad.
    pub pad_tolerance: f64,
}

pub struct DescentPlant {
    params: DescentParams,
    construct: Construct,
    behavior: BehaviorSpec,
}

/// Angle in degrees that reaches the ground `remaining` metres ahead.
pub fn required_angle(alt: f64, remaining: f64) -> f64 {
    if remaining <= 0.0 {
        90.0
    } else {
        alt.atan2(remaining).to_degrees()
    }
}

impl DescentPlant {
    pub fn new(params: DescentParams, behavior: BehaviorSpec) -> Self {
        let dt = params.dt;
        let construct = Construct::builder(dt, move |u, x, p| {
            let vg = p[0];
            let sink = vg * u[0].to_radians().tan();
            (vec![vg, -sink, (u[0] - x[2]) / dt], vec![x[2]])
        })
        .inputs(&["angle_cmd"], &[(0.0, 15.0)])
        .states(&["position", "altitude", "angle"], &[(0.0, 3000.0), (0.0, 500.0), (0.0, 15.0)])
        .params(&["ground_speed"], &[params.ground_speed])
        .outputs(&["angle"])
        .projection(|x| x[1] = x[1].max(0.0))
        .build();
        Self {
            params,
            construct,
            behavior,
        }
    }

    pub fn params(&self) -> &DescentParams {
        &self.params
    }

    fn level(&self, x: &[f64]) -> Vec<f64> {
        self.construct.step(x, &[0.0])
    }
}

fn approach(env: &Environment) -> (f64, &crate::window::WindowSet, &crate::window::WindowSet) {
    match env {
        Environment::Approach {
            pad,
            corridor_busy,
            pad_busy,
        } => (*pad, corridor_busy, pad_busy),
        _ => panic!("descent plant needs an approach environment"),
    }
}

impl Plant for DescentPlant {
    fn name(&self) -> &'static str {
        "descent"
    }

    fn construct(&self) -> &Construct {
        &self.construct
    }

    fn behavior(&self) -> &BehaviorSpec {
        &self.behavior
    }

    fn output_names(&self) -> &'static [&'static str] {
        &["pad_error", "altitude", "angle", "corridor"]
    }

    fn idle_control(&self) -> Vec<f64> {
        vec![0.0]
    }

    fn next_mode(&self, mode: Mode, u: &[f64], x_next: &[f64], t: Tick) -> Mode {
        let descending = u[0] > 0.0;
        let landed = x_next[1] <= 0.0;
        match mode {
            Mode::Before | Mode::Active { .. } if !descending => Mode::Before,
            Mode::Before | Mode::Active { .. } if landed => Mode::Done { at: t + 1 },
            Mode::Before => Mode::Active { since: t },
            active @ Mode::Active { .. } => active,
            done @ Mode::Done { .. } => done,
        }
    }

    fn behavior_output(&self, t: Tick, x: &[f64], env: &Environment) -> Vec<f64> {
        let (pad, corridor, _) = approach(env);
        vec![
            x[0] - pad,
            x[1],
            x[2],
            if corridor.contains(t) { 1.0 } else { 0.0 },
        ]
    }

    fn element_values(&self, x: &[f64], mode: Mode, u: Option<&[f64]>) -> ElementValues {
        let descending = matches!(mode, Mode::Active { .. });
        let angle = descending.then_some(x[2]);
        let (xdot, _) = self.construct.eval(u.unwrap_or(&[0.0]), x);
        ElementValues {
            u: vec![u.filter(|_| descending).map(|u| u[0])],
            x: vec![Some(x[0]), Some(x[1]), angle],
            p: vec![Some(self.params.ground_speed)],
            xdot: vec![
                u.map(|_| xdot[0]),
                u.filter(|_| descending).map(|_| xdot[1]),
                None,
            ],
            y: vec![angle],
        }
    }

    fn predicates<'a>(&'a self, view: &'a PlanningView<'a>) -> Box<dyn TransitionPredicates + 'a> {
        Box::new(DescentPredicates::new(self, view))
    }

    fn family(
        &self,
        start: Tick,
        _dcs: &DescriptiveConstraints,
        x: &[f64],
        mode: Mode,
        t: Tick,
        env: &Environment,
    ) -> Vec<Program> {
        match mode {
            Mode::Before => {
                let (pad, _, _) = approach(env);
                let mut at = x.to_vec();
                for _ in t..start {
                    at = self.level(&at);
                }
                vec![Program {
                    start,
                    hold: vec![0.0],
                    during: vec![required_angle(at[1], pad - at[0])],
                }]
            }
            Mode::Active { since } => vec![Program {
                start: since,
                hold: vec![0.0],
                during: vec![x[2]],
            }],
            Mode::Done { .. } => Vec::new(),
        }
    }

    fn patch_family(&self, _dcs: &DescriptiveConstraints) -> Vec<PatchControl> {
        vec![PatchControl {
            value: 0.0,
            command: None,
        }]
    }

    fn apply_patch(&self, _committed: &[f64], patch: &PatchControl) -> Vec<f64> {
        vec![patch.value]
    }

    fn track(&self, reference_u: &[f64], _x_ref: &[f64], _x_hat: &[f64], _dcs: &DescriptiveConstraints, _gain: f64) -> Vec<f64> {
        reference_u.to_vec()
    }

    fn fallback_control(&self, _x: &[f64], _mode: Mode, _dcs: &DescriptiveConstraints) -> Vec<f64> {
        vec![0.0]
    }

    fn fallback_complete(&self, x: &[f64], mode: Mode) -> bool {
        mode.is_before() && x[2].abs() < 1e-9
    }

    fn terminal(&self, snapshot: &WorldSnapshot, in_fallback: bool) -> Option<Terminal> {
        let (pad, _, _) = approach(&snapshot.env);
        let x = &snapshot.state;
        match snapshot.mode {
            Mode::Done { .. } => Some(Terminal::Landed),
            mode if in_fallback && self.fallback_complete(x, mode) => Some(Terminal::FallbackComplete),
            Mode::Before if x[0] > pad + self.params.pad_tolerance => Some(Terminal::Hazard),
            _ => None,
        }
    }

    fn tracked_element(&self) -> ElementRef {
        ElementRef::new(Space::X, 1)
    }
}

/// Start and stop predicates from the level-flight track, tabulated once.
struct DescentPredicates {
    lo: Tick,
    safe: Vec<bool>,
    feasible: Vec<bool>,
    stop_safe: Vec<bool>,
    stop_feasible: Vec<bool>,
}

impl DescentPredicates {
    fn new(plant: &DescentPlant, view: &PlanningView<'_>) -> Self {
        let snap = view.snapshot;
        let (pad, corridor, pad_busy) = approach(&snap.env);
        let lo = view.horizon.lo();
        let hi = view.horizon.hi();
        let tol = plant.params.pad_tolerance;
        let angles = view.dcs.set(ANGLE);
        let steepest = angles.upper().unwrap_or(f64::INFINITY);

        // ground track is the same whatever the angle; altitude holds while level
        let mut track = Vec::with_capacity((hi - lo).max(0) as usize);
        let mut x = snap.state.clone();
        let mut mode = snap.mode;
        for t in snap.tick..hi {
            if t >= lo {
                track.push(x.clone());
            }
            let k = (t - snap.tick) as usize;
            let u = view.committed.get(k).cloned().unwrap_or_else(|| plant.idle_control());
            (x, mode) = plant.step(&x, mode, &u, t);
        }
        let arrival = track.iter().position(|x| x[0] >= pad - tol).map(|k| lo + k as Tick);

        let mut safe = Vec::with_capacity(track.len());
        let mut feasible = Vec::with_capacity(track.len());
        let mut stop_safe = Vec::with_capacity(track.len());
        let mut stop_feasible = Vec::with_capacity(track.len());
        for (k, x) in track.iter().enumerate() {
            let t = lo + k as Tick;
            let remaining = pad - x[0];
            let angle = required_angle(x[1], remaining);
            safe.push(remaining > 0.0 && angle <= steepest);
            let clear = match arrival {
                Some(end) if end >= t => corridor.intersect(&crate::window::WindowSet::span(t, end + 1)).is_empty(),
                _ => false,
            };
            feasible.push(remaining > 0.0 && angles.contains(angle) && clear);
            stop_safe.push(x[0] <= pad + tol);
            stop_feasible.push((x[0] - pad).abs() <= tol && !pad_busy.contains(t));
        }
        Self {
            lo,
            safe,
            feasible,
            stop_safe,
            stop_feasible,
        }
    }

    fn lookup(&self, table: &[bool], t: Tick) -> bool {
        usize::try_from(t - self.lo)
            .ok()
            .and_then(|k| table.get(k).copied())
            .unwrap_or(false)
    }
}

impl TransitionPredicates for DescentPredicates {
    fn start_safe_until(&self, t: Tick) -> bool {
        self.lookup(&self.safe, t)
    }

    fn start_feasible(&self, t: Tick) -> bool {
        self.lookup(&self.feasible, t)
    }

    fn stop_safe_until(&self, t: Tick) -> bool {
        self.lookup(&self.stop_safe, t)
    }

    fn stop_feasible(&self, t: Tick) -> bool {
        self.lookup(&self.stop_feasible, t)
    }
}
