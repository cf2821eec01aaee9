//! Deterministic tick loop: scripted world, controller, trace.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControlMode, Controller, ControllerConfig, ControllerError};
use crate::controller::search::constraints_at;
use crate::plant::{Environment, Mode, Plant, Terminal, Vehicle, WorldSnapshot};
use crate::process::{CondValue, ConditionSnapshot, DescriptiveConstraints, ElementRef, ProcessModel, ValueSet};
use crate::trace::{Trace, TraceFooter, TraceHeader, TraceRecord};
use crate::window::{Tick, WindowSet};

/// Whitelisted edits a scripted event may make to the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Mutation {
    SetCondition { name: String, value: CondValue },
    AddVehicle { id: String, position: f64, speed: f64 },
    RemoveVehicle { id: String },
    SetVehicleSpeed { id: String, speed: f64 },
    SetConstraint { pair: String, lo: f64, hi: f64 },
    PerturbState { index: usize, delta: f64 },
    BlockCorridor { from: Tick, to: Tick },
    BlockPad { from: Tick, to: Tick },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedEvent {
    pub tick: Tick,
    pub mutations: Vec<Mutation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("event ticks must be strictly increasing: {prev} then {next}")]
    NotIncreasing { prev: Tick, next: Tick },
    #[error("event at negative tick {0}")]
    Negative(Tick),
}

/// Ordered world edits, one entry per tick.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventScript {
    events: Vec<ScriptedEvent>,
}

impl EventScript {
    pub fn new(events: Vec<ScriptedEvent>) -> Result<Self, ScriptError> {
        for w in events.windows(2) {
            if w[1].tick <= w[0].tick {
                return Err(ScriptError::NotIncreasing {
                    prev: w[0].tick,
                    next: w[1].tick,
                });
            }
        }
        if let Some(e) = events.iter().find(|e| e.tick < 0) {
            return Err(ScriptError::Negative(e.tick));
        }
        Ok(Self { events })
    }

    /// Groups `(tick, mutation)` pairs by tick, keeping their order.
    pub fn from_pairs(mut pairs: Vec<(Tick, Mutation)>) -> Result<Self, ScriptError> {
        pairs.sort_by_key(|(t, _)| *t);
        let mut events: Vec<ScriptedEvent> = Vec::new();
        for (tick, m) in pairs {
            match events.last_mut() {
                Some(last) if last.tick == tick => last.mutations.push(m),
                _ => events.push(ScriptedEvent {
                    tick,
                    mutations: vec![m],
                }),
            }
        }
        Self::new(events)
    }

    pub fn events(&self) -> &[ScriptedEvent] {
        &self.events
    }

    pub fn at(&self, tick: Tick) -> Option<&ScriptedEvent> {
        self.events
            .binary_search_by_key(&tick, |e| e.tick)
            .ok()
            .map(|i| &self.events[i])
    }
}

/// Landing pads of the descent; the backup is used while `Nom` is false.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pads {
    pub primary: f64,
    pub backup: f64,
}

/// What the controller may observe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visibility {
    pub traffic: bool,
    pub traffic_speeds: bool,
    pub schedules: bool,
}

impl Default for Visibility {
    fn default() -> Self {
        Self {
            traffic: true,
            traffic_speeds: true,
            schedules: true,
        }
    }
}

impl Visibility {
    pub const ITEMS: [&'static str; 3] = ["traffic", "traffic_speeds", "schedules"];

    pub fn from_items<'a>(items: impl IntoIterator<Item = &'a str>) -> Result<Self, String> {
        let mut v = Self {
            traffic: false,
            traffic_speeds: false,
            schedules: false,
        };
        for item in items {
            match item {
                "traffic" => v.traffic = true,
                "traffic_speeds" => v.traffic_speeds = true,
                "schedules" => v.schedules = true,
                other => return Err(other.to_string()),
            }
        }
        Ok(v)
    }
}

/// The true world.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub tick: Tick,
    pub state: Vec<f64>,
    pub mode: Mode,
    pub env: Environment,
    pub conditions: ConditionSnapshot,
    pub overrides: BTreeMap<String, ValueSet>,
    pub pads: Option<Pads>,
}

impl World {
    pub fn snapshot(&self) -> WorldSnapshot {
        WorldSnapshot {
            tick: self.tick,
            state: self.state.clone(),
            mode: self.mode,
            env: self.env.clone(),
            conditions: self.conditions.clone(),
            overrides: self.overrides.clone(),
        }
    }

    /// Points the approach at the pad the `Nom` condition selects.
    pub fn select_pad(&mut self) {
        let Some(pads) = self.pads else { return };
        let nominal = !matches!(self.conditions.get("Nom"), Some(CondValue::Bool(false)));
        if let Environment::Approach { pad, .. } = &mut self.env {
            *pad = if nominal { pads.primary } else { pads.backup };
        }
    }

    pub fn apply(&mut self, m: &Mutation, dt: f64) {
        let now = self.tick;
        match m {
            Mutation::SetCondition { name, value } => {
                self.conditions.insert(name.clone(), *value);
                self.select_pad();
            }
            Mutation::AddVehicle { id, position, speed } => {
                if let Environment::Traffic { vehicles } = &mut self.env {
                    vehicles.retain(|v| &v.id != id);
                    vehicles.push(Vehicle {
                        id: id.clone(),
                        anchor_tick: now,
                        anchor_pos: *position,
                        speed: Some(*speed),
                    });
                }
            }
            Mutation::RemoveVehicle { id } => {
                if let Environment::Traffic { vehicles } = &mut self.env {
                    vehicles.retain(|v| &v.id != id);
                }
            }
            Mutation::SetVehicleSpeed { id, speed } => {
                if let Environment::Traffic { vehicles } = &mut self.env {
                    for v in vehicles.iter_mut().filter(|v| &v.id == id) {
                        v.reanchor(now, dt);
                        v.speed = Some(*speed);
                    }
                }
            }
            Mutation::SetConstraint { pair, lo, hi } => {
                self.overrides.insert(pair.clone(), ValueSet::interval(*lo, *hi));
            }
            Mutation::PerturbState { index, delta } => {
                if let Some(x) = self.state.get_mut(*index) {
                    *x += delta;
                }
            }
            Mutation::BlockCorridor { from, to } => {
                if let Environment::Approach { corridor_busy, .. } = &mut self.env {
                    *corridor_busy = corridor_busy.union(&WindowSet::span(*from, *to));
                }
            }
            Mutation::BlockPad { from, to } => {
                if let Environment::Approach { pad_busy, .. } = &mut self.env {
                    *pad_busy = pad_busy.union(&WindowSet::span(*from, *to));
                }
            }
        }
    }
}

/// The controller's view of the world.
pub fn observe(world: &World, visibility: &Visibility, dt: f64) -> WorldSnapshot {
    let mut snap = world.snapshot();
    match &mut snap.env {
        Environment::Traffic { vehicles } => {
            if !visibility.traffic {
                vehicles.clear();
            } else if !visibility.traffic_speeds {
                for v in vehicles.iter_mut() {
                    v.reanchor(world.tick, dt);
                    v.speed = None;
                }
            }
        }
        Environment::Approach {
            corridor_busy,
            pad_busy,
            ..
        } => {
            if !visibility.schedules {
                *corridor_busy = WindowSet::empty();
                *pad_busy = WindowSet::empty();
            }
        }
    }
    snap
}

/// A command outside `U`, saturated before reaching the plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Saturation {
    pub element: ElementRef,
    pub requested: f64,
    pub applied: f64,
}

/// One Euler tick of the world under `u`. Out-of-set commands are clamped
/// to the set and reported.
pub fn step_world(plant: &dyn Plant, world: &mut World, u: &[f64], dcs: &DescriptiveConstraints) -> (Vec<f64>, Vec<Saturation>) {
    let mut applied = u.to_vec();
    let mut saturations = Vec::new();
    for (k, value) in applied.iter_mut().enumerate() {
        let element = ElementRef::new(crate::process::Space::U, k);
        let set = dcs.set(element);
        if !set.contains(*value) {
            if let Some(c) = set.clamp(*value) {
                saturations.push(Saturation {
                    element,
                    requested: *value,
                    applied: c,
                });
                *value = c;
            }
        }
    }
    let (x, mode) = plant.step(&world.state, world.mode, &applied, world.tick);
    world.state = x;
    world.mode = mode;
    world.tick += 1;
    (applied, saturations)
}

/// Everything needed to run one episode.
#[derive(Clone)]
pub struct EpisodeSpec {
    pub name: String,
    pub seed: u64,
    pub plant: Arc<dyn Plant>,
    pub model: ProcessModel,
    pub controller: ControllerConfig,
    pub world: World,
    pub events: EventScript,
    pub visibility: Visibility,
    pub ticks: Tick,
    pub config_digest: String,
}

/// A performance-constraint breach in the true world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcViolation {
    pub tick: Tick,
    pub clause: String,
    pub output: Vec<f64>,
}

/// Braking arithmetic at the moment the fallback engaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallbackCheck {
    pub tick: Tick,
    pub needed: f64,
    pub available: f64,
    pub allowed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub terminal: Terminal,
    pub ticks: Tick,
    pub final_state: Vec<f64>,
    pub final_mode: Mode,
    pub pc_violations: Vec<PcViolation>,
    pub saturations: usize,
    pub fallback: Option<FallbackCheck>,
    pub events: usize,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Process(#[from] crate::process::ProcessError),
}

fn pair_truth(dcs: &DescriptiveConstraints) -> BTreeMap<String, bool> {
    dcs.active
        .iter()
        .map(|id| (id.clone(), true))
        .chain(dcs.excluded.iter().map(|e| (e.id.clone(), false)))
        .collect()
}

fn check_pc(plant: &dyn Plant, world: &WorldSnapshot, during: bool, in_fallback: bool) -> Option<PcViolation> {
    let spec = plant.behavior();
    let y = plant.behavior_output(world.tick, &world.state, &world.env);
    let pc = if during {
        spec.pc()
    } else if world.mode.is_before() && !in_fallback {
        &spec.in_behavior().pc
    } else {
        return None;
    };
    (!pc.admits(world.tick, &y)).then(|| PcViolation {
        tick: world.tick,
        clause: pc.name().to_string(),
        output: y,
    })
}

/// Runs the tick loop until the horizon or a terminal condition.
pub fn run_episode(spec: &EpisodeSpec) -> Result<Trace, SimError> {
    let plant = &*spec.plant;
    let dt = plant.construct().dt;
    let mut world = spec.world.clone();
    let mut controller = Controller::new(spec.plant.clone(), spec.model.clone(), spec.controller.clone(), spec.ticks);
    let mut records = Vec::new();
    let mut pc_violations = Vec::new();
    let mut saturations = 0;
    let mut fallback = None;
    let mut events = 0;
    let mut terminal = Terminal::Horizon;
    let mut seen_pc: BTreeSet<Tick> = BTreeSet::new();

    while world.tick < spec.ticks {
        if let Some(e) = spec.events.at(world.tick) {
            for m in &e.mutations {
                world.apply(m, dt);
            }
        }
        let truth = world.snapshot();
        let in_fallback = controller.mode() == ControlMode::Fallback;
        let during_now = match truth.mode {
            Mode::Active { .. } => true,
            Mode::Done { at } => at == truth.tick,
            Mode::Before => false,
        };
        if during_now {
            if let Some(v) = check_pc(plant, &truth, true, in_fallback) {
                seen_pc.insert(v.tick);
                pc_violations.push(v);
            }
        }
        if controller.mode() == ControlMode::Halted {
            terminal = Terminal::Halted;
            break;
        }
        if let Some(t) = plant.terminal(&truth, in_fallback) {
            terminal = t;
            break;
        }
        let obs = observe(&world, &spec.visibility, dt);
        let before = controller.state();
        let (decision, command) = controller.step(&obs)?;
        events += decision.events.len();
        let dcs = constraints_at(&spec.model, &truth)?;
        if decision.fallback_engaged && fallback.is_none() {
            fallback = plant
                .fallback_margin(&truth.state, &dcs, before.queue.len() as i64)
                .map(|(needed, available)| FallbackCheck {
                    tick: truth.tick,
                    needed,
                    available,
                    allowed: needed <= available,
                });
        }
        let (applied, sat) = step_world(plant, &mut world, &command, &dcs);
        saturations += sat.len();
        if truth.mode.is_before() {
            let starting = !world.mode.is_before();
            if let Some(v) = check_pc(plant, &truth, starting, in_fallback) {
                if seen_pc.insert(v.tick) {
                    pc_violations.push(v);
                }
            }
        }
        records.push(TraceRecord {
            tick: truth.tick,
            assumptions: pair_truth(&dcs),
            world: truth,
            observed: obs,
            controller: before,
            decision,
            applied,
            saturations: sat,
        });
    }
    let header = TraceHeader::new(spec);
    let footer = TraceFooter {
        summary: EpisodeSummary {
            terminal,
            ticks: world.tick,
            final_state: world.state.clone(),
            final_mode: world.mode,
            pc_violations,
            saturations,
            fallback,
            events,
        },
        final_world: world.snapshot(),
    };
    // a zero-length run is recorded as a bare header
    Ok(Trace {
        header,
        records,
        footer: (spec.ticks > 0).then_some(footer),
    })
}
