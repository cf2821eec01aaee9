//! Declarative scenario configs: parsing, validation, re-emission and
//! instantiation into runnable episodes.
//!
//! Durations are written in seconds and stored as exact decimals together
//! with their tick counts. Randomized fields carry a range that is sampled
//! per seed when an episode is built.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::behavior::{BehaviorSpec, LinkedBehavior, PerformanceConstraint};
use crate::controller::{ControllerConfig, DelayProfile, Policies, Strategy};
use crate::plant::descent::{DescentParams, DescentPlant};
use crate::plant::merge::{MergeParams, MergePlant};
use crate::plant::{Environment, Mode, Plant, Vehicle};
use crate::process::{Arrow, Assumption, CondValue, ConstraintAssumptionPair, ProcessModel, ValueSet};
use crate::sim::{EpisodeSpec, EventScript, Mutation, Pads, Visibility, World};
use crate::window::{Tick, WindowSet};

pub mod decimal;
mod emit;
mod parse;

pub use decimal::{Decimal, DecimalError};
pub use emit::emit;
pub use parse::parse_config;

/// JSON Schema of the config document.
pub const SCHEMA: &str = include_str!("../../schema/scenario.schema.json");

/// One validation problem, located by field path and, when known, line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}: {}", self.path, self.message),
            None => write!(f, "{}: {}", self.path, self.message),
        }
    }
}

/// Every problem found in a config, in document order.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ConfigError {
    pub issues: Vec<ConfigIssue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

/// A duration in seconds and its exact tick count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seconds {
    pub value: Decimal,
    pub ticks: Tick,
}

/// A fixed value or a range sampled per seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampled<T> {
    Fixed(T),
    Range { min: T, max: T },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub dt: Decimal,
    pub horizon: Seconds,
    pub seed: u64,
    pub visibility: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleConfig {
    pub id: String,
    pub position: Sampled<f64>,
    pub speed: Sampled<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeConfig {
    pub lane_end: f64,
    pub d_end_min: f64,
    pub d_gap_min: f64,
    pub merge_time: Seconds,
    pub commit_time: Seconds,
    /// Acceleration capability the windows are derived against.
    pub envelope: (f64, f64),
    pub position: f64,
    pub speed: f64,
    pub vehicles: Vec<VehicleConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentConfig {
    pub ground_speed: f64,
    pub pad_tolerance: f64,
    pub pad: f64,
    pub backup_pad: f64,
    pub position: f64,
    pub altitude: f64,
    pub angle: f64,
    pub corridor_busy: Vec<(Seconds, Seconds)>,
    pub pad_busy: Vec<(Seconds, Seconds)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlantConfig {
    Merge(MergeConfig),
    Descent(DescentConfig),
}

impl PlantConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            PlantConfig::Merge(_) => "merge",
            PlantConfig::Descent(_) => "descent",
        }
    }

    /// Named numeric parameters templates may refer to.
    pub fn params(&self) -> BTreeMap<&'static str, f64> {
        match self {
            PlantConfig::Merge(m) => BTreeMap::from([
                ("lane_end", m.lane_end),
                ("d_end_min", m.d_end_min),
                ("d_gap_min", m.d_gap_min),
            ]),
            PlantConfig::Descent(d) => BTreeMap::from([
                ("ground_speed", d.ground_speed),
                ("pad_tolerance", d.pad_tolerance),
                ("pad", d.pad),
                ("backup_pad", d.backup_pad),
            ]),
        }
    }

    /// Outputs of the behavior output vector, in order.
    pub fn outputs(&self) -> &'static [&'static str] {
        match self {
            PlantConfig::Merge(_) => &["gap", "end_margin", "speed", "position"],
            PlantConfig::Descent(_) => &["pad_error", "altitude", "angle", "corridor"],
        }
    }

    pub fn states(&self) -> &'static [&'static str] {
        match self {
            PlantConfig::Merge(_) => &["position", "speed"],
            PlantConfig::Descent(_) => &["position", "altitude", "angle"],
        }
    }
}

/// A numeric template parameter: a literal or a plant parameter name.
#[derive(Debug, Clone, PartialEq)]
pub enum Bound {
    Value(f64),
    Param(String),
}

/// Performance-constraint templates. All templates of a behavior must
/// hold at once.
#[derive(Debug, Clone, PartialEq)]
pub enum Template {
    IntervalBound {
        output: String,
        lo: Option<Bound>,
        hi: Option<Bound>,
    },
    GapToTraffic {
        min: Bound,
    },
    DistanceToLaneEnd {
        min: Bound,
    },
    CorridorOccupancy,
    /// `Σ coefficient · output ≤ bound`.
    LinearInequality {
        terms: BTreeMap<String, f64>,
        bound: Bound,
    },
}

impl Template {
    pub const NAMES: [&'static str; 5] = [
        "interval_bound",
        "gap_to_traffic",
        "distance_to_lane_end",
        "corridor_occupancy",
        "linear_inequality",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Template::IntervalBound { .. } => "interval_bound",
            Template::GapToTraffic { .. } => "gap_to_traffic",
            Template::DistanceToLaneEnd { .. } => "distance_to_lane_end",
            Template::CorridorOccupancy => "corridor_occupancy",
            Template::LinearInequality { .. } => "linear_inequality",
        }
    }

    /// Outputs the template reads.
    pub fn outputs(&self) -> Vec<&str> {
        match self {
            Template::IntervalBound { output, .. } => vec![output.as_str()],
            Template::GapToTraffic { .. } => vec!["gap"],
            Template::DistanceToLaneEnd { .. } => vec!["end_margin"],
            Template::CorridorOccupancy => vec!["corridor"],
            Template::LinearInequality { terms, .. } => terms.keys().map(String::as_str).collect(),
        }
    }

    pub fn bounds(&self) -> Vec<&Bound> {
        match self {
            Template::IntervalBound { lo, hi, .. } => lo.iter().chain(hi.iter()).collect(),
            Template::GapToTraffic { min } | Template::DistanceToLaneEnd { min } => vec![min],
            Template::CorridorOccupancy => Vec::new(),
            Template::LinearInequality { bound, .. } => vec![bound],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Intended,
    In,
    Out,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Intended => "intended",
            Role::In => "in",
            Role::Out => "out",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorConfig {
    pub name: String,
    pub role: Role,
    pub pc: Vec<Template>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairConfig {
    pub id: String,
    pub target: String,
    pub constraint: (f64, f64),
    pub system: Assumption,
    pub env: Assumption,
    pub arrow: Arrow,
    pub justification: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayConfig {
    pub d12: Seconds,
    pub d23: Seconds,
    pub latency: [Seconds; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSection {
    pub strategy: Strategy,
    pub margin: Seconds,
    pub planning: Seconds,
    /// Spacing of the acceleration grid the reference search walks.
    pub grid_step: f64,
    pub gain: f64,
    pub eps_pred: f64,
    pub reference_compensation: bool,
    pub action_compensation: bool,
    pub policies: Policies,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MutationConfig {
    SetCondition { name: String, value: CondValue },
    AddVehicle { id: String, position: f64, speed: f64 },
    RemoveVehicle { id: String },
    SetVehicleSpeed { id: String, speed: f64 },
    SetConstraint { pair: String, lo: f64, hi: f64 },
    PerturbState { state: String, delta: f64 },
    BlockCorridor { from: Seconds, to: Seconds },
    BlockPad { from: Seconds, to: Seconds },
}

impl MutationConfig {
    pub const OPS: [&'static str; 8] = [
        "set_condition",
        "add_vehicle",
        "remove_vehicle",
        "set_vehicle_speed",
        "set_constraint",
        "perturb_state",
        "block_corridor",
        "block_pad",
    ];

    pub fn op(&self) -> &'static str {
        match self {
            MutationConfig::SetCondition { .. } => "set_condition",
            MutationConfig::AddVehicle { .. } => "add_vehicle",
            MutationConfig::RemoveVehicle { .. } => "remove_vehicle",
            MutationConfig::SetVehicleSpeed { .. } => "set_vehicle_speed",
            MutationConfig::SetConstraint { .. } => "set_constraint",
            MutationConfig::PerturbState { .. } => "perturb_state",
            MutationConfig::BlockCorridor { .. } => "block_corridor",
            MutationConfig::BlockPad { .. } => "block_pad",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventConfig {
    pub at: Sampled<Seconds>,
    pub mutation: MutationConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub run: RunConfig,
    pub plant: PlantConfig,
    pub behaviors: Vec<BehaviorConfig>,
    pub conditions: BTreeMap<String, CondValue>,
    pub pairs: Vec<PairConfig>,
    pub delays: DelayConfig,
    pub controller: ControllerSection,
    pub events: Vec<EventConfig>,
}

/// Failure to assemble an episode from a validated config.
#[derive(Debug, Error)]
pub enum BuildError {
    #[error("{0}")]
    Invalid(String),
}

fn sample_f64(s: &Sampled<f64>, rng: &mut ChaCha8Rng) -> f64 {
    match *s {
        Sampled::Fixed(v) => v,
        Sampled::Range { min, max } if min == max => min,
        Sampled::Range { min, max } => rng.gen_range(min..=max),
    }
}

fn sample_tick(s: &Sampled<Seconds>, rng: &mut ChaCha8Rng) -> Tick {
    match s {
        Sampled::Fixed(v) => v.ticks,
        Sampled::Range { min, max } => rng.gen_range(min.ticks..=max.ticks),
    }
}

fn resolve(bound: &Bound, params: &BTreeMap<&'static str, f64>) -> f64 {
    match bound {
        Bound::Value(v) => *v,
        Bound::Param(name) => params[name.as_str()],
    }
}

fn output_index(outputs: &[&str], name: &str) -> usize {
    outputs.iter().position(|o| *o == name).expect("validated output name")
}

/// Compiles a behavior's templates into one performance constraint.
fn compile(b: &BehaviorConfig, plant: &PlantConfig) -> PerformanceConstraint {
    let params = plant.params();
    let outputs = plant.outputs();
    type Check = Box<dyn Fn(&[f64]) -> bool + Send + Sync>;
    let checks: Vec<Check> = b
        .pc
        .iter()
        .map(|t| -> Check {
            match t {
                Template::IntervalBound { output, lo, hi } => {
                    let k = output_index(outputs, output);
                    let lo = lo.as_ref().map_or(f64::NEG_INFINITY, |b| resolve(b, &params));
                    let hi = hi.as_ref().map_or(f64::INFINITY, |b| resolve(b, &params));
                    Box::new(move |y| lo <= y[k] && y[k] <= hi)
                }
                Template::GapToTraffic { min } => {
                    let k = output_index(outputs, "gap");
                    let min = resolve(min, &params);
                    Box::new(move |y| y[k] >= min)
                }
                Template::DistanceToLaneEnd { min } => {
                    let k = output_index(outputs, "end_margin");
                    let min = resolve(min, &params);
                    Box::new(move |y| y[k] >= min)
                }
                Template::CorridorOccupancy => {
                    let k = output_index(outputs, "corridor");
                    Box::new(move |y| y[k] == 0.0)
                }
                Template::LinearInequality { terms, bound } => {
                    let coeffs: Vec<(usize, f64)> = terms.iter().map(|(n, c)| (output_index(outputs, n), *c)).collect();
                    let bound = resolve(bound, &params);
                    Box::new(move |y| coeffs.iter().map(|(k, c)| c * y[*k]).sum::<f64>() <= bound)
                }
            }
        })
        .collect();
    let label = if b.pc.is_empty() {
        "true".to_string()
    } else {
        b.pc.iter().map(Template::name).collect::<Vec<_>>().join("&")
    };
    PerformanceConstraint::new(format!("{}:{label}", b.name), move |_, y| checks.iter().all(|c| c(y)))
}

impl ScenarioConfig {
    pub fn dt(&self) -> f64 {
        self.run.dt.to_f64()
    }

    pub fn behavior(&self, role: Role) -> &BehaviorConfig {
        self.behaviors
            .iter()
            .find(|b| b.role == role)
            .expect("validated: one behavior per role")
    }

    fn behavior_spec(&self) -> Result<BehaviorSpec, BuildError> {
        let link = |role| {
            let b = self.behavior(role);
            LinkedBehavior {
                name: b.name.clone(),
                pc: compile(b, &self.plant),
            }
        };
        let intended = self.behavior(Role::Intended);
        BehaviorSpec::new(intended.name.clone(), compile(intended, &self.plant), link(Role::In), link(Role::Out))
            .map_err(|e| BuildError::Invalid(e.to_string()))
    }

    pub fn build_plant(&self) -> Result<Arc<dyn Plant>, BuildError> {
        let behavior = self.behavior_spec()?;
        let dt = self.dt();
        Ok(match &self.plant {
            PlantConfig::Merge(m) => Arc::new(MergePlant::new(
                MergeParams {
                    dt,
                    lane_end: m.lane_end,
                    d_end_min: m.d_end_min,
                    d_gap_min: m.d_gap_min,
                    merge_ticks: m.merge_time.ticks,
                    commit_ticks: m.commit_time.ticks,
                    envelope: m.envelope,
                    accel_step: self.controller.grid_step,
                },
                behavior,
            )),
            PlantConfig::Descent(d) => Arc::new(DescentPlant::new(
                DescentParams {
                    dt,
                    ground_speed: d.ground_speed,
                    pad_tolerance: d.pad_tolerance,
                },
                behavior,
            )),
        })
    }

    pub fn build_model(&self, plant: &dyn Plant) -> Result<ProcessModel, BuildError> {
        let construct = plant.construct().clone();
        let mut model = ProcessModel::new(construct);
        for p in &self.pairs {
            let target = model
                .construct()
                .resolve(&p.target)
                .map_err(|e| BuildError::Invalid(e.to_string()))?;
            model
                .add_pair(ConstraintAssumptionPair {
                    id: p.id.clone(),
                    target,
                    constraint: ValueSet::interval(p.constraint.0, p.constraint.1),
                    assumption_system: p.system.clone(),
                    assumption_env: p.env.clone(),
                    arrow: p.arrow,
                    justification: p.justification.clone(),
                })
                .map_err(|e| BuildError::Invalid(e.to_string()))?;
        }
        Ok(model)
    }

    pub fn controller_config(&self) -> Result<ControllerConfig, BuildError> {
        let d = &self.delays;
        let delays = DelayProfile::new(
            d.d12.ticks,
            d.d23.ticks,
            [d.latency[0].ticks, d.latency[1].ticks, d.latency[2].ticks],
        )
        .map_err(|e| BuildError::Invalid(e.to_string()))?;
        let c = &self.controller;
        Ok(ControllerConfig {
            delays,
            margin: c.margin.ticks,
            planning_ticks: c.planning.ticks,
            gain: c.gain,
            eps_pred: c.eps_pred,
            reference_compensation: c.reference_compensation,
            action_compensation: c.action_compensation,
            policies: c.policies,
            strategy: c.strategy,
        })
    }

    pub fn visibility(&self) -> Visibility {
        Visibility::from_items(self.run.visibility.iter().map(String::as_str)).expect("validated visibility items")
    }

    /// Canonical text digest, equal for configs that compare equal.
    pub fn digest(&self) -> String {
        crate::trace::digest(emit(self).as_bytes())
    }

    /// Builds the episode for `seed`, sampling every randomized field.
    pub fn instantiate(&self, seed: u64) -> Result<EpisodeSpec, BuildError> {
        let plant = self.build_plant()?;
        let model = self.build_model(&*plant)?;
        let controller = self.controller_config()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spans = |list: &[(Seconds, Seconds)]| {
            list.iter()
                .fold(WindowSet::empty(), |acc, (a, b)| acc.union(&WindowSet::span(a.ticks, b.ticks)))
        };
        let (state, env, pads) = match &self.plant {
            PlantConfig::Merge(m) => {
                let vehicles = m
                    .vehicles
                    .iter()
                    .map(|v| Vehicle {
                        id: v.id.clone(),
                        anchor_tick: 0,
                        anchor_pos: sample_f64(&v.position, &mut rng),
                        speed: Some(sample_f64(&v.speed, &mut rng)),
                    })
                    .collect();
                (vec![m.position, m.speed], Environment::Traffic { vehicles }, None)
            }
            PlantConfig::Descent(d) => (
                vec![d.position, d.altitude, d.angle],
                Environment::Approach {
                    pad: d.pad,
                    corridor_busy: spans(&d.corridor_busy),
                    pad_busy: spans(&d.pad_busy),
                },
                Some(Pads {
                    primary: d.pad,
                    backup: d.backup_pad,
                }),
            ),
        };
        let mut pairs = Vec::new();
        for e in &self.events {
            let tick = sample_tick(&e.at, &mut rng);
            pairs.push((tick, self.mutation(&e.mutation)));
        }
        let events = EventScript::from_pairs(pairs).map_err(|e| BuildError::Invalid(e.to_string()))?;
        let mut world = World {
            tick: 0,
            state,
            mode: Mode::Before,
            env,
            conditions: self.conditions.clone(),
            overrides: BTreeMap::new(),
            pads,
        };
        world.select_pad();
        Ok(EpisodeSpec {
            name: self.run.name.clone(),
            seed,
            plant,
            model,
            controller,
            world,
            events,
            visibility: self.visibility(),
            ticks: self.run.horizon.ticks,
            config_digest: self.digest(),
        })
    }

    fn mutation(&self, m: &MutationConfig) -> Mutation {
        match m.clone() {
            MutationConfig::SetCondition { name, value } => Mutation::SetCondition { name, value },
            MutationConfig::AddVehicle { id, position, speed } => Mutation::AddVehicle { id, position, speed },
            MutationConfig::RemoveVehicle { id } => Mutation::RemoveVehicle { id },
            MutationConfig::SetVehicleSpeed { id, speed } => Mutation::SetVehicleSpeed { id, speed },
            MutationConfig::SetConstraint { pair, lo, hi } => Mutation::SetConstraint { pair, lo, hi },
            MutationConfig::PerturbState { state, delta } => Mutation::PerturbState {
                index: self.plant.states().iter().position(|s| *s == state).expect("validated state name"),
                delta,
            },
            MutationConfig::BlockCorridor { from, to } => Mutation::BlockCorridor {
                from: from.ticks,
                to: to.ticks,
            },
            MutationConfig::BlockPad { from, to } => Mutation::BlockPad {
                from: from.ticks,
                to: to.ticks,
            },
        }
    }
}

/// Reads a config file from disk.
pub fn load_config(path: &std::path::Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        issues: vec![ConfigIssue {
            path: path.display().to_string(),
            line: None,
            message: e.to_string(),
        }],
    })?;
    parse_config(&text)
}
