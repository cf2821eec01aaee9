//! The three-decision controller: prescriptive constraints (D1), control
//! reference (D2) and control action (D3), run once per tick behind a
//! fixed command lead.
//!
//! Commands decided at tick `now` take effect at `now + lead`. The ticks in
//! between are already committed; the first `d23` of them can no longer be
//! changed at all.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{PrescriptiveConstraints, Windows};
use crate::plant::{predict_state, Mode, PlanningView, Plant, Program, WorldSnapshot};
use crate::process::{DescriptiveConstraints, ProcessError, ProcessModel};
use crate::scenario::{Cause, D1Kind, Scenario, ScenarioEvent, StageKind};
use crate::window::{Interval, Tick, WindowSet};

pub mod search;

use search::{check_committed, constraints_at, derive_windows, fallback_queue, find_patch, recheck_reference, search_reference, Origin};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayProfile {
    pub d12: i64,
    pub d23: i64,
    /// Ticks consumed by D1, D2 and D3.
    pub latency: [i64; 3],
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("delay {name} must be non-negative, got {value}")]
pub struct DelayError {
    pub name: &'static str,
    pub value: i64,
}

impl DelayProfile {
    pub fn new(d12: i64, d23: i64, latency: [i64; 3]) -> Result<Self, DelayError> {
        let named = [("d12", d12), ("d23", d23), ("L1", latency[0]), ("L2", latency[1]), ("L3", latency[2])];
        if let Some(&(name, value)) = named.iter().find(|(_, v)| *v < 0) {
            return Err(DelayError { name, value });
        }
        Ok(Self { d12, d23, latency })
    }

    pub fn zero() -> Self {
        Self {
            d12: 0,
            d23: 0,
            latency: [0; 3],
        }
    }

    pub fn d13(&self) -> i64 {
        self.d12 + self.d23
    }

    /// Ticks between observing and the first tick a decision can affect.
    pub fn lead(&self) -> i64 {
        self.latency.iter().sum::<i64>() + self.d13()
    }

    /// Committed ticks that can no longer be patched.
    pub fn frozen(&self) -> i64 {
        self.d23.min(self.lead())
    }
}

/// Starts exist but none is reachable by a command taking effect at `effect`.
pub fn missed_start(st: &WindowSet, effect: Tick) -> bool {
    !st.is_empty() && st.from_tick(effect).is_empty()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Replan,
    Fallback,
    Halt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePolicy {
    pub no_decision: Policy,
    pub previously_safe: Policy,
    pub unsafe_timing: Policy,
}

impl Default for StagePolicy {
    fn default() -> Self {
        Self {
            no_decision: Policy::Fallback,
            previously_safe: Policy::Replan,
            unsafe_timing: Policy::Fallback,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Policies {
    pub d1: StagePolicy,
    pub d2: StagePolicy,
    pub d3: StagePolicy,
}

impl Policies {
    /// Response to an event; time coupling is logged only.
    pub fn for_scenario(&self, s: Scenario) -> Option<Policy> {
        let stage = match s {
            Scenario::D1(_) => &self.d1,
            Scenario::D2(_) => &self.d2,
            Scenario::D3(_) => &self.d3,
        };
        match s.kind() {
            StageKind::NoDecision => Some(stage.no_decision),
            StageKind::PreviouslySafe => Some(stage.previously_safe),
            StageKind::UnsafeTiming => Some(stage.unsafe_timing),
            StageKind::TimeCoupling => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// The three-decision controller with all checks.
    Stpa,
    /// Takes the earliest start that is not past the must-start deadline,
    /// ignoring must-not windows and the command lead.
    Naive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub delays: DelayProfile,
    /// Urgency margin of the must-start window, in ticks.
    pub margin: i64,
    /// Length of the planning horizon, in ticks.
    pub planning_ticks: i64,
    /// Proportional gain of the tracking law.
    pub gain: f64,
    /// Tolerance on the predicted state before time coupling is flagged.
    pub eps_pred: f64,
    pub reference_compensation: bool,
    pub action_compensation: bool,
    pub policies: Policies,
    pub strategy: Strategy,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            delays: DelayProfile::zero(),
            margin: 20,
            planning_ticks: 400,
            gain: 0.5,
            eps_pred: 0.0,
            reference_compensation: true,
            action_compensation: true,
            policies: Policies::default(),
            strategy: Strategy::Stpa,
        }
    }
}

/// An adopted control reference with its feasibility certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub id: u64,
    pub epoch: Tick,
    /// Tick the process starts following the reference.
    pub t3: Tick,
    pub st: Tick,
    pub sp: Tick,
    pub program: Program,
    /// Predicted state at `t3` the reference was built from.
    pub x_hat: Vec<f64>,
    pub mode_hat: Mode,
    /// Certified trajectory, `states[k]` at `t3 + k`, through `sp`.
    pub states: Vec<Vec<f64>>,
    pub compensated: bool,
}

impl Reference {
    pub fn state_at(&self, t: Tick) -> Option<&[f64]> {
        let k = usize::try_from(t - self.t3).ok()?;
        self.states.get(k).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlMode {
    Normal,
    Fallback,
    Halted,
}

/// Controller bookkeeping visible to an outside observer at the start of
/// a tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub mode: ControlMode,
    pub plan: Option<u64>,
    /// Commands for ticks `now..now + lead`.
    pub queue: Vec<Vec<f64>>,
    /// Plan id for which action timing was already reported.
    pub action_flagged: Option<u64>,
}

/// Per-tick pipeline record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionState {
    pub tick: Tick,
    pub windows: Option<Windows>,
    pub conflict: bool,
    pub active_pairs: Vec<String>,
    pub adopted: Option<Reference>,
    pub reference: Option<u64>,
    /// Command issued for `now + lead`.
    pub action: Vec<f64>,
    pub fallback_engaged: bool,
    pub events: Vec<ScenarioEvent>,
}

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error(transparent)]
    Process(#[from] ProcessError),
}

pub struct Controller {
    plant: Arc<dyn Plant>,
    model: ProcessModel,
    cfg: ControllerConfig,
    end: Tick,
    mode: ControlMode,
    plan: Option<Reference>,
    queue: VecDeque<Vec<f64>>,
    action_flagged: Option<u64>,
    next_id: u64,
}

/// Per-tick working set.
struct TickCtx<'a> {
    obs: &'a WorldSnapshot,
    dcs: DescriptiveConstraints,
    effect: Tick,
    events: Vec<ScenarioEvent>,
    adopted: Option<Reference>,
    fallback_engaged: bool,
    windows: Option<PrescriptiveConstraints>,
}

enum Flow {
    Continue,
    Stop,
}

impl Controller {
    /// `end` is the first tick past the run.
    pub fn new(plant: Arc<dyn Plant>, model: ProcessModel, cfg: ControllerConfig, end: Tick) -> Self {
        let lead = cfg.delays.lead().max(0) as usize;
        let queue = std::iter::repeat_with(|| plant.idle_control()).take(lead).collect();
        Self {
            plant,
            model,
            cfg,
            end,
            mode: ControlMode::Normal,
            plan: None,
            queue,
            action_flagged: None,
            next_id: 1,
        }
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn plan(&self) -> Option<&Reference> {
        self.plan.as_ref()
    }

    pub fn mode(&self) -> ControlMode {
        self.mode
    }

    pub fn state(&self) -> ControllerState {
        ControllerState {
            mode: self.mode,
            plan: self.plan.as_ref().map(|p| p.id),
            queue: self.queue.iter().cloned().collect(),
            action_flagged: self.action_flagged,
        }
    }

    fn horizon(&self, now: Tick) -> Interval {
        let hi = (now + self.cfg.planning_ticks).min(self.end).max(now + 1);
        Interval::new(now, hi).expect("non-empty horizon")
    }

    /// Runs D1, D2 and D3 for the observation and returns the decision
    /// record together with the command applied at this tick.
    pub fn step(&mut self, obs: &WorldSnapshot) -> Result<(DecisionState, Vec<f64>), ControllerError> {
        let dcs = constraints_at(&self.model, obs)?;
        let now = obs.tick;
        let mut ctx = TickCtx {
            obs,
            dcs,
            effect: now + self.queue.len() as Tick,
            events: Vec::new(),
            adopted: None,
            fallback_engaged: false,
            windows: None,
        };
        if self.plan.as_ref().is_some_and(|p| p.sp < ctx.effect || obs.mode.is_done()) {
            self.plan = None;
        }
        let action = match self.mode {
            ControlMode::Halted => self.plant.idle_control(),
            ControlMode::Fallback => self.fallback_action(&ctx),
            ControlMode::Normal => match self.cfg.strategy {
                Strategy::Stpa => self.pipeline(&mut ctx),
                Strategy::Naive => self.naive(&mut ctx),
            },
        };
        self.queue.push_back(action.clone());
        let applied = self.queue.pop_front().expect("queue holds at least the new action");
        let decision = DecisionState {
            tick: now,
            conflict: ctx.windows.as_ref().is_some_and(|w| w.conflict),
            windows: ctx.windows.map(|w| w.windows),
            active_pairs: ctx.dcs.active.clone(),
            adopted: ctx.adopted,
            reference: self.plan.as_ref().map(|p| p.id),
            action,
            fallback_engaged: ctx.fallback_engaged,
            events: ctx.events,
        };
        Ok((decision, applied))
    }

    fn committed(&self) -> Vec<Vec<f64>> {
        self.queue.iter().cloned().collect()
    }

    fn predicted(&self, obs: &WorldSnapshot) -> (Vec<f64>, Mode) {
        let q = self.committed();
        predict_state(&*self.plant, &obs.state, obs.mode, obs.tick, &q, q.len() as i64)
            .expect("queue length is the prediction delay")
    }

    fn fallback_action(&self, ctx: &TickCtx<'_>) -> Vec<f64> {
        let (x, m) = self.predicted(ctx.obs);
        self.plant.fallback_control(&x, m, &ctx.dcs)
    }

    fn engage_fallback(&mut self, ctx: &mut TickCtx<'_>) -> Vec<f64> {
        let frozen_until = ctx.obs.tick + self.cfg.delays.frozen();
        let (q, x, m) = fallback_queue(&*self.plant, ctx.obs, &self.committed(), &ctx.dcs, frozen_until);
        self.queue = q.into();
        self.mode = ControlMode::Fallback;
        self.plan = None;
        ctx.fallback_engaged = true;
        self.plant.fallback_control(&x, m, &ctx.dcs)
    }

    /// Applies the configured response. `Stop` means the tick's command is
    /// already decided.
    fn respond(&mut self, ctx: &mut TickCtx<'_>, scenario: Scenario, cause: Cause) -> (Flow, Option<Vec<f64>>) {
        ctx.events.push(ScenarioEvent {
            tick: ctx.obs.tick,
            scenario,
            cause,
        });
        match self.cfg.policies.for_scenario(scenario) {
            None => (Flow::Continue, None),
            Some(Policy::Replan) => {
                self.plan = None;
                (Flow::Continue, None)
            }
            Some(Policy::Fallback) => (Flow::Stop, Some(self.engage_fallback(ctx))),
            Some(Policy::Halt) => {
                self.mode = ControlMode::Halted;
                self.plan = None;
                (Flow::Stop, Some(self.plant.idle_control()))
            }
        }
    }

    fn pipeline(&mut self, ctx: &mut TickCtx<'_>) -> Vec<f64> {
        let obs = ctx.obs;
        let now = obs.tick;
        let lead = self.queue.len() as i64;
        let committed = self.committed();
        let horizon = self.horizon(now);

        // D1: prescriptive constraints
        let pcs = {
            let view = PlanningView {
                snapshot: obs,
                dcs: &ctx.dcs,
                committed: &committed,
                continuation: self.plan.as_ref().map(|p| &p.program),
                horizon,
            };
            derive_windows(&*self.plant, &view, self.cfg.margin)
        };
        ctx.windows = Some(pcs.clone());
        let d1_active = obs.mode.is_before() && self.plan.as_ref().is_none_or(|p| p.st >= ctx.effect);
        let mut d1_flagged = false;
        if d1_active {
            let st = &pcs.windows.st;
            let flag = if pcs.conflict {
                Some((
                    D1Kind::NoDecision,
                    Cause::Conflict {
                        mst: pcs.windows.mst.clone(),
                        nst: pcs.windows.nst.clone(),
                    },
                ))
            } else if let Some(p) = self.plan.as_ref().filter(|p| !st.contains(p.st)) {
                Some((
                    D1Kind::PreviouslySafe,
                    Cause::StartLeftWindow {
                        start: p.st,
                        st: st.clone(),
                    },
                ))
            } else if self.plan.is_none() && missed_start(st, ctx.effect) {
                Some((
                    D1Kind::UnsafeTiming,
                    Cause::Deadline {
                        earliest: st.min().expect("non-empty"),
                        effect: ctx.effect,
                        lead,
                    },
                ))
            } else {
                None
            };
            if let Some((kind, cause)) = flag {
                d1_flagged = true;
                if let (Flow::Stop, Some(u)) = self.respond(ctx, Scenario::D1(kind), cause) {
                    return u;
                }
            }
        }

        // D2: control reference
        let (x_hat, mode_hat) = self.predicted(obs);
        if let (Some(plan), false) = (self.plan.as_ref(), d1_flagged) {
            let being = {
                let values = self.plant.element_values(&obs.state, obs.mode, None);
                ctx.dcs.violations(&values).into_iter().next()
            };
            let breach = match being {
                Some((element, value)) => Some(crate::plant::Breach::Descriptive {
                    tick: now,
                    element,
                    value,
                }),
                None => recheck_reference(
                    &*self.plant,
                    &plan.program,
                    &ctx.dcs,
                    &obs.env,
                    Origin {
                        x: &x_hat,
                        mode: mode_hat,
                        tick: ctx.effect,
                    },
                    horizon.hi().max(plan.sp + 1),
                )
                .err(),
            };
            if let Some(breach) = breach {
                if let (Flow::Stop, Some(u)) =
                    self.respond(ctx, Scenario::D2(StageKind::PreviouslySafe), Cause::ReferenceBreach { breach })
                {
                    return u;
                }
            }
        }
        if self.plan.is_none() && !mode_hat.is_done() {
            if let Some(u) = self.plan_reference(ctx, &pcs, &x_hat, mode_hat, horizon, lead, true) {
                return u;
            }
        }

        // D3: control action
        if lead > 0 {
            if let Err(breach) = check_committed(&*self.plant, obs, &committed, &ctx.dcs) {
                let frozen_until = now + self.cfg.delays.frozen();
                if breach.tick() <= frozen_until {
                    let cause = Cause::CommittedBreach {
                        breach,
                        frozen_until,
                        patch: None,
                    };
                    if let (Flow::Stop, Some(u)) = self.respond(ctx, Scenario::D3(StageKind::UnsafeTiming), cause) {
                        return u;
                    }
                } else if let Some((patch, patched)) = find_patch(&*self.plant, obs, &committed, &ctx.dcs, frozen_until) {
                    self.queue = patched.into();
                    let cause = Cause::CommittedBreach {
                        breach,
                        frozen_until,
                        patch: Some(patch),
                    };
                    if let (Flow::Stop, Some(u)) = self.respond(ctx, Scenario::D3(StageKind::PreviouslySafe), cause) {
                        return u;
                    }
                    // the patched segment moves the start point of the reference
                    self.plan = None;
                    let (x_hat, mode_hat) = self.predicted(obs);
                    if !mode_hat.is_done() {
                        if let Some(u) = self.plan_reference(ctx, &pcs, &x_hat, mode_hat, horizon, lead, false) {
                            return u;
                        }
                    }
                } else {
                    let cause = Cause::CommittedBreach {
                        breach,
                        frozen_until,
                        patch: None,
                    };
                    if let (Flow::Stop, Some(u)) = self.respond(ctx, Scenario::D3(StageKind::NoDecision), cause) {
                        return u;
                    }
                }
            }
        }
        self.issue_action(ctx)
    }

    /// D2 search. Returns a command when a response already decided it.
    #[allow(clippy::too_many_arguments)]
    fn plan_reference(
        &mut self,
        ctx: &mut TickCtx<'_>,
        pcs: &PrescriptiveConstraints,
        x_hat: &[f64],
        mode_hat: Mode,
        horizon: Interval,
        lead: i64,
        report_coupling: bool,
    ) -> Option<Vec<f64>> {
        let obs = ctx.obs;
        let compensated = self.cfg.reference_compensation;
        let (origin_x, origin_mode) = if compensated {
            (x_hat.to_vec(), mode_hat)
        } else {
            (obs.state.clone(), obs.mode)
        };
        let origin = Origin {
            x: &origin_x,
            mode: origin_mode,
            tick: ctx.effect,
        };
        if let Some(found) = search_reference(&*self.plant, &ctx.dcs, pcs, &obs.env, origin, horizon) {
            let reference = Reference {
                id: self.next_id,
                epoch: obs.tick,
                t3: ctx.effect,
                st: found.rollout.st.expect("certified rollouts start"),
                sp: found.rollout.sp.expect("certified rollouts complete"),
                program: found.program,
                x_hat: origin_x,
                mode_hat: origin_mode,
                states: found.rollout.states,
                compensated,
            };
            self.next_id += 1;
            ctx.adopted = Some(reference.clone());
            self.plan = Some(reference);
            if report_coupling && !compensated && lead > 0 {
                let deviation = max_deviation(x_hat, &obs.state);
                if deviation > self.cfg.eps_pred {
                    let cause = Cause::StaleState {
                        lead,
                        deviation,
                        tolerance: self.cfg.eps_pred,
                    };
                    self.respond(ctx, Scenario::D2(StageKind::TimeCoupling), cause);
                }
            }
            return None;
        }
        let untimed = search_reference(
            &*self.plant,
            &ctx.dcs,
            pcs,
            &obs.env,
            Origin {
                x: &obs.state,
                mode: obs.mode,
                tick: obs.tick,
            },
            horizon,
        );
        let (kind, cause) = if lead > 0 && untimed.is_some() {
            (
                StageKind::UnsafeTiming,
                Cause::TooLate {
                    effect: ctx.effect,
                    lead,
                },
            )
        } else {
            (
                StageKind::NoDecision,
                Cause::NoReference {
                    searched: pcs.windows.st.from_tick(ctx.effect),
                },
            )
        };
        match self.respond(ctx, Scenario::D2(kind), cause) {
            (Flow::Stop, u) => u,
            (Flow::Continue, _) => None,
        }
    }

    fn issue_action(&mut self, ctx: &mut TickCtx<'_>) -> Vec<f64> {
        let obs = ctx.obs;
        let Some(plan) = self.plan.as_ref() else {
            return self.plant.idle_control();
        };
        let Some(x_ref) = plan.state_at(ctx.effect) else {
            return self.plant.idle_control();
        };
        let (x_hat, _) = self.predicted(obs);
        let target = if self.cfg.action_compensation { &x_hat } else { &obs.state };
        let u = self
            .plant
            .track(plan.program.control_at(ctx.effect), x_ref, target, &ctx.dcs, self.cfg.gain);
        let id = plan.id;
        let d23 = self.cfg.delays.d23;
        if !self.cfg.action_compensation && d23 > 0 && self.action_flagged != Some(id) {
            let deviation = max_deviation(&x_hat, &obs.state);
            if deviation > self.cfg.eps_pred {
                self.action_flagged = Some(id);
                let cause = Cause::ActionTiming {
                    d23,
                    deviation,
                    tolerance: self.cfg.eps_pred,
                };
                self.respond(ctx, Scenario::D3(StageKind::TimeCoupling), cause);
            }
        }
        u
    }

    fn naive(&mut self, ctx: &mut TickCtx<'_>) -> Vec<f64> {
        let obs = ctx.obs;
        let now = obs.tick;
        let horizon = self.horizon(now);
        let committed = self.committed();
        let pcs = {
            let view = PlanningView {
                snapshot: obs,
                dcs: &ctx.dcs,
                committed: &committed,
                continuation: None,
                horizon,
            };
            derive_windows(&*self.plant, &view, self.cfg.margin)
        };
        if self.plan.is_none() && obs.mode.is_before() {
            let deadline = pcs.windows.mst.sup().unwrap_or(horizon.hi());
            if ctx.effect < deadline {
                let start = ctx.effect;
                let family = self.plant.family(start, &ctx.dcs, &obs.state, obs.mode, start, &obs.env);
                if let Some(program) = family.into_iter().next() {
                    let r = crate::plant::rollout(&*self.plant, &obs.state, obs.mode, start, horizon.hi(), |t| {
                        program.control_at(t).to_vec()
                    });
                    if let (Some(st), Some(sp)) = (r.st, r.sp) {
                        let reference = Reference {
                            id: self.next_id,
                            epoch: now,
                            t3: start,
                            st,
                            sp,
                            program,
                            x_hat: obs.state.clone(),
                            mode_hat: obs.mode,
                            states: r.states,
                            compensated: false,
                        };
                        self.next_id += 1;
                        ctx.adopted = Some(reference.clone());
                        self.plan = Some(reference);
                    }
                }
            }
        }
        ctx.windows = Some(pcs);
        match &self.plan {
            Some(p) => p.program.control_at(ctx.effect).to_vec(),
            None => self.plant.idle_control(),
        }
    }
}

fn max_deviation(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
