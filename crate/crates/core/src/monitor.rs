//! Standalone scenario monitor.
//!
//! Works from a recorded trace and the declared constraints only. Windows,
//! constraint sets and predicted states are recomputed from the logged
//! snapshots; the controller's own event flags are never read. What the
//! monitor does take from the trace is what an outside observer of the
//! controller can see: its command queue, its mode, the id of the plan it
//! follows and the references it publishes when it adopts one.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::PrescriptiveConstraints;
use crate::controller::search::{
    check_committed, constraints_at, derive_windows, find_patch, recheck_reference, search_reference, Origin,
};
use crate::controller::{ControlMode, ControllerConfig, Policy, Reference, Strategy};
use crate::plant::{predict_state, Breach, Mode, PlanningView, Plant, WorldSnapshot};
use crate::process::{DescriptiveConstraints, ElementRef, ProcessError, ProcessModel};
use crate::scenario::{Cause, D1Kind, Scenario, ScenarioEvent, StageKind};
use crate::trace::{Trace, TraceRecord};
use crate::window::{Interval, Tick};

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("record for tick {tick} is malformed: {reason}")]
    Malformed { tick: Tick, reason: String },
    #[error("trace was recorded for plant {found:?}, expected {expected:?}")]
    PlantMismatch { expected: String, found: String },
    #[error("constraint epochs leave tick {tick} uncovered")]
    EpochGap { tick: Tick },
    #[error(transparent)]
    Process(#[from] ProcessError),
}

/// A performance-constraint miss while the behavior was ongoing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eq2Violation {
    pub tick: Tick,
    pub clause: String,
    pub output: Vec<f64>,
}

/// A value outside its descriptive set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eq3Violation {
    pub tick: Tick,
    pub element: ElementRef,
    pub value: f64,
}

/// A pair whose assumptions held at `tick - 1` and fail at `tick`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssumptionBreak {
    pub tick: Tick,
    pub pair: String,
    pub failed: String,
}

/// Distance between the realized state and a reference at the tick the
/// behavior started under it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingSample {
    pub plan: u64,
    pub tick: Tick,
    pub error: f64,
    pub compensated: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Verdict {
    pub events: Vec<ScenarioEvent>,
    pub eq2_violations: Vec<Eq2Violation>,
    pub eq3_violations: Vec<Eq3Violation>,
    pub assumption_breaks: Vec<AssumptionBreak>,
    /// Informational; does not make a verdict non-empty.
    pub tracking: Vec<TrackingSample>,
}

impl Verdict {
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
            && self.eq2_violations.is_empty()
            && self.eq3_violations.is_empty()
            && self.assumption_breaks.is_empty()
    }

    pub fn event_keys(&self) -> BTreeSet<(Tick, Scenario)> {
        self.events.iter().map(ScenarioEvent::key).collect()
    }

    pub fn first_eq2(&self) -> Option<Tick> {
        self.eq2_violations.first().map(|v| v.tick)
    }

    pub fn first_eq3(&self) -> Option<Tick> {
        self.eq3_violations.first().map(|v| v.tick)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.events {
            writeln!(f, "event\t{e}")?;
        }
        for v in &self.eq2_violations {
            writeln!(f, "eq2\t{}\t{}\t{:?}", v.tick, v.clause, v.output)?;
        }
        for v in &self.eq3_violations {
            writeln!(f, "eq3\t{}\t{}\t{}", v.tick, v.element, v.value)?;
        }
        for b in &self.assumption_breaks {
            writeln!(f, "assumption\t{}\t{}\t{}", b.tick, b.pair, b.failed)?;
        }
        for s in &self.tracking {
            let tag = if s.compensated { "compensated" } else { "uncompensated" };
            writeln!(f, "tracking\t{}\tplan {}\t{}\t{tag}", s.tick, s.plan, s.error)?;
        }
        Ok(())
    }
}

/// Descriptive constraints in force over `[from, to)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintEpoch {
    pub from: Tick,
    pub to: Tick,
    pub dcs: DescriptiveConstraints,
}

/// One tick of the true world as the pointwise checks need it.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantSample {
    pub tick: Tick,
    pub state: Vec<f64>,
    pub mode: Mode,
    pub output: Vec<f64>,
    /// Command as requested, before any saturation.
    pub command: Option<Vec<f64>>,
}

fn ongoing(mode: Mode, t: Tick) -> bool {
    match mode {
        Mode::Active { .. } => true,
        Mode::Done { at } => at == t,
        Mode::Before => false,
    }
}

/// Pointwise check of `y(t) ∈ Y(t)` while the behavior is ongoing and of
/// every element against its descriptive set. Epochs must cover the
/// samples without gaps.
pub fn replay_check(
    plant: &dyn Plant,
    samples: &[PlantSample],
    epochs: &[ConstraintEpoch],
) -> Result<Verdict, MonitorError> {
    let mut verdict = Verdict::default();
    let pc = plant.behavior().pc();
    let mut epoch = epochs.iter().peekable();
    for s in samples {
        while epoch.peek().is_some_and(|e| e.to <= s.tick) {
            epoch.next();
        }
        let dcs = match epoch.peek() {
            Some(e) if e.from <= s.tick => &e.dcs,
            _ => return Err(MonitorError::EpochGap { tick: s.tick }),
        };
        if ongoing(s.mode, s.tick) && !pc.admits(s.tick, &s.output) {
            verdict.eq2_violations.push(Eq2Violation {
                tick: s.tick,
                clause: pc.name().to_string(),
                output: s.output.clone(),
            });
        }
        let values = plant.element_values(&s.state, s.mode, s.command.as_deref());
        for (element, value) in dcs.violations(&values) {
            verdict.eq3_violations.push(Eq3Violation {
                tick: s.tick,
                element,
                value,
            });
        }
    }
    Ok(verdict)
}

/// Groups per-tick constraint sets into maximal epochs.
pub fn epochs_from(per_tick: Vec<(Tick, DescriptiveConstraints)>) -> Vec<ConstraintEpoch> {
    let mut out: Vec<ConstraintEpoch> = Vec::new();
    for (t, dcs) in per_tick {
        match out.last_mut() {
            Some(e) if e.to == t && e.dcs == dcs => e.to = t + 1,
            _ => out.push(ConstraintEpoch { from: t, to: t + 1, dcs }),
        }
    }
    out
}

/// Id given to references the monitor derives itself before the
/// controller publishes them; published ids start at 1.
const UNPUBLISHED: u64 = 0;

enum Flow {
    Continue,
    Stop,
}

/// Streaming classifier. Feed records in tick order, then call
/// [`Monitor::finish`].
pub struct Monitor {
    plant: Arc<dyn Plant>,
    model: ProcessModel,
    cfg: ControllerConfig,
    end: Tick,
    next_tick: Tick,
    plans: BTreeMap<u64, Reference>,
    prev_active: Option<BTreeSet<String>>,
    samples: Vec<PlantSample>,
    per_tick: Vec<(Tick, DescriptiveConstraints)>,
    verdict: Verdict,
}

struct TickCtx<'a> {
    obs: &'a WorldSnapshot,
    dcs: DescriptiveConstraints,
    queue: Vec<Vec<f64>>,
    effect: Tick,
    horizon: Interval,
    plan: Option<Reference>,
    action_flagged: Option<u64>,
    events: Vec<ScenarioEvent>,
}

impl Monitor {
    /// `end` is the planned run length from the trace header.
    pub fn new(plant: Arc<dyn Plant>, model: ProcessModel, cfg: ControllerConfig, end: Tick) -> Self {
        Self {
            plant,
            model,
            cfg,
            end,
            next_tick: 0,
            plans: BTreeMap::new(),
            prev_active: None,
            samples: Vec::new(),
            per_tick: Vec::new(),
            verdict: Verdict::default(),
        }
    }

    /// Classifies one record and returns the events found at its tick.
    pub fn observe(&mut self, rec: &TraceRecord) -> Result<Vec<ScenarioEvent>, MonitorError> {
        self.validate(rec)?;
        self.next_tick += 1;

        let truth = constraints_at(&self.model, &rec.world)?;
        let active: BTreeSet<String> = truth.active.iter().cloned().collect();
        if let Some(prev) = &self.prev_active {
            for e in truth.excluded.iter().filter(|e| prev.contains(&e.id)) {
                self.verdict.assumption_breaks.push(AssumptionBreak {
                    tick: rec.tick,
                    pair: e.id.clone(),
                    failed: e.failed.clone(),
                });
            }
        }
        self.prev_active = Some(active);
        let mut command = rec.applied.clone();
        for s in &rec.saturations {
            command[s.element.index] = s.requested;
        }
        self.samples.push(PlantSample {
            tick: rec.tick,
            state: rec.world.state.clone(),
            mode: rec.world.mode,
            output: self.plant.behavior_output(rec.tick, &rec.world.state, &rec.world.env),
            command: Some(command),
        });
        self.per_tick.push((rec.tick, truth));

        if let Some(id) = rec.controller.plan {
            let plan = &self.plans[&id];
            if plan.st == rec.tick {
                let error = plan
                    .state_at(rec.tick)
                    .map(|x| max_deviation(x, &rec.world.state))
                    .unwrap_or(f64::NAN);
                self.verdict.tracking.push(TrackingSample {
                    plan: id,
                    tick: rec.tick,
                    error,
                    compensated: plan.compensated,
                });
            }
        }

        // the baseline strategy runs no scenario checks to compare against
        let pipeline = self.cfg.strategy == Strategy::Stpa;
        let events = if pipeline && rec.controller.mode == ControlMode::Normal {
            self.derive_events(rec)?
        } else {
            Vec::new()
        };
        if let Some(r) = &rec.decision.adopted {
            self.plans.insert(r.id, r.clone());
        }
        self.verdict.events.extend(events.iter().cloned());
        Ok(events)
    }

    pub fn finish(self) -> Result<Verdict, MonitorError> {
        let epochs = epochs_from(self.per_tick);
        let pointwise = replay_check(&*self.plant, &self.samples, &epochs)?;
        Ok(Verdict {
            eq2_violations: pointwise.eq2_violations,
            eq3_violations: pointwise.eq3_violations,
            ..self.verdict
        })
    }

    fn validate(&self, rec: &TraceRecord) -> Result<(), MonitorError> {
        let bad = |reason: String| MonitorError::Malformed { tick: rec.tick, reason };
        if rec.tick != self.next_tick {
            return Err(bad(format!("expected tick {}", self.next_tick)));
        }
        for (what, t) in [
            ("world", rec.world.tick),
            ("observation", rec.observed.tick),
            ("decision", rec.decision.tick),
        ] {
            if t != rec.tick {
                return Err(bad(format!("{what} is stamped with tick {t}")));
            }
        }
        let lead = self.cfg.delays.lead();
        if rec.controller.queue.len() as i64 != lead {
            return Err(bad(format!(
                "command queue holds {} entries, the lead is {lead}",
                rec.controller.queue.len()
            )));
        }
        if let Some(id) = rec.controller.plan {
            if !self.plans.contains_key(&id) {
                return Err(bad(format!("plan {id} was never published")));
            }
        }
        let dims = [
            (&rec.world.state, self.plant.construct().dim(crate::process::Space::X), "state"),
            (&rec.applied, self.plant.construct().dim(crate::process::Space::U), "command"),
        ];
        for (v, n, what) in dims {
            if v.len() != n {
                return Err(bad(format!("{what} has {} components, expected {n}", v.len())));
            }
        }
        if rec.saturations.iter().any(|s| s.element.index >= rec.applied.len()) {
            return Err(bad("saturation refers to a missing command component".into()));
        }
        Ok(())
    }

    fn flow(&self, s: Scenario, plan: &mut Option<Reference>) -> Flow {
        match self.cfg.policies.for_scenario(s) {
            None => Flow::Continue,
            Some(Policy::Replan) => {
                *plan = None;
                Flow::Continue
            }
            Some(Policy::Fallback | Policy::Halt) => Flow::Stop,
        }
    }

    fn flag(&self, ctx: &mut TickCtx<'_>, scenario: Scenario, cause: Cause) -> Flow {
        ctx.events.push(ScenarioEvent {
            tick: ctx.obs.tick,
            scenario,
            cause,
        });
        self.flow(scenario, &mut ctx.plan)
    }

    fn predicted(&self, ctx: &TickCtx<'_>) -> (Vec<f64>, Mode) {
        let obs = ctx.obs;
        predict_state(&*self.plant, &obs.state, obs.mode, obs.tick, &ctx.queue, ctx.queue.len() as i64)
            .expect("queue length is the prediction delay")
    }
}

impl Monitor {
    fn derive_events(&self, rec: &TraceRecord) -> Result<Vec<ScenarioEvent>, MonitorError> {
        let obs = &rec.observed;
        let now = rec.tick;
        let queue = rec.controller.queue.clone();
        let effect = now + queue.len() as Tick;
        let plan = rec
            .controller
            .plan
            .map(|id| self.plans[&id].clone())
            .filter(|p| p.sp >= effect && !obs.mode.is_done());
        let hi = (now + self.cfg.planning_ticks).min(self.end).max(now + 1);
        let mut ctx = TickCtx {
            obs,
            dcs: constraints_at(&self.model, obs)?,
            queue,
            effect,
            horizon: Interval::new(now, hi).expect("non-empty horizon"),
            plan,
            action_flagged: rec.controller.action_flagged,
            events: Vec::new(),
        };
        let pcs = {
            let view = PlanningView {
                snapshot: obs,
                dcs: &ctx.dcs,
                committed: &ctx.queue,
                continuation: ctx.plan.as_ref().map(|p| &p.program),
                horizon: ctx.horizon,
            };
            derive_windows(&*self.plant, &view, self.cfg.margin)
        };
        self.stages(&mut ctx, &pcs);
        Ok(ctx.events)
    }

    fn stages(&self, ctx: &mut TickCtx<'_>, pcs: &PrescriptiveConstraints) {
        let obs = ctx.obs;
        let lead = ctx.queue.len() as i64;

        // start windows
        let mut d1_flagged = false;
        if obs.mode.is_before() && ctx.plan.as_ref().is_none_or(|p| p.st >= ctx.effect) {
            let w = &pcs.windows;
            let flag = if pcs.conflict {
                Some((
                    D1Kind::NoDecision,
                    Cause::Conflict {
                        mst: w.mst.clone(),
                        nst: w.nst.clone(),
                    },
                ))
            } else if let Some(p) = ctx.plan.as_ref().filter(|p| !w.st.contains(p.st)) {
                Some((
                    D1Kind::PreviouslySafe,
                    Cause::StartLeftWindow {
                        start: p.st,
                        st: w.st.clone(),
                    },
                ))
            } else if let Some(earliest) = w.st.min().filter(|_| ctx.plan.is_none() && w.st.from_tick(ctx.effect).is_empty()) {
                Some((
                    D1Kind::UnsafeTiming,
                    Cause::Deadline {
                        earliest,
                        effect: ctx.effect,
                        lead,
                    },
                ))
            } else {
                None
            };
            if let Some((kind, cause)) = flag {
                d1_flagged = true;
                if let Flow::Stop = self.flag(ctx, Scenario::D1(kind), cause) {
                    return;
                }
            }
        }

        // reference
        let (x_hat, mode_hat) = self.predicted(ctx);
        if let (Some(plan), false) = (ctx.plan.as_ref(), d1_flagged) {
            let values = self.plant.element_values(&obs.state, obs.mode, None);
            let breach = match ctx.dcs.violations(&values).into_iter().next() {
                Some((element, value)) => Some(Breach::Descriptive {
                    tick: obs.tick,
                    element,
                    value,
                }),
                None => {
                    let origin = Origin {
                        x: &x_hat,
                        mode: mode_hat,
                        tick: ctx.effect,
                    };
                    let until = ctx.horizon.hi().max(plan.sp + 1);
                    recheck_reference(&*self.plant, &plan.program, &ctx.dcs, &obs.env, origin, until).err()
                }
            };
            if let Some(breach) = breach {
                let s = Scenario::D2(StageKind::PreviouslySafe);
                if let Flow::Stop = self.flag(ctx, s, Cause::ReferenceBreach { breach }) {
                    return;
                }
            }
        }
        if ctx.plan.is_none() && !mode_hat.is_done() {
            if let Flow::Stop = self.reference(ctx, pcs, &x_hat, mode_hat, true) {
                return;
            }
        }

        // committed actions
        if lead > 0 {
            if let Err(breach) = check_committed(&*self.plant, obs, &ctx.queue, &ctx.dcs) {
                let frozen_until = obs.tick + self.cfg.delays.frozen();
                let (scenario, patch) = if breach.tick() <= frozen_until {
                    (Scenario::D3(StageKind::UnsafeTiming), None)
                } else {
                    match find_patch(&*self.plant, obs, &ctx.queue, &ctx.dcs, frozen_until) {
                        Some((patch, patched)) => {
                            ctx.queue = patched;
                            (Scenario::D3(StageKind::PreviouslySafe), Some(patch))
                        }
                        None => (Scenario::D3(StageKind::NoDecision), None),
                    }
                };
                let patched = patch.is_some();
                let cause = Cause::CommittedBreach {
                    breach,
                    frozen_until,
                    patch,
                };
                if let Flow::Stop = self.flag(ctx, scenario, cause) {
                    return;
                }
                if patched {
                    ctx.plan = None;
                    let (x_hat, mode_hat) = self.predicted(ctx);
                    if !mode_hat.is_done() {
                        if let Flow::Stop = self.reference(ctx, pcs, &x_hat, mode_hat, false) {
                            return;
                        }
                    }
                }
            }
        }

        // action timing
        let d23 = self.cfg.delays.d23;
        if self.cfg.action_compensation || d23 == 0 {
            return;
        }
        let Some(plan) = ctx.plan.as_ref() else { return };
        if plan.state_at(ctx.effect).is_none() || ctx.action_flagged == Some(plan.id) {
            return;
        }
        let (x_hat, _) = self.predicted(ctx);
        let deviation = max_deviation(&x_hat, &obs.state);
        if deviation > self.cfg.eps_pred {
            let cause = Cause::ActionTiming {
                d23,
                deviation,
                tolerance: self.cfg.eps_pred,
            };
            self.flag(ctx, Scenario::D3(StageKind::TimeCoupling), cause);
        }
    }

    /// Re-runs the reference search the controller needed at this tick.
    fn reference(
        &self,
        ctx: &mut TickCtx<'_>,
        pcs: &PrescriptiveConstraints,
        x_hat: &[f64],
        mode_hat: Mode,
        report_coupling: bool,
    ) -> Flow {
        let obs = ctx.obs;
        let lead = ctx.queue.len() as i64;
        let compensated = self.cfg.reference_compensation;
        let (x, mode) = if compensated {
            (x_hat.to_vec(), mode_hat)
        } else {
            (obs.state.clone(), obs.mode)
        };
        let origin = Origin {
            x: &x,
            mode,
            tick: ctx.effect,
        };
        if let Some(found) = search_reference(&*self.plant, &ctx.dcs, pcs, &obs.env, origin, ctx.horizon) {
            ctx.plan = Some(Reference {
                id: UNPUBLISHED,
                epoch: obs.tick,
                t3: ctx.effect,
                st: found.rollout.st.expect("certified rollouts start"),
                sp: found.rollout.sp.expect("certified rollouts complete"),
                program: found.program,
                x_hat: x,
                mode_hat: mode,
                states: found.rollout.states,
                compensated,
            });
            if report_coupling && !compensated && lead > 0 {
                let deviation = max_deviation(x_hat, &obs.state);
                if deviation > self.cfg.eps_pred {
                    let cause = Cause::StaleState {
                        lead,
                        deviation,
                        tolerance: self.cfg.eps_pred,
                    };
                    return self.flag(ctx, Scenario::D2(StageKind::TimeCoupling), cause);
                }
            }
            return Flow::Continue;
        }
        let now_origin = Origin {
            x: &obs.state,
            mode: obs.mode,
            tick: obs.tick,
        };
        let reachable_now = lead > 0 && search_reference(&*self.plant, &ctx.dcs, pcs, &obs.env, now_origin, ctx.horizon).is_some();
        let (kind, cause) = if reachable_now {
            (StageKind::UnsafeTiming, Cause::TooLate { effect: ctx.effect, lead })
        } else {
            (
                StageKind::NoDecision,
                Cause::NoReference {
                    searched: pcs.windows.st.from_tick(ctx.effect),
                },
            )
        };
        self.flag(ctx, Scenario::D2(kind), cause)
    }
}

/// Classifies a whole recorded trace.
pub fn classify(
    trace: &Trace,
    plant: Arc<dyn Plant>,
    model: ProcessModel,
    cfg: ControllerConfig,
) -> Result<Verdict, MonitorError> {
    if trace.header.plant != plant.name() {
        return Err(MonitorError::PlantMismatch {
            expected: plant.name().to_string(),
            found: trace.header.plant.clone(),
        });
    }
    let mut monitor = Monitor::new(plant, model, cfg, trace.header.ticks);
    for rec in &trace.records {
        monitor.observe(rec)?;
    }
    monitor.finish()
}

fn max_deviation(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
