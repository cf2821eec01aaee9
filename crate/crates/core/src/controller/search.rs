//! Building blocks shared by the pipeline and by the standalone monitor:
//! window derivation, reference search, committed-segment checks and
//! patching. None of these raise scenario flags themselves.

use crate::behavior::{derive_prescriptive, PrescriptiveConstraints};
use crate::plant::{
    check_rollout, rollout, Breach, CheckScope, Environment, Mode, PatchControl, PlanningView, Plant, Program, Rollout,
    WorldSnapshot,
};
use crate::process::{aggregate, DescriptiveConstraints, ProcessError, ProcessModel};
use crate::window::{Interval, Tick};

/// Descriptive constraints in force for a snapshot, honoring any
/// constraint overrides it carries.
pub fn constraints_at(model: &ProcessModel, snap: &WorldSnapshot) -> Result<DescriptiveConstraints, ProcessError> {
    if snap.overrides.is_empty() {
        return aggregate(model, &snap.conditions);
    }
    let mut m = model.clone();
    for (id, set) in &snap.overrides {
        m.set_constraint(id, set.clone());
    }
    aggregate(&m, &snap.conditions)
}

pub fn derive_windows(plant: &dyn Plant, view: &PlanningView<'_>, margin: i64) -> PrescriptiveConstraints {
    let predicates = plant.predicates(view);
    derive_prescriptive(plant.behavior(), &Wrap(&*predicates), view.now(), view.horizon, margin)
}

struct Wrap<'a>(&'a dyn crate::behavior::TransitionPredicates);

impl crate::behavior::TransitionPredicates for Wrap<'_> {
    fn start_safe_until(&self, t: Tick) -> bool {
        self.0.start_safe_until(t)
    }
    fn start_feasible(&self, t: Tick) -> bool {
        self.0.start_feasible(t)
    }
    fn stop_safe_until(&self, t: Tick) -> bool {
        self.0.stop_safe_until(t)
    }
    fn stop_feasible(&self, t: Tick) -> bool {
        self.0.stop_feasible(t)
    }
}

/// Where a reference search starts from.
#[derive(Debug, Clone, Copy)]
pub struct Origin<'a> {
    pub x: &'a [f64],
    pub mode: Mode,
    pub tick: Tick,
}

/// A certified candidate: the program and its replay from the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub program: Program,
    pub rollout: Rollout,
}

/// Earliest start first, then the plant's preference order. Every
/// candidate is replayed and checked tick by tick; the first that passes
/// wins.
pub fn search_reference(
    plant: &dyn Plant,
    dcs: &DescriptiveConstraints,
    pcs: &PrescriptiveConstraints,
    env: &Environment,
    origin: Origin<'_>,
    horizon: Interval,
) -> Option<Candidate> {
    let started = !origin.mode.is_before();
    let starts: Vec<Tick> = if started {
        vec![origin.tick]
    } else {
        pcs.windows.st.from_tick(origin.tick).ticks().collect()
    };
    let scope = CheckScope {
        dcs,
        env,
        windows: (!started).then_some((&pcs.windows.st, &pcs.windows.sp)),
        from: origin.tick,
        in_behavior: true,
        require_completion: true,
    };
    for start in starts {
        for program in plant.family(start, dcs, origin.x, origin.mode, origin.tick, env) {
            let r = rollout(plant, origin.x, origin.mode, origin.tick, horizon.hi(), |t| {
                program.control_at(t).to_vec()
            });
            if check_rollout(plant, &r, &scope).is_ok() {
                return Some(Candidate { program, rollout: r });
            }
        }
    }
    None
}

/// Replays the active reference from the predicted state at `from` and
/// checks it against the current constraints.
pub fn recheck_reference(
    plant: &dyn Plant,
    program: &Program,
    dcs: &DescriptiveConstraints,
    env: &Environment,
    origin: Origin<'_>,
    until: Tick,
) -> Result<(), Breach> {
    let r = rollout(plant, origin.x, origin.mode, origin.tick, until, |t| program.control_at(t).to_vec());
    let scope = CheckScope {
        dcs,
        env,
        windows: None,
        from: origin.tick,
        in_behavior: true,
        require_completion: false,
    };
    check_rollout(plant, &r, &scope)
}

/// Replays the committed controls from the observation; the check covers
/// the states they lead to (`now+1 ..= now+len`).
pub fn check_committed(
    plant: &dyn Plant,
    obs: &WorldSnapshot,
    queue: &[Vec<f64>],
    dcs: &DescriptiveConstraints,
) -> Result<(), Breach> {
    let now = obs.tick;
    let r = rollout(plant, &obs.state, obs.mode, now, now + queue.len() as Tick, |t| {
        queue[(t - now) as usize].clone()
    });
    let scope = CheckScope {
        dcs,
        env: &obs.env,
        windows: None,
        from: now + 1,
        in_behavior: true,
        require_completion: false,
    };
    check_rollout(plant, &r, &scope)?;
    // the controls themselves must be admissible too
    for (k, u) in r.controls.iter().enumerate() {
        let values = plant.element_values(&r.states[k], r.modes[k], Some(u));
        let bad = dcs
            .violations(&values)
            .into_iter()
            .find(|(e, _)| e.space == crate::process::Space::U);
        if let Some((element, value)) = bad {
            return Err(Breach::Descriptive {
                tick: now + k as Tick,
                element,
                value,
            });
        }
    }
    Ok(())
}

/// First constant patch over `[patch_from, now+len)` that makes the
/// committed segment pass; returns the patch and the patched queue.
pub fn find_patch(
    plant: &dyn Plant,
    obs: &WorldSnapshot,
    queue: &[Vec<f64>],
    dcs: &DescriptiveConstraints,
    patch_from: Tick,
) -> Option<(PatchControl, Vec<Vec<f64>>)> {
    let now = obs.tick;
    let first = usize::try_from(patch_from - now).ok()?;
    if first >= queue.len() {
        return None;
    }
    for patch in plant.patch_family(dcs) {
        let mut patched = queue.to_vec();
        for u in patched.iter_mut().skip(first) {
            *u = plant.apply_patch(u, &patch);
        }
        if check_committed(plant, obs, &patched, dcs).is_ok() {
            return Some((patch, patched));
        }
    }
    None
}

/// Controls for the committed segment with everything from `from` on
/// replaced by the fallback maneuver. Also returns the predicted state at
/// the end of the segment.
pub fn fallback_queue(
    plant: &dyn Plant,
    obs: &WorldSnapshot,
    queue: &[Vec<f64>],
    dcs: &DescriptiveConstraints,
    from: Tick,
) -> (Vec<Vec<f64>>, Vec<f64>, Mode) {
    let now = obs.tick;
    let mut out = queue.to_vec();
    let mut x = obs.state.clone();
    let mut mode = obs.mode;
    for (k, u) in out.iter_mut().enumerate() {
        let t = now + k as Tick;
        if t >= from {
            *u = plant.fallback_control(&x, mode, dcs);
        }
        (x, mode) = plant.step(&x, mode, u, t);
    }
    (out, x, mode)
}
