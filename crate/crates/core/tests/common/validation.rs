//! Independent oracles shared by the property tests and the acceptance run.

use proptest::prelude::*;

use stpa_plus::behavior::{BehaviorTrace, Clause, PerformanceConstraint, PrescriptiveConstraints, Windows};
use stpa_plus::window::{Interval, Tick, WindowSet};

pub const H: Tick = 48;

#[derive(Debug, Clone)]
pub struct Instance {
    pub st_ok: Vec<bool>,
    pub sp_ok: Vec<bool>,
    pub ceiling: Vec<i32>,
    pub st: Tick,
    pub sp: Tick,
    pub ys: Vec<i32>,
}

pub fn instance() -> impl Strategy<Value = Instance> {
    let bits = || prop::collection::vec(prop::bool::weighted(0.7), H as usize);
    (bits(), bits(), prop::collection::vec(0..10i32, H as usize), 0..H - 1)
        .prop_flat_map(|(st_ok, sp_ok, ceiling, st)| {
            let len = (H - st - 1) as usize;
            (Just((st_ok, sp_ok, ceiling, st)), 1..=len as Tick)
        })
        .prop_flat_map(|((st_ok, sp_ok, ceiling, st), span)| {
            let n = span as usize + 1;
            (
                Just((st_ok, sp_ok, ceiling, st, st + span)),
                prop::collection::vec(0..11i32, n),
            )
        })
        .prop_map(|((st_ok, sp_ok, ceiling, st, sp), ys)| Instance {
            st_ok,
            sp_ok,
            ceiling,
            st,
            sp,
            ys,
        })
}

pub fn window(bits: &[bool]) -> WindowSet {
    WindowSet::from_predicate(Interval::new(0, H).unwrap(), |t| bits[t as usize])
}

pub fn constraints(inst: &Instance) -> PrescriptiveConstraints {
    let ceiling = inst.ceiling.clone();
    let st = window(&inst.st_ok);
    let sp = window(&inst.sp_ok);
    let domain = Interval::new(0, H).unwrap();
    PrescriptiveConstraints {
        y: PerformanceConstraint::new("y0 <= ceiling(t)", move |t, y| y[0] <= ceiling[t as usize] as f64),
        windows: Windows {
            nst: st.complement(domain).unwrap(),
            nsp: sp.complement(domain).unwrap(),
            st,
            sp,
            ..Windows::default()
        },
        derivation_epoch: 0,
        horizon: domain,
        conflict: false,
    }
}

pub fn trace(inst: &Instance) -> BehaviorTrace {
    BehaviorTrace {
        st: inst.st,
        sp: inst.sp,
        samples: inst
            .ys
            .iter()
            .enumerate()
            .map(|(k, y)| (inst.st + k as Tick, vec![*y as f64]))
            .collect(),
    }
}

/// Pointwise checker over plain arrays: (clause, first offending tick).
pub fn oracle(inst: &Instance) -> Vec<(Clause, Tick)> {
    let mut out = Vec::new();
    if !inst.st_ok[inst.st as usize] {
        out.push((Clause::StartWindow, inst.st));
    }
    if !inst.sp_ok[inst.sp as usize] {
        out.push((Clause::StopWindow, inst.sp));
    }
    let first = (inst.st..=inst.sp).find(|&t| inst.ys[(t - inst.st) as usize] > inst.ceiling[t as usize]);
    if let Some(t) = first {
        out.push((Clause::Performance, t));
    }
    out
}
