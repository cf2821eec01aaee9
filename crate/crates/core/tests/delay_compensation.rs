mod common;

use stpa_plus::config::{Decimal, DelayConfig, ScenarioConfig, Seconds};
use stpa_plus::controller::Reference;
use stpa_plus::window::Tick;

const FIXTURE: &str = "taxonomy/d2_time_coupling";

fn variant(compensated: bool) -> ScenarioConfig {
    let mut cfg = common::config(FIXTURE);
    cfg.controller.reference_compensation = compensated;
    cfg
}

fn adopted(out: &common::Outcome) -> Vec<Reference> {
    out.trace.records.iter().filter_map(|r| r.decision.adopted.clone()).collect()
}

fn deviation(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Realized-minus-reference deviation at the first tick the behavior runs.
fn onset_error(out: &common::Outcome) -> f64 {
    let onset = out
        .trace
        .records
        .iter()
        .find(|r| !r.world.mode.is_before())
        .map(|r| r.tick)
        .expect("the merge starts");
    let reference = adopted(out)
        .into_iter()
        .filter(|r| r.t3 <= onset)
        .last()
        .expect("a reference was in force at onset");
    let planned = reference.state_at(onset).expect("reference covers onset");
    deviation(&out.trace.records[onset as usize].world.state, planned)
}

#[test]
fn fixture_has_a_ten_tick_update_window() {
    let cfg = common::config(FIXTURE);
    let delays = cfg.controller_config().unwrap().delays;
    assert_eq!(delays.d13(), 10);
}

#[test]
fn compensated_prediction_matches_realized_state() {
    let out = common::run(&variant(true), 0);
    let refs = adopted(&out);
    assert!(!refs.is_empty());
    let end = out.trace.records.len() as Tick;
    let mut checked = 0;
    for r in refs.iter().filter(|r| r.t3 < end) {
        assert!(r.compensated);
        let realized = &out.trace.records[r.t3 as usize].world.state;
        let err = deviation(&r.x_hat, realized);
        assert!(err <= 1e-9, "plan {} at t3={}: {err}", r.id, r.t3);
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn uncompensated_prediction_is_the_stale_observation() {
    let out = common::run(&variant(false), 0);
    let first = adopted(&out).into_iter().next().expect("a reference");
    assert!(!first.compensated);
    let at_epoch = &out.trace.records[first.epoch as usize].observed.state;
    assert_eq!(&first.x_hat, at_epoch);
}

#[test]
fn uncompensated_tracking_error_exceeds_compensated() {
    let with = onset_error(&common::run(&variant(true), 0));
    let without = onset_error(&common::run(&variant(false), 0));
    assert!(without > with, "uncompensated {without} vs compensated {with}");
}

#[test]
fn zero_delay_prediction_is_the_observation() {
    let mut cfg = common::config("merge_nominal");
    let zero = Seconds {
        value: Decimal::from_int(0),
        ticks: 0,
    };
    cfg.delays = DelayConfig {
        d12: zero,
        d23: zero,
        latency: [zero; 3],
    };
    let out = common::run(&cfg, cfg.run.seed);
    let first = adopted(&out).into_iter().next().expect("a reference");
    assert_eq!(first.t3, first.epoch);
    assert_eq!(&first.x_hat, &out.trace.records[first.epoch as usize].observed.state);
}
