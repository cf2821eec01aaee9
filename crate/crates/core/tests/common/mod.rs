#![allow(dead_code)]

pub mod validation;

use std::collections::BTreeSet;
use std::path::PathBuf;

use stpa_plus::config::{load_config, ScenarioConfig};
use stpa_plus::monitor::{classify, Verdict};
use stpa_plus::scenario::{D1Kind, Scenario, StageKind};
use stpa_plus::sim::run_episode;
use stpa_plus::trace::Trace;
use stpa_plus::window::Tick;

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn config(name: &str) -> ScenarioConfig {
    let path = configs_dir().join(format!("{name}.toml"));
    load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub struct Outcome {
    pub trace: Trace,
    pub verdict: Verdict,
}

impl Outcome {
    /// Scenario events the controller logged, keyed by tick.
    pub fn emitted(&self) -> BTreeSet<(Tick, Scenario)> {
        self.trace
            .records
            .iter()
            .flat_map(|r| r.decision.events.iter().map(|e| e.key()))
            .collect()
    }

    pub fn pc_violations(&self) -> usize {
        self.trace.footer.as_ref().map_or(0, |f| f.summary.pc_violations.len())
    }
}

pub fn run(cfg: &ScenarioConfig, seed: u64) -> Outcome {
    let spec = cfg.instantiate(seed).expect("config instantiates");
    let trace = run_episode(&spec).expect("episode runs");
    let verdict = classify(&trace, spec.plant.clone(), spec.model.clone(), spec.controller.clone())
        .expect("monitor classifies its own trace");
    Outcome { trace, verdict }
}

pub fn run_named(name: &str) -> Outcome {
    let cfg = config(name);
    let seed = cfg.run.seed;
    run(&cfg, seed)
}

/// Each taxonomy fixture with the one event it provokes and its tick.
pub const TAXONOMY: [(&str, Scenario, Tick); 11] = [
    ("taxonomy/d1_no_decision", Scenario::D1(D1Kind::NoDecision), 0),
    ("taxonomy/d1_previously_safe", Scenario::D1(D1Kind::PreviouslySafe), 10),
    ("taxonomy/d1_unsafe_timing", Scenario::D1(D1Kind::UnsafeTiming), 0),
    ("taxonomy/d2_no_decision", Scenario::D2(StageKind::NoDecision), 0),
    ("taxonomy/d2_previously_safe", Scenario::D2(StageKind::PreviouslySafe), 3),
    ("taxonomy/d2_unsafe_timing", Scenario::D2(StageKind::UnsafeTiming), 0),
    ("taxonomy/d2_time_coupling", Scenario::D2(StageKind::TimeCoupling), 0),
    ("taxonomy/d3_no_decision", Scenario::D3(StageKind::NoDecision), 20),
    ("taxonomy/d3_previously_safe", Scenario::D3(StageKind::PreviouslySafe), 20),
    ("taxonomy/d3_unsafe_timing", Scenario::D3(StageKind::UnsafeTiming), 20),
    ("taxonomy/d3_time_coupling", Scenario::D3(StageKind::TimeCoupling), 0),
];

pub const ADVERSARIAL: [&str; 3] = [
    "adversarial/merge_alongside",
    "adversarial/merge_fast_follower",
    "adversarial/evtol_corridor_busy",
];

pub const CORPUS: &str = "merge_random";
pub const CORPUS_SEEDS: std::ops::Range<u64> = 0..100;
