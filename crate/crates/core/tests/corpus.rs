mod common;

use stpa_plus::config::PlantConfig;
use stpa_plus::plant::Terminal;
use stpa_plus::scenario::{D1Kind, Scenario};

#[test]
fn monitor_matches_controller_and_episodes_stay_hazard_free() {
    let cfg = common::config(common::CORPUS);
    let PlantConfig::Merge(m) = &cfg.plant else { panic!("merge corpus") };
    let mut merged = 0;
    for seed in common::CORPUS_SEEDS {
        let out = common::run(&cfg, seed);
        assert_eq!(out.emitted(), out.verdict.event_keys(), "seed {seed}");
        let summary = &out.trace.footer.as_ref().expect("footer").summary;
        let no_decision = out.emitted().iter().any(|(_, s)| *s == Scenario::D1(D1Kind::NoDecision));
        if no_decision {
            assert_eq!(summary.terminal, Terminal::FallbackComplete, "seed {seed}");
            assert!(summary.final_state[0] < m.lane_end, "seed {seed}");
        } else {
            assert!(summary.pc_violations.is_empty(), "seed {seed}: {:?}", summary.pc_violations);
        }
        assert_ne!(summary.terminal, Terminal::Hazard, "seed {seed}");
        merged += usize::from(summary.terminal == Terminal::Merged);
    }
    // the corpus is meant to exercise merges, not only fallbacks
    assert!(merged >= 90, "only {merged} merges");
}

#[test]
fn seeds_produce_different_traffic() {
    let cfg = common::config(common::CORPUS);
    let a = cfg.instantiate(1).unwrap();
    let b = cfg.instantiate(2).unwrap();
    assert_ne!(a.world.snapshot(), b.world.snapshot());
    assert_eq!(a.world.snapshot(), cfg.instantiate(1).unwrap().world.snapshot());
}
