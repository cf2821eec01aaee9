mod common;

use std::thread;

use stpa_plus::trace::trace_to_string;

pub const CONFIGS: [&str; 10] = [
    "merge_nominal",
    "merge_dense",
    "merge_random",
    "evtol_nominal",
    "evtol_backup_pad",
    "adversarial/merge_alongside",
    "adversarial/evtol_corridor_busy",
    "taxonomy/d1_previously_safe",
    "taxonomy/d2_previously_safe",
    "taxonomy/d3_previously_safe",
];

fn render(name: &str) -> String {
    trace_to_string(&common::run_named(name).trace)
}

#[test]
fn repeated_runs_are_byte_identical() {
    for name in CONFIGS {
        assert_eq!(render(name), render(name), "{name}");
    }
}

#[test]
fn concurrent_runs_match_sequential_runs() {
    let sequential: Vec<String> = CONFIGS.iter().map(|n| render(n)).collect();
    let concurrent: Vec<String> = thread::scope(|s| {
        let handles: Vec<_> = CONFIGS.iter().map(|n| s.spawn(move || render(n))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for ((name, a), b) in CONFIGS.iter().zip(&sequential).zip(&concurrent) {
        assert!(a == b, "{name}");
    }
}
