mod common;

use std::io::Cursor;

use stpa_plus::sim::run_episode;
use stpa_plus::trace::{read_trace, trace_to_string, TraceError};

fn lines(text: &str) -> Vec<&str> {
    text.lines().collect()
}

#[test]
fn read_inverts_write_bit_exactly() {
    for name in ["merge_nominal", "evtol_nominal", "taxonomy/d3_previously_safe"] {
        let out = common::run_named(name);
        let text = trace_to_string(&out.trace);
        let back = read_trace(Cursor::new(text.as_bytes())).unwrap();
        assert_eq!(back, out.trace, "{name}");
        assert_eq!(trace_to_string(&back), text, "{name}");
    }
}

#[test]
fn records_are_tick_contiguous_from_zero() {
    let out = common::run_named("merge_nominal");
    for (k, r) in out.trace.records.iter().enumerate() {
        assert_eq!(r.tick, k as i64);
        assert_eq!(r.world.tick, k as i64);
    }
}

#[test]
fn truncated_trace_names_the_first_missing_tick() {
    let out = common::run_named("merge_nominal");
    let text = trace_to_string(&out.trace);
    let all = lines(&text);
    // header plus ticks 0..=4, no footer
    let cut = all[..6].join("\n");
    match read_trace(Cursor::new(cut.as_bytes())) {
        Err(TraceError::Truncated { missing }) => assert_eq!(missing, 5),
        other => panic!("expected truncation, got {other:?}"),
    }
}

#[test]
fn footer_after_missing_records_is_truncation() {
    let out = common::run_named("merge_nominal");
    let text = trace_to_string(&out.trace);
    let all = lines(&text);
    let mut kept: Vec<&str> = all[..4].to_vec();
    kept.push(all[all.len() - 1]);
    assert!(matches!(
        read_trace(Cursor::new(kept.join("\n").as_bytes())),
        Err(TraceError::Truncated { missing: 3 })
    ));
}

#[test]
fn skipped_tick_is_a_gap() {
    let out = common::run_named("merge_nominal");
    let text = trace_to_string(&out.trace);
    let mut all = lines(&text);
    all.remove(3);
    match read_trace(Cursor::new(all.join("\n").as_bytes())) {
        Err(TraceError::Gap { line, expected, found }) => {
            assert_eq!((line, expected, found), (4, 2, 3));
        }
        other => panic!("expected a gap, got {other:?}"),
    }
}

#[test]
fn malformed_lines_are_corrupt() {
    let out = common::run_named("merge_nominal");
    let text = trace_to_string(&out.trace);
    let all = lines(&text);
    let bad = format!("{}\n{{\"record\": 7}}\n", all[0]);
    assert!(matches!(read_trace(Cursor::new(bad.as_bytes())), Err(TraceError::Corrupt { line: 2, .. })));
    let headless = all[1..].join("\n");
    assert!(matches!(read_trace(Cursor::new(headless.as_bytes())), Err(TraceError::Corrupt { line: 1, .. })));
    assert!(matches!(read_trace(Cursor::new(b"" as &[u8])), Err(TraceError::Empty)));
}

#[test]
fn zero_tick_episode_is_header_only() {
    let cfg = common::config("merge_nominal");
    let mut spec = cfg.instantiate(cfg.run.seed).unwrap();
    spec.ticks = 0;
    let trace = run_episode(&spec).unwrap();
    assert!(trace.records.is_empty());
    let text = trace_to_string(&trace);
    assert_eq!(text.lines().count(), 1, "{text}");
    let back = read_trace(Cursor::new(text.as_bytes())).unwrap();
    assert_eq!(back, trace);
}
