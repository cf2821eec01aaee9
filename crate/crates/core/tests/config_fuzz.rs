mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stpa_plus::config::{parse_config, PlantConfig, Sampled, ScenarioConfig, Seconds};

const MUTATIONS: usize = 10_000;

fn corpus() -> Vec<String> {
    let mut names: Vec<&str> = vec!["merge_nominal", "merge_random", "evtol_nominal", "evtol_inconsistent"];
    names.extend(common::TAXONOMY.iter().map(|(n, _, _)| *n));
    names.into_iter()
        .map(|n| std::fs::read_to_string(common::configs_dir().join(format!("{n}.toml"))).unwrap())
        .collect()
}

/// `(mantissa, scale)` of a plain decimal literal.
fn split_decimal(text: &str) -> (i128, u32) {
    let (int, frac) = text.split_once('.').unwrap_or((text, ""));
    let digits = format!("{int}{frac}");
    (digits.parse().unwrap(), frac.len() as u32)
}

/// Whole ticks in `value` seconds at step `dt`, if the division is exact.
fn exact_ticks(value: &str, dt: &str) -> Option<i64> {
    let (v, vs) = split_decimal(value);
    let (d, ds) = split_decimal(dt);
    let scale = vs.max(ds);
    let v = v * 10i128.pow(scale - vs);
    let d = d * 10i128.pow(scale - ds);
    (v % d == 0).then(|| (v / d) as i64)
}

fn durations(c: &ScenarioConfig) -> Vec<(&'static str, Seconds)> {
    let mut out = vec![
        ("run.horizon", c.run.horizon),
        ("controller.margin", c.controller.margin),
        ("controller.planning", c.controller.planning),
        ("delays.d12", c.delays.d12),
        ("delays.d23", c.delays.d23),
    ];
    out.extend(c.delays.latency.iter().map(|l| ("delays.L", *l)));
    match &c.plant {
        PlantConfig::Merge(m) => {
            out.push(("plant.merge_time", m.merge_time));
            out.push(("plant.commit_time", m.commit_time));
        }
        PlantConfig::Descent(d) => {
            for (a, b) in d.corridor_busy.iter().chain(&d.pad_busy) {
                out.push(("plant.busy", *a));
                out.push(("plant.busy", *b));
            }
        }
    }
    for e in &c.events {
        match e.at {
            Sampled::Fixed(s) => out.push(("events.at", s)),
            Sampled::Range { min, max } => {
                out.push(("events.at", min));
                out.push(("events.at", max));
            }
        }
    }
    out
}

fn assert_exact_durations(c: &ScenarioConfig, context: &str) {
    let dt = c.run.dt.to_string();
    for (name, s) in durations(c) {
        let text = s.value.to_string();
        assert_eq!(
            exact_ticks(&text, &dt),
            Some(s.ticks),
            "{context}: {name} = {text} s accepted as {} ticks at dt {dt}",
            s.ticks
        );
    }
}

const ALPHABET: &[u8] = b"0123456789.-+_=[]{}\",#\n aeinrstx";

fn mutate(src: &str, rng: &mut ChaCha8Rng) -> String {
    let mut bytes = src.as_bytes().to_vec();
    for _ in 0..rng.gen_range(1..=3) {
        let n = bytes.len().max(1);
        let at = rng.gen_range(0..n);
        match rng.gen_range(0..6) {
            0 if !bytes.is_empty() => {
                let i = at.min(bytes.len() - 1);
                bytes[i] = rng.gen();
            }
            1 => bytes.insert(at.min(bytes.len()), ALPHABET[rng.gen_range(0..ALPHABET.len())]),
            2 if !bytes.is_empty() => {
                bytes.remove(at.min(bytes.len() - 1));
            }
            3 => {
                // replace one digit with another, keeping the text shaped like a number
                if let Some(p) = (at..bytes.len()).chain(0..at).find(|&i| bytes[i].is_ascii_digit()) {
                    bytes[p] = b'0' + rng.gen_range(0..10);
                }
            }
            4 => {
                // append extra fractional digits to a duration-like literal
                if let Some(p) = (at..bytes.len()).chain(0..at).find(|&i| bytes[i] == b'.') {
                    let extra = [b'0' + rng.gen_range(0..10), b'0' + rng.gen_range(0..10)];
                    bytes.splice(p + 1..p + 1, extra);
                }
            }
            _ => {
                let start = bytes[..at.min(bytes.len())].iter().rposition(|b| *b == b'\n').map_or(0, |p| p + 1);
                let end = bytes[start..].iter().position(|b| *b == b'\n').map_or(bytes.len(), |p| start + p + 1);
                let line = bytes[start..end].to_vec();
                bytes.splice(end..end, line);
            }
        }
    }
    String::from_utf8_lossy(&bytes).into_owned()
}

#[test]
fn shipped_configs_parse_with_exact_durations() {
    for (i, text) in corpus().iter().enumerate() {
        let c = parse_config(text).unwrap_or_else(|e| panic!("config {i}: {e}"));
        assert_exact_durations(&c, &format!("config {i}"));
    }
}

#[test]
fn mutated_configs_fail_with_structured_errors_only() {
    let sources = corpus();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (mut accepted, mut rejected) = (0, 0);
    for k in 0..MUTATIONS {
        let src = &sources[k % sources.len()];
        let text = mutate(src, &mut rng);
        let parsed = catch_unwind(AssertUnwindSafe(|| parse_config(&text)))
            .unwrap_or_else(|_| panic!("parser panicked on mutation {k}:\n{text}"));
        match parsed {
            Ok(c) => {
                assert_exact_durations(&c, &format!("mutation {k}"));
                catch_unwind(AssertUnwindSafe(|| c.instantiate(c.run.seed)))
                    .unwrap_or_else(|_| panic!("instantiate panicked on mutation {k}:\n{text}"))
                    .ok();
                accepted += 1;
            }
            Err(e) => {
                assert!(!e.issues.is_empty(), "mutation {k}: empty error");
                for issue in &e.issues {
                    assert!(!issue.path.is_empty() && !issue.message.is_empty(), "mutation {k}: {issue:?}");
                }
                rejected += 1;
            }
        }
    }
    assert_eq!(accepted + rejected, MUTATIONS);
    assert!(rejected > MUTATIONS / 10, "only {rejected} rejections; mutations too mild");
    assert!(accepted > 0, "no mutation survived parsing");
}

#[test]
fn oracle_recognizes_inexact_durations() {
    assert_eq!(exact_ticks("0.3", "0.1"), Some(3));
    assert_eq!(exact_ticks("0.25", "0.1"), None);
    assert_eq!(exact_ticks("3", "0.05"), Some(60));
}
