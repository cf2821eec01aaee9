mod common;

use std::fs;

use stpa_plus::config::{emit, parse_config, ConfigError, SCHEMA};

fn all_config_names() -> Vec<String> {
    let root = common::configs_dir();
    let mut out = Vec::new();
    for dir in ["", "taxonomy", "adversarial"] {
        for entry in fs::read_dir(root.join(dir)).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "toml") {
                let stem = path.file_stem().unwrap().to_str().unwrap();
                out.push(if dir.is_empty() { stem.to_string() } else { format!("{dir}/{stem}") });
            }
        }
    }
    out.sort();
    out
}

fn nominal() -> String {
    fs::read_to_string(common::configs_dir().join("merge_nominal.toml")).unwrap()
}

fn errors(text: &str) -> ConfigError {
    parse_config(text).expect_err("config should be rejected")
}

#[test]
fn every_shipped_config_round_trips_through_emit() {
    let names = all_config_names();
    assert!(names.len() >= 20, "{names:?}");
    for name in names {
        let cfg = common::config(&name);
        let text = emit(&cfg);
        let back = parse_config(&text).unwrap_or_else(|e| panic!("{name}: re-emitted config rejected: {e}\n{text}"));
        assert_eq!(back, cfg, "{name}");
        assert_eq!(emit(&back), text, "{name}: emit is a fixed point");
    }
}

#[test]
fn duration_off_the_tick_lattice_is_rejected() {
    let text = nominal().replace("merge_time = 3", "merge_time = 0.25");
    let e = errors(&text);
    assert_eq!(e.issues.len(), 1, "{e}");
    let issue = &e.issues[0];
    assert_eq!(issue.path, "plant.merge_time");
    assert!(issue.message.contains("not an integer multiple of dt"), "{issue}");
    let line = text.lines().position(|l| l.starts_with("merge_time")).unwrap() + 1;
    assert_eq!(issue.line, Some(line));
}

#[test]
fn unjustified_pair_without_assumptions_is_rejected() {
    let text = nominal().replace("env = \"dry_road\"", "env = \"NA\"");
    let e = errors(&text);
    assert!(
        e.issues.iter().any(|i| i.path.starts_with("pairs[0]") && i.message.contains("justification")),
        "{e}"
    );
}

#[test]
fn all_problems_are_reported_together() {
    let text = nominal()
        .replace("merge_time = 3", "merge_time = 0.25")
        .replace("lane_end = 300", "lane_end = \"far\"")
        .replace("env = \"dry_road\"", "env = \"wet_road\"")
        .replace("seed = 7", "seed = 7\nwhatever = 1");
    let e = errors(&text);
    let paths: Vec<&str> = e.issues.iter().map(|i| i.path.as_str()).collect();
    for want in ["plant.merge_time", "plant.lane_end", "run.whatever"] {
        assert!(paths.contains(&want), "missing {want} in {paths:?}");
    }
    let lines: Vec<usize> = e.issues.iter().filter_map(|i| i.line).collect();
    assert!(lines.windows(2).all(|w| w[0] <= w[1]), "issues in document order: {lines:?}");
}

#[test]
fn undeclared_condition_is_reported() {
    let text = nominal().replace("env = \"dry_road\"", "env = \"wet_road\"");
    let e = errors(&text);
    assert!(e.to_string().contains("wet_road"), "{e}");
}

#[test]
fn syntax_error_points_at_the_document() {
    let e = errors("[run\nname = 1");
    assert_eq!(e.issues[0].path, "document");
    assert_eq!(e.issues[0].line, Some(1));
}

#[test]
fn missing_role_is_an_error_not_a_panic() {
    let text = nominal().replace("role = \"out\"", "role = \"in\"");
    let e = errors(&text);
    assert!(e.to_string().contains("exactly one behavior"), "{e}");
}

#[test]
fn schema_is_json_naming_every_section() {
    let schema: serde_json::Value = serde_json::from_str(SCHEMA).unwrap();
    let props = schema["properties"].as_object().unwrap();
    for section in ["run", "plant", "behaviors", "conditions", "pairs", "delays", "controller", "events"] {
        assert!(props.contains_key(section), "{section}");
    }
}
