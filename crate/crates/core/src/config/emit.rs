//! Canonical TOML text for a config; parsing it yields an equal config.

use std::fmt::Write;

use super::parse::{arrow_name, policy_name};
use super::*;
use crate::controller::StagePolicy;

fn quote(s: &str) -> String {
    // JSON string escapes are a subset of TOML basic-string escapes
    serde_json::to_string(s).expect("strings serialize")
}

fn key(s: &str) -> String {
    let bare = !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-');
    if bare {
        s.to_string()
    } else {
        quote(s)
    }
}

fn num(x: f64) -> String {
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    // Debug gives the shortest round-trip text with a fraction or exponent
    format!("{x:?}")
}

fn secs(s: &Seconds) -> String {
    s.value.to_string()
}

fn bound(b: &Bound) -> String {
    match b {
        Bound::Value(v) => num(*v),
        Bound::Param(p) => quote(p),
    }
}

fn sampled<T>(s: &Sampled<T>, show: impl Fn(&T) -> String) -> String {
    match s {
        Sampled::Fixed(v) => show(v),
        Sampled::Range { min, max } => format!("{{ min = {}, max = {} }}", show(min), show(max)),
    }
}

fn cond(v: &CondValue) -> String {
    match v {
        CondValue::Bool(b) => b.to_string(),
        CondValue::Num(x) => num(*x),
    }
}

fn template(t: &Template) -> String {
    let mut fields = vec![format!("template = {}", quote(t.name()))];
    match t {
        Template::IntervalBound { output, lo, hi } => {
            fields.push(format!("output = {}", quote(output)));
            if let Some(lo) = lo {
                fields.push(format!("lo = {}", bound(lo)));
            }
            if let Some(hi) = hi {
                fields.push(format!("hi = {}", bound(hi)));
            }
        }
        Template::GapToTraffic { min } | Template::DistanceToLaneEnd { min } => {
            fields.push(format!("min = {}", bound(min)));
        }
        Template::CorridorOccupancy => {}
        Template::LinearInequality { terms, bound: b } => {
            let terms: Vec<String> = terms.iter().map(|(k, c)| format!("{} = {}", key(k), num(*c))).collect();
            fields.push(format!("terms = {{ {} }}", terms.join(", ")));
            fields.push(format!("bound = {}", bound(b)));
        }
    }
    format!("{{ {} }}", fields.join(", "))
}

fn spans(list: &[(Seconds, Seconds)]) -> String {
    let items: Vec<String> = list.iter().map(|(a, b)| format!("[{}, {}]", secs(a), secs(b))).collect();
    format!("[{}]", items.join(", "))
}

fn stage(out: &mut String, name: &str, p: &StagePolicy) {
    let _ = writeln!(out, "\n[controller.policies.{name}]");
    let _ = writeln!(out, "no_decision = {}", quote(policy_name(p.no_decision)));
    let _ = writeln!(out, "previously_safe = {}", quote(policy_name(p.previously_safe)));
    let _ = writeln!(out, "unsafe_timing = {}", quote(policy_name(p.unsafe_timing)));
}

pub fn emit(c: &ScenarioConfig) -> String {
    let mut out = String::new();
    let o = &mut out;
    let r = &c.run;
    let _ = writeln!(o, "[run]");
    let _ = writeln!(o, "name = {}", quote(&r.name));
    let _ = writeln!(o, "dt = {}", r.dt);
    let _ = writeln!(o, "horizon = {}", secs(&r.horizon));
    let _ = writeln!(o, "seed = {}", r.seed);
    let vis: Vec<String> = r.visibility.iter().map(|v| quote(v)).collect();
    let _ = writeln!(o, "visibility = [{}]", vis.join(", "));

    let _ = writeln!(o, "\n[plant]");
    let _ = writeln!(o, "kind = {}", quote(c.plant.kind()));
    match &c.plant {
        PlantConfig::Merge(m) => {
            let _ = writeln!(o, "lane_end = {}", num(m.lane_end));
            let _ = writeln!(o, "d_end_min = {}", num(m.d_end_min));
            let _ = writeln!(o, "d_gap_min = {}", num(m.d_gap_min));
            let _ = writeln!(o, "merge_time = {}", secs(&m.merge_time));
            let _ = writeln!(o, "commit_time = {}", secs(&m.commit_time));
            let _ = writeln!(o, "envelope = [{}, {}]", num(m.envelope.0), num(m.envelope.1));
            let _ = writeln!(o, "position = {}", num(m.position));
            let _ = writeln!(o, "speed = {}", num(m.speed));
            for v in &m.vehicles {
                let _ = writeln!(o, "\n[[plant.vehicles]]");
                let _ = writeln!(o, "id = {}", quote(&v.id));
                let _ = writeln!(o, "position = {}", sampled(&v.position, |x| num(*x)));
                let _ = writeln!(o, "speed = {}", sampled(&v.speed, |x| num(*x)));
            }
        }
        PlantConfig::Descent(d) => {
            let _ = writeln!(o, "ground_speed = {}", num(d.ground_speed));
            let _ = writeln!(o, "pad_tolerance = {}", num(d.pad_tolerance));
            let _ = writeln!(o, "pad = {}", num(d.pad));
            let _ = writeln!(o, "backup_pad = {}", num(d.backup_pad));
            let _ = writeln!(o, "position = {}", num(d.position));
            let _ = writeln!(o, "altitude = {}", num(d.altitude));
            let _ = writeln!(o, "angle = {}", num(d.angle));
            let _ = writeln!(o, "corridor_busy = {}", spans(&d.corridor_busy));
            let _ = writeln!(o, "pad_busy = {}", spans(&d.pad_busy));
        }
    }

    let mut behaviors: Vec<&BehaviorConfig> = c.behaviors.iter().collect();
    behaviors.sort_by(|a, b| a.name.cmp(&b.name));
    for b in behaviors {
        let _ = writeln!(o, "\n[behaviors.{}]", key(&b.name));
        let _ = writeln!(o, "role = {}", quote(b.role.as_str()));
        let pc: Vec<String> = b.pc.iter().map(template).collect();
        let _ = writeln!(o, "pc = [{}]", pc.join(", "));
    }

    let _ = writeln!(o, "\n[conditions]");
    for (k, v) in &c.conditions {
        let _ = writeln!(o, "{} = {}", key(k), cond(v));
    }

    for p in &c.pairs {
        let _ = writeln!(o, "\n[[pairs]]");
        let _ = writeln!(o, "id = {}", quote(&p.id));
        let _ = writeln!(o, "target = {}", quote(&p.target));
        let _ = writeln!(o, "constraint = [{}, {}]", num(p.constraint.0), num(p.constraint.1));
        let _ = writeln!(o, "system = {}", quote(&p.system.to_string()));
        let _ = writeln!(o, "env = {}", quote(&p.env.to_string()));
        let _ = writeln!(o, "arrow = {}", quote(arrow_name(p.arrow)));
        let _ = writeln!(o, "justification = {}", quote(&p.justification));
    }

    let d = &c.delays;
    let _ = writeln!(o, "\n[delays]");
    let _ = writeln!(o, "d12 = {}", secs(&d.d12));
    let _ = writeln!(o, "d23 = {}", secs(&d.d23));
    for (i, l) in d.latency.iter().enumerate() {
        let _ = writeln!(o, "L{} = {}", i + 1, secs(l));
    }

    let k = &c.controller;
    let strategy = match k.strategy {
        Strategy::Stpa => "stpa",
        Strategy::Naive => "naive",
    };
    let _ = writeln!(o, "\n[controller]");
    let _ = writeln!(o, "strategy = {}", quote(strategy));
    let _ = writeln!(o, "margin = {}", secs(&k.margin));
    let _ = writeln!(o, "planning = {}", secs(&k.planning));
    let _ = writeln!(o, "grid_step = {}", num(k.grid_step));
    let _ = writeln!(o, "gain = {}", num(k.gain));
    let _ = writeln!(o, "eps_pred = {}", num(k.eps_pred));
    let _ = writeln!(o, "reference_compensation = {}", k.reference_compensation);
    let _ = writeln!(o, "action_compensation = {}", k.action_compensation);
    stage(o, "d1", &k.policies.d1);
    stage(o, "d2", &k.policies.d2);
    stage(o, "d3", &k.policies.d3);

    for e in &c.events {
        let _ = writeln!(o, "\n[[events]]");
        let _ = writeln!(o, "at = {}", sampled(&e.at, secs));
        let _ = writeln!(o, "op = {}", quote(e.mutation.op()));
        match &e.mutation {
            MutationConfig::SetCondition { name, value } => {
                let _ = writeln!(o, "name = {}", quote(name));
                let _ = writeln!(o, "value = {}", cond(value));
            }
            MutationConfig::AddVehicle { id, position, speed } => {
                let _ = writeln!(o, "id = {}", quote(id));
                let _ = writeln!(o, "position = {}", num(*position));
                let _ = writeln!(o, "speed = {}", num(*speed));
            }
            MutationConfig::RemoveVehicle { id } => {
                let _ = writeln!(o, "id = {}", quote(id));
            }
            MutationConfig::SetVehicleSpeed { id, speed } => {
                let _ = writeln!(o, "id = {}", quote(id));
                let _ = writeln!(o, "speed = {}", num(*speed));
            }
            MutationConfig::SetConstraint { pair, lo, hi } => {
                let _ = writeln!(o, "pair = {}", quote(pair));
                let _ = writeln!(o, "lo = {}", num(*lo));
                let _ = writeln!(o, "hi = {}", num(*hi));
            }
            MutationConfig::PerturbState { state, delta } => {
                let _ = writeln!(o, "state = {}", quote(state));
                let _ = writeln!(o, "delta = {}", num(*delta));
            }
            MutationConfig::BlockCorridor { from, to } | MutationConfig::BlockPad { from, to } => {
                let _ = writeln!(o, "from = {}", secs(from));
                let _ = writeln!(o, "to = {}", secs(to));
            }
        }
    }
    out
}
