//! TOML to [`ScenarioConfig`], collecting every problem with its location.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use toml::de::{DeTable, DeValue};
use toml::Spanned;

use super::*;
use crate::controller::{Policy, StagePolicy};
use crate::process::{Construct, ConditionSnapshot};

type Value<'i> = Spanned<DeValue<'i>>;

/// Issue sink plus the source text for line numbers.
struct Doc<'s> {
    src: &'s str,
    issues: Vec<ConfigIssue>,
    /// Line of every field path seen, for issues raised after parsing.
    lines: BTreeMap<String, usize>,
}

impl<'s> Doc<'s> {
    fn line(&self, span: &Range<usize>) -> usize {
        let end = span.start.min(self.src.len());
        self.src.as_bytes()[..end].iter().filter(|b| **b == b'\n').count() + 1
    }

    fn error(&mut self, path: &str, span: Option<&Range<usize>>, message: impl Into<String>) {
        let line = span.map(|s| self.line(s)).or_else(|| self.lines.get(path).copied());
        self.issues.push(ConfigIssue {
            path: path.to_string(),
            line,
            message: message.into(),
        });
    }

    fn at(&mut self, path: &str, v: &Value<'_>, message: impl Into<String>) {
        let span = v.span();
        self.error(path, Some(&span), message);
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn kind_name(v: &DeValue<'_>) -> &'static str {
    match v {
        DeValue::String(_) => "a string",
        DeValue::Integer(_) => "an integer",
        DeValue::Float(_) => "a float",
        DeValue::Boolean(_) => "a boolean",
        DeValue::Datetime(_) => "a datetime",
        DeValue::Array(_) => "an array",
        DeValue::Table(_) => "a table",
    }
}

/// A table being read; remembers which keys were consumed.
struct Fields<'a, 'i> {
    path: String,
    span: Range<usize>,
    entries: Vec<(&'a str, &'a Value<'i>, Range<usize>)>,
    used: BTreeSet<&'a str>,
}

impl<'a, 'i> Fields<'a, 'i> {
    fn new(path: String, span: Range<usize>, table: &'a DeTable<'i>, doc: &mut Doc<'_>) -> Self {
        let entries: Vec<_> = table.iter().map(|(k, v)| (k.get_ref().as_ref(), v, k.span())).collect();
        for (k, _, span) in &entries {
            let line = doc.line(span);
            doc.lines.insert(join(&path, k), line);
        }
        Self {
            path,
            span,
            entries,
            used: BTreeSet::new(),
        }
    }

    fn path(&self, key: &str) -> String {
        join(&self.path, key)
    }

    fn get(&mut self, key: &str) -> Option<&'a Value<'i>> {
        let found = self.entries.iter().find(|(k, _, _)| *k == key).map(|(k, v, _)| (*k, *v));
        found.map(|(k, v)| {
            self.used.insert(k);
            v
        })
    }

    fn require(&mut self, key: &str, doc: &mut Doc<'_>) -> Option<&'a Value<'i>> {
        let v = self.get(key);
        if v.is_none() {
            let span = self.span.clone();
            doc.error(&self.path(key), Some(&span), "missing required field");
        }
        v
    }

    fn finish(self, doc: &mut Doc<'_>) {
        for (k, _, span) in &self.entries {
            if !self.used.contains(k) {
                doc.error(&join(&self.path, k), Some(span), "unknown key");
            }
        }
    }

    fn keys(&self) -> Vec<&'a str> {
        self.entries.iter().map(|(k, _, _)| *k).collect()
    }
}

fn table<'a, 'i>(doc: &mut Doc<'_>, path: String, v: &'a Value<'i>) -> Option<Fields<'a, 'i>> {
    match v.get_ref() {
        DeValue::Table(t) => Some(Fields::new(path, v.span(), t, doc)),
        other => {
            doc.at(&path, v, format!("expected a table, found {}", kind_name(other)));
            None
        }
    }
}

fn array<'a, 'i>(doc: &mut Doc<'_>, path: &str, v: &'a Value<'i>) -> Option<&'a [Value<'i>]> {
    match v.get_ref() {
        DeValue::Array(a) => Some(a.as_ref()),
        other => {
            doc.at(path, v, format!("expected an array, found {}", kind_name(other)));
            None
        }
    }
}

fn string(doc: &mut Doc<'_>, path: &str, v: &Value<'_>) -> Option<String> {
    match v.get_ref() {
        DeValue::String(s) => Some(s.to_string()),
        other => {
            doc.at(path, v, format!("expected a string, found {}", kind_name(other)));
            None
        }
    }
}

fn boolean(doc: &mut Doc<'_>, path: &str, v: &Value<'_>) -> Option<bool> {
    match v.get_ref() {
        DeValue::Boolean(b) => Some(*b),
        other => {
            doc.at(path, v, format!("expected a boolean, found {}", kind_name(other)));
            None
        }
    }
}

fn decimal(doc: &mut Doc<'_>, path: &str, v: &Value<'_>) -> Option<Decimal> {
    let text = match v.get_ref() {
        DeValue::Integer(i) if i.radix() == 10 => i.as_str(),
        DeValue::Float(f) => f.as_str(),
        other => {
            doc.at(path, v, format!("expected a decimal number, found {}", kind_name(other)));
            return None;
        }
    };
    match text.parse::<Decimal>() {
        Ok(d) => Some(d),
        Err(e) => {
            doc.at(path, v, e.to_string());
            None
        }
    }
}

/// Any TOML number as `f64`; infinities only where `allow_infinite`.
fn number(doc: &mut Doc<'_>, path: &str, v: &Value<'_>, allow_infinite: bool) -> Option<f64> {
    let parsed = match v.get_ref() {
        DeValue::Integer(i) => i64::from_str_radix(&i.as_str().replace('_', ""), i.radix()).ok().map(|n| n as f64),
        DeValue::Float(f) => {
            let text = f.as_str().replace('_', "");
            match text.as_str() {
                "inf" | "+inf" => Some(f64::INFINITY),
                "-inf" => Some(f64::NEG_INFINITY),
                "nan" | "+nan" | "-nan" => Some(f64::NAN),
                t => t.parse().ok(),
            }
        }
        other => {
            doc.at(path, v, format!("expected a number, found {}", kind_name(other)));
            return None;
        }
    };
    match parsed {
        Some(x) if x.is_nan() => doc.at(path, v, "NaN is not allowed"),
        Some(x) if x.is_infinite() && !allow_infinite => doc.at(path, v, "must be finite"),
        Some(x) => return Some(x),
        None => doc.at(path, v, "number out of range"),
    }
    None
}

fn seconds(doc: &mut Doc<'_>, path: &str, v: &Value<'_>, dt: Option<Decimal>) -> Option<Seconds> {
    let value = decimal(doc, path, v)?;
    if value.is_negative() {
        doc.at(path, v, "duration must not be negative");
        return None;
    }
    let dt = dt?;
    match value.div_exact(&dt) {
        Some(ticks) => Some(Seconds { value, ticks }),
        None => {
            doc.at(path, v, format!("{value} s is not an integer multiple of dt = {dt} s"));
            None
        }
    }
}

fn choice<T: Copy>(doc: &mut Doc<'_>, path: &str, v: &Value<'_>, options: &[(&str, T)]) -> Option<T> {
    let s = string(doc, path, v)?;
    match options.iter().find(|(name, _)| *name == s) {
        Some((_, t)) => Some(*t),
        None => {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            doc.at(path, v, format!("{s:?} is not one of {}", names.join(", ")));
            None
        }
    }
}

fn pair_of<T>(
    doc: &mut Doc<'_>,
    path: &str,
    v: &Value<'_>,
    mut item: impl FnMut(&mut Doc<'_>, &str, &Value<'_>) -> Option<T>,
) -> Option<(T, T)> {
    let items = array(doc, path, v)?;
    if items.len() != 2 {
        doc.at(path, v, format!("expected two elements, found {}", items.len()));
        return None;
    }
    let a = item(doc, &format!("{path}[0]"), &items[0]);
    let b = item(doc, &format!("{path}[1]"), &items[1]);
    Some((a?, b?))
}

fn ordered<T: PartialOrd>(doc: &mut Doc<'_>, path: &str, v: &Value<'_>, lo: &T, hi: &T) -> bool {
    if lo > hi {
        doc.at(path, v, "lower end exceeds upper end");
        return false;
    }
    true
}

fn sampled_f64(doc: &mut Doc<'_>, path: &str, v: &Value<'_>) -> Option<Sampled<f64>> {
    if let DeValue::Table(_) = v.get_ref() {
        let mut f = table(doc, path.to_string(), v)?;
        let min = f.require("min", doc).and_then(|x| number(doc, &f.path("min"), x, false));
        let max = f.require("max", doc).and_then(|x| number(doc, &f.path("max"), x, false));
        f.finish(doc);
        let (min, max) = (min?, max?);
        return ordered(doc, path, v, &min, &max).then_some(Sampled::Range { min, max });
    }
    number(doc, path, v, false).map(Sampled::Fixed)
}

fn sampled_seconds(doc: &mut Doc<'_>, path: &str, v: &Value<'_>, dt: Option<Decimal>) -> Option<Sampled<Seconds>> {
    if let DeValue::Table(_) = v.get_ref() {
        let mut f = table(doc, path.to_string(), v)?;
        let min = f.require("min", doc).and_then(|x| seconds(doc, &f.path("min"), x, dt));
        let max = f.require("max", doc).and_then(|x| seconds(doc, &f.path("max"), x, dt));
        f.finish(doc);
        let (min, max) = (min?, max?);
        return ordered(doc, path, v, &min.ticks, &max.ticks).then_some(Sampled::Range { min, max });
    }
    seconds(doc, path, v, dt).map(Sampled::Fixed)
}

fn spans(doc: &mut Doc<'_>, path: &str, v: &Value<'_>, dt: Option<Decimal>) -> Option<Vec<(Seconds, Seconds)>> {
    let items = array(doc, path, v)?;
    let mut out = Some(Vec::new());
    for (i, item) in items.iter().enumerate() {
        let p = format!("{path}[{i}]");
        let span = pair_of(doc, &p, item, |d, p, x| seconds(d, p, x, dt))
            .filter(|(a, b)| ordered(doc, &p, item, &a.ticks, &b.ticks));
        match (span, out.as_mut()) {
            (Some(s), Some(list)) => list.push(s),
            _ => out = None,
        }
    }
    out
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut doc = Doc {
        src: text,
        issues: Vec::new(),
        lines: BTreeMap::new(),
    };
    let root = match DeTable::parse(text) {
        Ok(t) => t,
        Err(e) => {
            doc.error("document", e.span().as_ref(), e.message().trim_end().to_string());
            return Err(ConfigError { issues: doc.issues });
        }
    };
    let mut top = Fields::new(String::new(), root.span(), root.get_ref(), &mut doc);
    let parsed = read_document(&mut doc, &mut top);
    top.finish(&mut doc);
    // cross-reference checks need every section; they still run when only
    // unknown keys were reported
    if let Some(config) = parsed {
        check_semantics(&mut doc, &config);
        if doc.issues.is_empty() {
            return Ok(config);
        }
    }
    doc.issues.sort_by_key(|i| i.line.unwrap_or(0));
    Err(ConfigError { issues: doc.issues })
}

fn read_document(doc: &mut Doc<'_>, top: &mut Fields<'_, '_>) -> Option<ScenarioConfig> {
    let run = top.require("run", doc).and_then(|v| table(doc, "run".into(), v)).and_then(|f| read_run(doc, f));
    let dt = run.as_ref().map(|r| r.dt);
    let plant = top
        .require("plant", doc)
        .and_then(|v| table(doc, "plant".into(), v))
        .and_then(|f| read_plant(doc, f, dt));
    let behaviors = top
        .require("behaviors", doc)
        .and_then(|v| table(doc, "behaviors".into(), v))
        .and_then(|f| read_behaviors(doc, f));
    let conditions = match top.get("conditions") {
        Some(v) => table(doc, "conditions".into(), v).and_then(|f| read_conditions(doc, f)),
        None => Some(BTreeMap::new()),
    };
    let pairs = match top.get("pairs") {
        Some(v) => read_list(doc, "pairs", v, read_pair),
        None => Some(Vec::new()),
    };
    let delays = match top.get("delays") {
        Some(v) => table(doc, "delays".into(), v).and_then(|f| read_delays(doc, f, dt)),
        None => dt.map(|_| DelayConfig {
            d12: zero_seconds(),
            d23: zero_seconds(),
            latency: [zero_seconds(); 3],
        }),
    };
    let controller = top
        .require("controller", doc)
        .and_then(|v| table(doc, "controller".into(), v))
        .and_then(|f| read_controller(doc, f, dt));
    let events = match top.get("events") {
        Some(v) => read_list(doc, "events", v, |d, f| read_event(d, f, dt)),
        None => Some(Vec::new()),
    };
    Some(ScenarioConfig {
        run: run?,
        plant: plant?,
        behaviors: behaviors?,
        conditions: conditions?,
        pairs: pairs?,
        delays: delays?,
        controller: controller?,
        events: events?,
    })
}

fn zero_seconds() -> Seconds {
    Seconds {
        value: Decimal::from_int(0),
        ticks: 0,
    }
}

fn read_list<T>(
    doc: &mut Doc<'_>,
    path: &str,
    v: &Value<'_>,
    mut read: impl FnMut(&mut Doc<'_>, Fields<'_, '_>) -> Option<T>,
) -> Option<Vec<T>> {
    let items = array(doc, path, v)?;
    let mut out = Some(Vec::new());
    for (i, item) in items.iter().enumerate() {
        let parsed = table(doc, format!("{path}[{i}]"), item).and_then(|f| read(doc, f));
        match (parsed, out.as_mut()) {
            (Some(x), Some(list)) => list.push(x),
            _ => out = None,
        }
    }
    out
}

fn read_run(doc: &mut Doc<'_>, mut f: Fields<'_, '_>) -> Option<RunConfig> {
    let name = f.require("name", doc).and_then(|v| string(doc, &f.path("name"), v));
    let dt = f.require("dt", doc).and_then(|v| {
        let d = decimal(doc, &f.path("dt"), v)?;
        if d.is_zero() || d.is_negative() {
            doc.at(&f.path("dt"), v, "dt must be positive");
            return None;
        }
        Some(d)
    });
    let horizon = f.require("horizon", doc).and_then(|v| seconds(doc, &f.path("horizon"), v, dt));
    let seed = match f.get("seed") {
        Some(v) => match v.get_ref() {
            DeValue::Integer(i) => match u64::from_str_radix(&i.as_str().replace('_', ""), i.radix()) {
                Ok(s) => Some(s),
                Err(_) => {
                    doc.at(&f.path("seed"), v, "seed must be a non-negative 64-bit integer");
                    None
                }
            },
            other => {
                doc.at(&f.path("seed"), v, format!("expected an integer, found {}", kind_name(other)));
                None
            }
        },
        None => Some(0),
    };
    let visibility = match f.get("visibility") {
        Some(v) => array(doc, &f.path("visibility"), v).and_then(|items| {
            let mut out = Some(Vec::new());
            for (i, item) in items.iter().enumerate() {
                let p = format!("{}[{i}]", f.path("visibility"));
                let s = string(doc, &p, item).filter(|s| {
                    let ok = Visibility::ITEMS.contains(&s.as_str());
                    if !ok {
                        doc.at(&p, item, format!("{s:?} is not one of {}", Visibility::ITEMS.join(", ")));
                    }
                    ok
                });
                match (s, out.as_mut()) {
                    (Some(s), Some(list)) => list.push(s),
                    _ => out = None,
                }
            }
            out
        }),
        None => Some(Visibility::ITEMS.iter().map(|s| s.to_string()).collect()),
    };
    f.finish(doc);
    Some(RunConfig {
        name: name?,
        dt: dt?,
        horizon: horizon?,
        seed: seed?,
        visibility: visibility?,
    })
}

fn req_number(doc: &mut Doc<'_>, f: &mut Fields<'_, '_>, key: &str) -> Option<f64> {
    f.require(key, doc).and_then(|v| number(doc, &f.path(key), v, false))
}

fn opt_number(doc: &mut Doc<'_>, f: &mut Fields<'_, '_>, key: &str, default: f64) -> Option<f64> {
    match f.get(key) {
        Some(v) => number(doc, &f.path(key), v, false),
        None => Some(default),
    }
}

fn positive(doc: &mut Doc<'_>, f: &Fields<'_, '_>, key: &str, value: Option<f64>) -> Option<f64> {
    match value {
        Some(x) if x <= 0.0 => {
            doc.error(&f.path(key), None, "must be positive");
            None
        }
        other => other,
    }
}

fn read_plant(doc: &mut Doc<'_>, mut f: Fields<'_, '_>, dt: Option<Decimal>) -> Option<PlantConfig> {
    let kind = f
        .require("kind", doc)
        .and_then(|v| choice(doc, &f.path("kind"), v, &[("merge", "merge"), ("descent", "descent")]));
    let plant = match kind? {
        "merge" => read_merge(doc, &mut f, dt).map(PlantConfig::Merge),
        _ => read_descent(doc, &mut f, dt).map(PlantConfig::Descent),
    };
    f.finish(doc);
    plant
}

fn read_merge(doc: &mut Doc<'_>, f: &mut Fields<'_, '_>, dt: Option<Decimal>) -> Option<MergeConfig> {
    let lane_end = req_number(doc, f, "lane_end");
    let d_end_min = req_number(doc, f, "d_end_min");
    let d_gap_min = req_number(doc, f, "d_gap_min");
    let merge_time = f.require("merge_time", doc).and_then(|v| {
        let s = seconds(doc, &f.path("merge_time"), v, dt)?;
        if s.ticks < 1 {
            doc.at(&f.path("merge_time"), v, "the lane change must last at least one tick");
            return None;
        }
        Some(s)
    });
    let commit_time = match f.get("commit_time") {
        Some(v) => seconds(doc, &f.path("commit_time"), v, dt),
        None => Some(zero_seconds()),
    };
    if let (Some(m), Some(c)) = (merge_time, commit_time) {
        if c.ticks > m.ticks {
            doc.error(&f.path("commit_time"), None, "commit point lies after the end of the lane change");
        }
    }
    let envelope = f.require("envelope", doc).and_then(|v| {
        let p = f.path("envelope");
        let (lo, hi) = pair_of(doc, &p, v, |d, p, x| number(d, p, x, false))?;
        if !(lo <= 0.0 && 0.0 <= hi) {
            doc.at(&p, v, "envelope must contain zero");
            return None;
        }
        Some((lo, hi))
    });
    let position = opt_number(doc, f, "position", 0.0);
    let speed = req_number(doc, f, "speed");
    let vehicles = match f.get("vehicles") {
        Some(v) => read_list(doc, &f.path("vehicles"), v, |d, mut vf| {
            let id = vf.require("id", d).and_then(|x| string(d, &vf.path("id"), x));
            let position = vf.require("position", d).and_then(|x| sampled_f64(d, &vf.path("position"), x));
            let speed = vf.require("speed", d).and_then(|x| sampled_f64(d, &vf.path("speed"), x));
            vf.finish(d);
            Some(VehicleConfig {
                id: id?,
                position: position?,
                speed: speed?,
            })
        }),
        None => Some(Vec::new()),
    };
    if let Some(list) = &vehicles {
        let mut seen = BTreeSet::new();
        for (i, v) in list.iter().enumerate() {
            if !seen.insert(&v.id) {
                doc.error(&format!("{}[{i}].id", f.path("vehicles")), None, format!("duplicate vehicle id {:?}", v.id));
            }
        }
    }
    let speed = speed.filter(|s| {
        let ok = *s >= 0.0;
        if !ok {
            doc.error(&f.path("speed"), None, "speed must not be negative");
        }
        ok
    });
    Some(MergeConfig {
        lane_end: lane_end?,
        d_end_min: d_end_min?,
        d_gap_min: d_gap_min?,
        merge_time: merge_time?,
        commit_time: commit_time?,
        envelope: envelope?,
        position: position?,
        speed: speed?,
        vehicles: vehicles?,
    })
}

fn read_descent(doc: &mut Doc<'_>, f: &mut Fields<'_, '_>, dt: Option<Decimal>) -> Option<DescentConfig> {
    let ground_speed = req_number(doc, f, "ground_speed");
    let ground_speed = positive(doc, f, "ground_speed", ground_speed);
    let pad_tolerance = req_number(doc, f, "pad_tolerance");
    let pad = req_number(doc, f, "pad");
    let backup_pad = match f.get("backup_pad") {
        Some(v) => number(doc, &f.path("backup_pad"), v, false),
        None => pad,
    };
    let position = opt_number(doc, f, "position", 0.0);
    let altitude = req_number(doc, f, "altitude");
    let angle = opt_number(doc, f, "angle", 0.0);
    let mut windows = |key: &str| match f.get(key) {
        Some(v) => spans(doc, &f.path(key), v, dt),
        None => Some(Vec::new()),
    };
    let corridor_busy = windows("corridor_busy");
    let pad_busy = windows("pad_busy");
    Some(DescentConfig {
        ground_speed: ground_speed?,
        pad_tolerance: pad_tolerance?,
        pad: pad?,
        backup_pad: backup_pad?,
        position: position?,
        altitude: altitude?,
        angle: angle?,
        corridor_busy: corridor_busy?,
        pad_busy: pad_busy?,
    })
}

fn bound(doc: &mut Doc<'_>, path: &str, v: &Value<'_>) -> Option<Bound> {
    match v.get_ref() {
        DeValue::String(s) => Some(Bound::Param(s.to_string())),
        _ => number(doc, path, v, false).map(Bound::Value),
    }
}

fn read_template(doc: &mut Doc<'_>, mut f: Fields<'_, '_>) -> Option<Template> {
    let name = f.require("template", doc).and_then(|v| {
        let options: Vec<(&str, &str)> = Template::NAMES.iter().map(|n| (*n, *n)).collect();
        choice(doc, &f.path("template"), v, &options)
    });
    let mut req_bound = |doc: &mut Doc<'_>, key: &str| f.require(key, doc).and_then(|v| bound(doc, &f.path(key), v));
    let t = match name? {
        "interval_bound" => {
            let output = f.require("output", doc).and_then(|v| string(doc, &f.path("output"), v));
            let lo = f.get("lo").map(|v| bound(doc, &f.path("lo"), v));
            let hi = f.get("hi").map(|v| bound(doc, &f.path("hi"), v));
            if lo.is_none() && hi.is_none() {
                let span = f.span.clone();
                doc.error(&f.path("lo"), Some(&span), "interval_bound needs lo, hi or both");
            }
            let lo = match lo {
                Some(b) => Some(Some(b?)),
                None => Some(None),
            };
            let hi = match hi {
                Some(b) => Some(Some(b?)),
                None => Some(None),
            };
            Template::IntervalBound {
                output: output?,
                lo: lo?,
                hi: hi?,
            }
        }
        "gap_to_traffic" => Template::GapToTraffic {
            min: req_bound(doc, "min")?,
        },
        "distance_to_lane_end" => Template::DistanceToLaneEnd {
            min: req_bound(doc, "min")?,
        },
        "corridor_occupancy" => Template::CorridorOccupancy,
        _ => {
            let bound = req_bound(doc, "bound");
            let terms = f.require("terms", doc).and_then(|v| {
                let mut tf = table(doc, f.path("terms"), v)?;
                let mut out = Some(BTreeMap::new());
                for k in tf.keys() {
                    let value = tf.get(k).expect("listed key");
                    let c = number(doc, &tf.path(k), value, false);
                    match (c, out.as_mut()) {
                        (Some(c), Some(m)) => {
                            m.insert(k.to_string(), c);
                        }
                        _ => out = None,
                    }
                }
                if out.as_ref().is_some_and(BTreeMap::is_empty) {
                    doc.at(&f.path("terms"), v, "linear_inequality needs at least one term");
                    out = None;
                }
                tf.finish(doc);
                out
            });
            Template::LinearInequality {
                terms: terms?,
                bound: bound?,
            }
        }
    };
    f.finish(doc);
    Some(t)
}

fn read_behaviors(doc: &mut Doc<'_>, mut f: Fields<'_, '_>) -> Option<Vec<BehaviorConfig>> {
    let mut out = Some(Vec::new());
    for name in f.keys() {
        let v = f.get(name).expect("listed key");
        let parsed = table(doc, f.path(name), v).and_then(|mut bf| {
            let role = bf.require("role", doc).and_then(|r| {
                choice(doc, &bf.path("role"), r, &[("intended", Role::Intended), ("in", Role::In), ("out", Role::Out)])
            });
            let pc = match bf.get("pc") {
                Some(p) => read_list(doc, &bf.path("pc"), p, read_template),
                None => Some(Vec::new()),
            };
            bf.finish(doc);
            Some(BehaviorConfig {
                name: name.to_string(),
                role: role?,
                pc: pc?,
            })
        });
        match (parsed, out.as_mut()) {
            (Some(b), Some(list)) => list.push(b),
            _ => out = None,
        }
    }
    if let Some(list) = &out {
        let mut complete = true;
        for role in [Role::Intended, Role::In, Role::Out] {
            let n = list.iter().filter(|b| b.role == role).count();
            if n != 1 {
                complete = false;
                let span = f.span.clone();
                doc.error(
                    "behaviors",
                    Some(&span),
                    format!("exactly one behavior must have role {:?}, found {n}", role.as_str()),
                );
            }
        }
        if !complete {
            out = None;
        }
    }
    f.finish(doc);
    out
}

fn cond_value(doc: &mut Doc<'_>, path: &str, v: &Value<'_>) -> Option<CondValue> {
    match v.get_ref() {
        DeValue::Boolean(b) => Some(CondValue::Bool(*b)),
        _ => number(doc, path, v, false).map(CondValue::Num),
    }
}

fn read_conditions(doc: &mut Doc<'_>, mut f: Fields<'_, '_>) -> Option<BTreeMap<String, CondValue>> {
    let mut out = Some(BTreeMap::new());
    for k in f.keys() {
        let v = f.get(k).expect("listed key");
        match (cond_value(doc, &f.path(k), v), out.as_mut()) {
            (Some(c), Some(m)) => {
                m.insert(k.to_string(), c);
            }
            _ => out = None,
        }
    }
    f.finish(doc);
    out
}

/// Short names first; the emitter writes those.
const ARROWS: [(&str, Arrow); 10] = [
    ("A1", Arrow::A1Mechanism),
    ("A2", Arrow::A2EnvInputs),
    ("A3", Arrow::A3EnvOutputRequirement),
    ("A4", Arrow::A4Capacity),
    ("A5", Arrow::A5InternalConsistency),
    ("A1_mechanism", Arrow::A1Mechanism),
    ("A2_env_inputs", Arrow::A2EnvInputs),
    ("A3_env_output_requirement", Arrow::A3EnvOutputRequirement),
    ("A4_capacity", Arrow::A4Capacity),
    ("A5_internal_consistency", Arrow::A5InternalConsistency),
];

pub(super) fn arrow_name(a: Arrow) -> &'static str {
    ARROWS.iter().find(|(_, x)| *x == a).map(|(n, _)| *n).expect("every arrow is named")
}

fn assumption(doc: &mut Doc<'_>, path: &str, v: &Value<'_>) -> Option<Assumption> {
    let s = string(doc, path, v)?;
    match s.parse() {
        Ok(a) => Some(a),
        Err(e) => {
            doc.at(path, v, format!("{e}"));
            None
        }
    }
}

fn read_pair(doc: &mut Doc<'_>, mut f: Fields<'_, '_>) -> Option<PairConfig> {
    let id = f.require("id", doc).and_then(|v| string(doc, &f.path("id"), v));
    let target = f.require("target", doc).and_then(|v| string(doc, &f.path("target"), v));
    let constraint = f.require("constraint", doc).and_then(|v| {
        let p = f.path("constraint");
        let (lo, hi) = pair_of(doc, &p, v, |d, p, x| number(d, p, x, true))?;
        ordered(doc, &p, v, &lo, &hi).then_some((lo, hi))
    });
    let system = f.require("system", doc).and_then(|v| assumption(doc, &f.path("system"), v));
    let env = f.require("env", doc).and_then(|v| assumption(doc, &f.path("env"), v));
    let arrow = f.require("arrow", doc).and_then(|v| choice(doc, &f.path("arrow"), v, &ARROWS));
    let justification = match f.get("justification") {
        Some(v) => string(doc, &f.path("justification"), v),
        None => Some(String::new()),
    };
    f.finish(doc);
    Some(PairConfig {
        id: id?,
        target: target?,
        constraint: constraint?,
        system: system?,
        env: env?,
        arrow: arrow?,
        justification: justification?,
    })
}

fn read_delays(doc: &mut Doc<'_>, mut f: Fields<'_, '_>, dt: Option<Decimal>) -> Option<DelayConfig> {
    let mut get = |key: &str| match f.get(key) {
        Some(v) => seconds(doc, &f.path(key), v, dt),
        None => dt.map(|_| zero_seconds()),
    };
    let d12 = get("d12");
    let d23 = get("d23");
    let l1 = get("L1");
    let l2 = get("L2");
    let l3 = get("L3");
    f.finish(doc);
    Some(DelayConfig {
        d12: d12?,
        d23: d23?,
        latency: [l1?, l2?, l3?],
    })
}

const POLICIES: [(&str, Policy); 3] = [
    ("replan", Policy::Replan),
    ("fallback", Policy::Fallback),
    ("halt", Policy::Halt),
];

pub(super) fn policy_name(p: Policy) -> &'static str {
    POLICIES.iter().find(|(_, x)| *x == p).map(|(n, _)| *n).expect("every policy is named")
}

fn read_stage_policy(doc: &mut Doc<'_>, mut f: Fields<'_, '_>) -> Option<StagePolicy> {
    let d = StagePolicy::default();
    let mut get = |key: &str, default: Policy| match f.get(key) {
        Some(v) => choice(doc, &f.path(key), v, &POLICIES),
        None => Some(default),
    };
    let no_decision = get("no_decision", d.no_decision);
    let previously_safe = get("previously_safe", d.previously_safe);
    let unsafe_timing = get("unsafe_timing", d.unsafe_timing);
    f.finish(doc);
    Some(StagePolicy {
        no_decision: no_decision?,
        previously_safe: previously_safe?,
        unsafe_timing: unsafe_timing?,
    })
}

fn read_controller(doc: &mut Doc<'_>, mut f: Fields<'_, '_>, dt: Option<Decimal>) -> Option<ControllerSection> {
    let strategy = match f.get("strategy") {
        Some(v) => choice(doc, &f.path("strategy"), v, &[("stpa", Strategy::Stpa), ("naive", Strategy::Naive)]),
        None => Some(Strategy::Stpa),
    };
    let margin = f.require("margin", doc).and_then(|v| seconds(doc, &f.path("margin"), v, dt));
    let planning = f.require("planning", doc).and_then(|v| {
        let s = seconds(doc, &f.path("planning"), v, dt)?;
        if s.ticks < 1 {
            doc.at(&f.path("planning"), v, "planning horizon must span at least one tick");
            return None;
        }
        Some(s)
    });
    let grid_step = opt_number(doc, &mut f, "grid_step", 0.5);
    let grid_step = positive(doc, &f, "grid_step", grid_step);
    let gain = opt_number(doc, &mut f, "gain", 0.5);
    let eps_pred = opt_number(doc, &mut f, "eps_pred", 0.0);
    let mut flag = |key: &str| match f.get(key) {
        Some(v) => boolean(doc, &f.path(key), v),
        None => Some(true),
    };
    let reference_compensation = flag("reference_compensation");
    let action_compensation = flag("action_compensation");
    let policies = match f.get("policies") {
        Some(v) => table(doc, f.path("policies"), v).and_then(|mut pf| {
            let mut stage = |key: &str| match pf.get(key) {
                Some(s) => table(doc, pf.path(key), s).and_then(|sf| read_stage_policy(doc, sf)),
                None => Some(StagePolicy::default()),
            };
            let d1 = stage("d1");
            let d2 = stage("d2");
            let d3 = stage("d3");
            pf.finish(doc);
            Some(Policies {
                d1: d1?,
                d2: d2?,
                d3: d3?,
            })
        }),
        None => Some(Policies::default()),
    };
    f.finish(doc);
    Some(ControllerSection {
        strategy: strategy?,
        margin: margin?,
        planning: planning?,
        grid_step: grid_step?,
        gain: gain?,
        eps_pred: eps_pred?,
        reference_compensation: reference_compensation?,
        action_compensation: action_compensation?,
        policies: policies?,
    })
}

fn read_event(doc: &mut Doc<'_>, mut f: Fields<'_, '_>, dt: Option<Decimal>) -> Option<EventConfig> {
    let at = f.require("at", doc).and_then(|v| sampled_seconds(doc, &f.path("at"), v, dt));
    let op = f.require("op", doc).and_then(|v| {
        let options: Vec<(&str, &str)> = MutationConfig::OPS.iter().map(|n| (*n, *n)).collect();
        choice(doc, &f.path("op"), v, &options)
    });
    let Some(op) = op else {
        // fields of an unknown op cannot be checked
        f.used.extend(f.keys());
        f.finish(doc);
        return None;
    };
    let mut text = |doc: &mut Doc<'_>, key: &str| f.require(key, doc).and_then(|v| string(doc, &f.path(key), v));
    let mutation = match op {
        "set_condition" => {
            let name = text(doc, "name");
            let value = f.require("value", doc).and_then(|v| cond_value(doc, &f.path("value"), v));
            name.zip(value).map(|(name, value)| MutationConfig::SetCondition { name, value })
        }
        "add_vehicle" => {
            let id = text(doc, "id");
            let position = req_number(doc, &mut f, "position");
            let speed = req_number(doc, &mut f, "speed");
            match (id, position, speed) {
                (Some(id), Some(position), Some(speed)) => Some(MutationConfig::AddVehicle { id, position, speed }),
                _ => None,
            }
        }
        "remove_vehicle" => text(doc, "id").map(|id| MutationConfig::RemoveVehicle { id }),
        "set_vehicle_speed" => {
            let id = text(doc, "id");
            let speed = req_number(doc, &mut f, "speed");
            id.zip(speed).map(|(id, speed)| MutationConfig::SetVehicleSpeed { id, speed })
        }
        "set_constraint" => {
            let pair = text(doc, "pair");
            let lo = f.require("lo", doc).and_then(|v| number(doc, &f.path("lo"), v, true));
            let hi = f.require("hi", doc).and_then(|v| number(doc, &f.path("hi"), v, true));
            match (pair, lo, hi) {
                (Some(pair), Some(lo), Some(hi)) if lo <= hi => Some(MutationConfig::SetConstraint { pair, lo, hi }),
                (_, Some(lo), Some(hi)) if lo > hi => {
                    doc.error(&f.path("lo"), None, "lower end exceeds upper end");
                    None
                }
                _ => None,
            }
        }
        "perturb_state" => {
            let state = text(doc, "state");
            let delta = req_number(doc, &mut f, "delta");
            state.zip(delta).map(|(state, delta)| MutationConfig::PerturbState { state, delta })
        }
        _ => {
            let from = f.require("from", doc).and_then(|v| seconds(doc, &f.path("from"), v, dt));
            let to = f.require("to", doc).and_then(|v| seconds(doc, &f.path("to"), v, dt));
            match (from, to) {
                (Some(from), Some(to)) if from.ticks <= to.ticks => Some(if op == "block_corridor" {
                    MutationConfig::BlockCorridor { from, to }
                } else {
                    MutationConfig::BlockPad { from, to }
                }),
                (Some(_), Some(_)) => {
                    doc.error(&f.path("to"), None, "window ends before it starts");
                    None
                }
                _ => None,
            }
        }
    };
    f.finish(doc);
    Some(EventConfig {
        at: at?,
        mutation: mutation?,
    })
}

/// Cross-field checks that need the whole config.
fn check_semantics(doc: &mut Doc<'_>, c: &ScenarioConfig) {
    let params = c.plant.params();
    let outputs = c.plant.outputs();
    let before = doc.issues.len();
    for b in &c.behaviors {
        for (i, t) in b.pc.iter().enumerate() {
            let path = format!("behaviors.{}.pc[{i}]", b.name);
            for o in t.outputs() {
                if !outputs.contains(&o) {
                    doc.error(
                        &path,
                        None,
                        format!("{} reads output {o:?}, which a {} plant does not produce", t.name(), c.plant.kind()),
                    );
                }
            }
            for bound in t.bounds() {
                if let Bound::Param(p) = bound {
                    if !params.contains_key(p.as_str()) {
                        doc.error(&path, None, format!("unknown plant parameter {p:?}"));
                    }
                }
            }
        }
    }

    if doc.issues.len() > before {
        // templates cannot be compiled with dangling names
        return;
    }
    let construct = match c.build_plant() {
        Ok(plant) => plant.construct().clone(),
        Err(e) => {
            doc.error("behaviors", None, e.to_string());
            return;
        }
    };
    check_pairs(doc, c, &construct);
    check_events(doc, c);
    if doc.issues.is_empty() {
        if let Err(e) = c.instantiate(c.run.seed) {
            doc.error("document", None, e.to_string());
        }
    }
}

fn check_pairs(doc: &mut Doc<'_>, c: &ScenarioConfig, construct: &Construct) {
    let mut model = ProcessModel::new(construct.clone());
    let conditions: ConditionSnapshot = c.conditions.clone();
    for (i, p) in c.pairs.iter().enumerate() {
        let path = format!("pairs[{i}]");
        let target = match construct.resolve(&p.target) {
            Ok(t) => t,
            Err(_) => {
                doc.error(&format!("{path}.target"), None, format!("unknown element {:?}", p.target));
                continue;
            }
        };
        for (side, a) in [("system", &p.system), ("env", &p.env)] {
            if let Err(e) = a.eval(&conditions) {
                doc.error(&format!("{path}.{side}"), None, format!("{e}; declare it under [conditions]"));
            }
        }
        let pair = ConstraintAssumptionPair {
            id: p.id.clone(),
            target,
            constraint: ValueSet::interval(p.constraint.0, p.constraint.1),
            assumption_system: p.system.clone(),
            assumption_env: p.env.clone(),
            arrow: p.arrow,
            justification: p.justification.clone(),
        };
        if let Err(e) = model.add_pair(pair) {
            doc.error(&path, None, e.to_string());
        }
    }
}

fn check_events(doc: &mut Doc<'_>, c: &ScenarioConfig) {
    let merge = matches!(c.plant, PlantConfig::Merge(_));
    let mut vehicles: BTreeSet<String> = match &c.plant {
        PlantConfig::Merge(m) => m.vehicles.iter().map(|v| v.id.clone()).collect(),
        PlantConfig::Descent(_) => BTreeSet::new(),
    };
    let pairs: BTreeSet<&str> = c.pairs.iter().map(|p| p.id.as_str()).collect();
    for (i, e) in c.events.iter().enumerate() {
        let path = format!("events[{i}]");
        let m = &e.mutation;
        let wrong_plant = match m {
            MutationConfig::AddVehicle { .. }
            | MutationConfig::RemoveVehicle { .. }
            | MutationConfig::SetVehicleSpeed { .. } => !merge,
            MutationConfig::BlockCorridor { .. } | MutationConfig::BlockPad { .. } => merge,
            _ => false,
        };
        if wrong_plant {
            doc.error(&format!("{path}.op"), None, format!("{} does not apply to a {} plant", m.op(), c.plant.kind()));
            continue;
        }
        match m {
            MutationConfig::SetCondition { name, value } => match c.conditions.get(name) {
                None => doc.error(&format!("{path}.name"), None, format!("condition {name:?} is not declared under [conditions]")),
                Some(old) if std::mem::discriminant(old) != std::mem::discriminant(value) => {
                    doc.error(&format!("{path}.value"), None, format!("condition {name:?} changes type"))
                }
                Some(_) => {}
            },
            MutationConfig::AddVehicle { id, .. } => {
                vehicles.insert(id.clone());
            }
            MutationConfig::RemoveVehicle { id } | MutationConfig::SetVehicleSpeed { id, .. } => {
                if !vehicles.contains(id) {
                    doc.error(&format!("{path}.id"), None, format!("unknown vehicle {id:?}"));
                }
            }
            MutationConfig::SetConstraint { pair, .. } => {
                if !pairs.contains(pair.as_str()) {
                    doc.error(&format!("{path}.pair"), None, format!("unknown pair {pair:?}"));
                }
            }
            MutationConfig::PerturbState { state, .. } => {
                if !c.plant.states().contains(&state.as_str()) {
                    doc.error(&format!("{path}.state"), None, format!("unknown state {state:?}"));
                }
            }
            MutationConfig::BlockCorridor { .. } | MutationConfig::BlockPad { .. } => {}
        }
    }
}
