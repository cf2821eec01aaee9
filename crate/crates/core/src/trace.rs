//! Line-delimited JSON traces: a header line, one record per tick, and a
//! footer with the episode summary.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControllerState, DecisionState, Strategy};
use crate::plant::WorldSnapshot;
use crate::sim::{EpisodeSpec, EpisodeSummary, Saturation};
use crate::window::Tick;

pub const FORMAT: &str = "stpa-plus-trace";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub seed: u64,
    pub plant: String,
    pub dt: f64,
    /// Planned run length; episodes may stop earlier.
    pub ticks: Tick,
    pub lead: i64,
    pub strategy: Strategy,
    pub config_digest: String,
}

impl TraceHeader {
    pub fn new(spec: &EpisodeSpec) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            name: spec.name.clone(),
            seed: spec.seed,
            plant: spec.plant.name().to_string(),
            dt: spec.plant.construct().dt,
            ticks: spec.ticks,
            lead: spec.controller.delays.lead(),
            strategy: spec.controller.strategy,
            config_digest: spec.config_digest.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tick: Tick,
    /// True world at the start of the tick, after scripted events.
    pub world: WorldSnapshot,
    /// What the controller was shown.
    pub observed: WorldSnapshot,
    /// Controller bookkeeping before it decided.
    pub controller: ControllerState,
    pub decision: DecisionState,
    /// Command that reached the plant this tick.
    pub applied: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub saturations: Vec<Saturation>,
    /// Whether the assumptions of each pair held.
    pub assumptions: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub summary: EpisodeSummary,
    pub final_world: WorldSnapshot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
    pub footer: Option<TraceFooter>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Line {
    Header(TraceHeader),
    Record(Box<TraceRecord>),
    Footer(Box<TraceFooter>),
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("trace is empty")]
    Empty,
    #[error("line {line}: expected tick {expected}, found {found}")]
    Gap { line: usize, expected: Tick, found: Tick },
    #[error("trace ends early: tick {missing} is missing")]
    Truncated { missing: Tick },
}

fn encode<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("trace values serialize")
}

pub fn write_trace(trace: &Trace, mut sink: impl Write) -> Result<(), TraceError> {
    writeln!(sink, "{}", encode(&Line::Header(trace.header.clone())))?;
    for (k, r) in trace.records.iter().enumerate() {
        debug_assert_eq!(r.tick, k as Tick, "records must be tick-contiguous");
        writeln!(sink, "{}", encode(&Line::Record(Box::new(r.clone()))))?;
    }
    if let Some(f) = &trace.footer {
        writeln!(sink, "{}", encode(&Line::Footer(Box::new(f.clone()))))?;
    }
    sink.flush()?;
    Ok(())
}

pub fn trace_to_string(trace: &Trace) -> String {
    let mut buf = Vec::new();
    write_trace(trace, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

pub fn read_trace(source: impl BufRead) -> Result<Trace, TraceError> {
    let mut header = None;
    let mut records: Vec<TraceRecord> = Vec::new();
    let mut footer = None;
    for (i, line) in source.lines().enumerate() {
        let n = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |reason: String| TraceError::Corrupt { line: n, reason };
        if footer.is_some() {
            return Err(corrupt("content after the footer".into()));
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
        match parsed {
            Line::Header(h) if header.is_none() => {
                if h.format != FORMAT || h.version != VERSION {
                    return Err(corrupt(format!("unsupported format {} v{}", h.format, h.version)));
                }
                header = Some(h);
            }
            Line::Header(_) => return Err(corrupt("second header".into())),
            _ if header.is_none() => return Err(corrupt("first line must be the header".into())),
            Line::Record(r) => {
                let expected = records.len() as Tick;
                if r.tick != expected {
                    return Err(TraceError::Gap {
                        line: n,
                        expected,
                        found: r.tick,
                    });
                }
                records.push(*r);
            }
            Line::Footer(f) => {
                if f.summary.ticks != records.len() as Tick {
                    return Err(TraceError::Truncated {
                        missing: records.len() as Tick,
                    });
                }
                footer = Some(*f);
            }
        }
    }
    let header = header.ok_or(TraceError::Empty)?;
    if footer.is_none() && (records.len() as Tick) < header.ticks {
        return Err(TraceError::Truncated {
            missing: records.len() as Tick,
        });
    }
    Ok(Trace {
        header,
        records,
        footer,
    })
}

/// 64-bit FNV-1a, used to tie a trace to the config text it came from.
pub fn digest(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}
