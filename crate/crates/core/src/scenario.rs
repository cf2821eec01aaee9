//! Failure-free unsafe scenarios, per decision stage.
//!
//! Only valid (stage, kind) combinations can be built: the first decision
//! has no time-coupling kind, and wrong-math is not modeled at all.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::plant::{Breach, PatchControl};
use crate::window::{Tick, WindowSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum D1Kind {
    NoDecision,
    PreviouslySafe,
    UnsafeTiming,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StageKind {
    NoDecision,
    PreviouslySafe,
    UnsafeTiming,
    TimeCoupling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    D1,
    D2,
    D3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "stage", content = "kind")]
pub enum Scenario {
    D1(D1Kind),
    D2(StageKind),
    D3(StageKind),
}

impl Scenario {
    pub const ALL: [Scenario; 11] = [
        Scenario::D1(D1Kind::NoDecision),
        Scenario::D1(D1Kind::PreviouslySafe),
        Scenario::D1(D1Kind::UnsafeTiming),
        Scenario::D2(StageKind::NoDecision),
        Scenario::D2(StageKind::PreviouslySafe),
        Scenario::D2(StageKind::UnsafeTiming),
        Scenario::D2(StageKind::TimeCoupling),
        Scenario::D3(StageKind::NoDecision),
        Scenario::D3(StageKind::PreviouslySafe),
        Scenario::D3(StageKind::UnsafeTiming),
        Scenario::D3(StageKind::TimeCoupling),
    ];

    pub fn stage(self) -> Stage {
        match self {
            Scenario::D1(_) => Stage::D1,
            Scenario::D2(_) => Stage::D2,
            Scenario::D3(_) => Stage::D3,
        }
    }

    pub fn kind(self) -> StageKind {
        match self {
            Scenario::D1(D1Kind::NoDecision) => StageKind::NoDecision,
            Scenario::D1(D1Kind::PreviouslySafe) => StageKind::PreviouslySafe,
            Scenario::D1(D1Kind::UnsafeTiming) => StageKind::UnsafeTiming,
            Scenario::D2(k) | Scenario::D3(k) => k,
        }
    }

    /// `None` for the combinations the taxonomy excludes.
    pub fn new(stage: Stage, kind: StageKind) -> Option<Self> {
        Some(match (stage, kind) {
            (Stage::D1, StageKind::NoDecision) => Scenario::D1(D1Kind::NoDecision),
            (Stage::D1, StageKind::PreviouslySafe) => Scenario::D1(D1Kind::PreviouslySafe),
            (Stage::D1, StageKind::UnsafeTiming) => Scenario::D1(D1Kind::UnsafeTiming),
            (Stage::D1, StageKind::TimeCoupling) => return None,
            (Stage::D2, k) => Scenario::D2(k),
            (Stage::D3, k) => Scenario::D3(k),
        })
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.stage(), self.kind())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown scenario {0:?}")]
pub struct ScenarioParseError(pub String);

impl FromStr for Scenario {
    type Err = ScenarioParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ScenarioParseError(s.to_string());
        let (stage, kind) = s.trim().split_once(char::is_whitespace).ok_or_else(err)?;
        let stage = match stage {
            "D1" => Stage::D1,
            "D2" => Stage::D2,
            "D3" => Stage::D3,
            _ => return Err(err()),
        };
        let kind = match kind.trim() {
            "NoDecision" => StageKind::NoDecision,
            "PreviouslySafe" => StageKind::PreviouslySafe,
            "UnsafeTiming" => StageKind::UnsafeTiming,
            "TimeCoupling" => StageKind::TimeCoupling,
            _ => return Err(err()),
        };
        Scenario::new(stage, kind).ok_or_else(err)
    }
}

/// Structured reason attached to an event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cause", rename_all = "kebab-case")]
pub enum Cause {
    /// Must-start window lies inside the must-not-start window, or no tick
    /// is ever safe.
    Conflict { mst: WindowSet, nst: WindowSet },
    /// The planned start left the allowed start set.
    StartLeftWindow { start: Tick, st: WindowSet },
    /// Earliest allowed start comes before the earliest tick a new
    /// decision can take effect.
    Deadline { earliest: Tick, effect: Tick, lead: i64 },
    /// No candidate reference satisfied both constraint families.
    NoReference { searched: WindowSet },
    /// A reference exists from the current state but not after the delay.
    TooLate { effect: Tick, lead: i64 },
    /// The active reference or the current state breaks a constraint.
    ReferenceBreach { breach: Breach },
    /// The reference was built from an initial state that was not
    /// compensated for the delay.
    StaleState { lead: i64, deviation: f64, tolerance: f64 },
    /// Committed controls lead to a breach inside the update window.
    CommittedBreach { breach: Breach, frozen_until: Tick, patch: Option<PatchControl> },
    /// The action targets the state at issue time rather than at effect.
    ActionTiming { d23: i64, deviation: f64, tolerance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEvent {
    pub tick: Tick,
    pub scenario: Scenario,
    pub cause: Cause,
}

impl ScenarioEvent {
    /// The identity used for agreement checks.
    pub fn key(&self) -> (Tick, Scenario) {
        (self.tick, self.scenario)
    }
}

impl fmt::Display for ScenarioEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.tick, self.scenario, cause_text(&self.cause))
    }
}

fn cause_text(c: &Cause) -> String {
    match c {
        Cause::Conflict { mst, nst } => format!("mst {mst} inside nst {nst}"),
        Cause::StartLeftWindow { start, st } => format!("planned start {start} not in ST {st}"),
        Cause::Deadline { earliest, effect, lead } => {
            format!("earliest start {earliest} < effect tick {effect} (lead {lead})")
        }
        Cause::NoReference { searched } => format!("no reference over starts {searched}"),
        Cause::TooLate { effect, lead } => format!("reference only reachable before tick {effect} (lead {lead})"),
        Cause::ReferenceBreach { breach } => format!("reference breach: {breach}"),
        Cause::StaleState {
            lead,
            deviation,
            tolerance,
        } => format!("stale initial state: deviation {deviation} > {tolerance} over lead {lead}"),
        Cause::CommittedBreach {
            breach,
            frozen_until,
            patch,
        } => match patch {
            Some(p) => format!("committed breach: {breach}; patched from {frozen_until} with {}", p.value),
            None => format!("committed breach: {breach}; frozen until {frozen_until}"),
        },
        Cause::ActionTiming {
            d23,
            deviation,
            tolerance,
        } => format!("action targets issue time: deviation {deviation} > {tolerance} over d23 {d23}"),
    }
}
