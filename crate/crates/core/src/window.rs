//! Exact set algebra over time windows.
//!
//! Every time point is an integer tick on the simulation lattice. A window is
//! a finite union of half-open intervals `[lo, hi)`, kept in canonical form:
//! sorted, pairwise disjoint and never touching. Canonical form makes
//! structural equality coincide with set equality.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// A point on the tick lattice (one tick is `dt` seconds).
pub type Tick = i64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WindowError {
    #[error("empty interval [{lo},{hi})")]
    EmptyInterval { lo: Tick, hi: Tick },
    #[error("window {set} is not contained in domain {domain}")]
    NotInDomain { set: String, domain: String },
    #[error("malformed window text {text:?}: {reason}")]
    Parse { text: String, reason: String },
}

/// Non-empty half-open interval `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Interval {
    lo: Tick,
    hi: Tick,
}

impl Interval {
    pub fn new(lo: Tick, hi: Tick) -> Result<Self, WindowError> {
        if lo < hi {
            Ok(Self { lo, hi })
        } else {
            Err(WindowError::EmptyInterval { lo, hi })
        }
    }

    pub fn lo(&self) -> Tick {
        self.lo
    }

    pub fn hi(&self) -> Tick {
        self.hi
    }

    pub fn len(&self) -> i64 {
        self.hi - self.lo
    }

    pub fn contains(&self, t: Tick) -> bool {
        self.lo <= t && t < self.hi
    }

    pub fn ticks(&self) -> std::ops::Range<Tick> {
        self.lo..self.hi
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.lo, self.hi)
    }
}

/// Canonical finite union of half-open intervals.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct WindowSet {
    pieces: Vec<Interval>,
}

impl WindowSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_interval(iv: Interval) -> Self {
        Self { pieces: vec![iv] }
    }

    /// Convenience constructor; returns the empty set when `lo >= hi`.
    pub fn span(lo: Tick, hi: Tick) -> Self {
        match Interval::new(lo, hi) {
            Ok(iv) => Self::from_interval(iv),
            Err(_) => Self::empty(),
        }
    }

    /// Builds the canonical form of an arbitrary bag of intervals.
    pub fn from_intervals<I: IntoIterator<Item = Interval>>(items: I) -> Self {
        let mut raw: Vec<Interval> = items.into_iter().collect();
        raw.sort();
        let mut pieces: Vec<Interval> = Vec::with_capacity(raw.len());
        for iv in raw {
            match pieces.last_mut() {
                // Touching pieces merge as well: [0,2) and [2,4) is [0,4).
                Some(last) if iv.lo <= last.hi => last.hi = last.hi.max(iv.hi),
                _ => pieces.push(iv),
            }
        }
        Self { pieces }
    }

    /// Canonical form of `(lo, hi)` pairs, silently skipping empty pairs.
    pub fn from_pairs(pairs: &[(Tick, Tick)]) -> Self {
        Self::from_intervals(pairs.iter().filter_map(|&(lo, hi)| Interval::new(lo, hi).ok()))
    }

    /// The set of ticks in `domain` where `pred` holds.
    pub fn from_predicate(domain: Interval, mut pred: impl FnMut(Tick) -> bool) -> Self {
        let mut pieces = Vec::new();
        let mut open: Option<Tick> = None;
        for t in domain.ticks() {
            match (pred(t), open) {
                (true, None) => open = Some(t),
                (false, Some(lo)) => {
                    pieces.push(Interval { lo, hi: t });
                    open = None;
                }
                _ => {}
            }
        }
        if let Some(lo) = open {
            pieces.push(Interval { lo, hi: domain.hi });
        }
        Self { pieces }
    }

    pub fn pieces(&self) -> &[Interval] {
        &self.pieces
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Number of ticks in the set.
    pub fn measure(&self) -> i64 {
        self.pieces.iter().map(Interval::len).sum()
    }

    pub fn min(&self) -> Option<Tick> {
        self.pieces.first().map(|iv| iv.lo)
    }

    /// Last member tick (not the exclusive supremum).
    pub fn max(&self) -> Option<Tick> {
        self.pieces.last().map(|iv| iv.hi - 1)
    }

    /// Exclusive supremum: one past the last member tick.
    pub fn sup(&self) -> Option<Tick> {
        self.pieces.last().map(|iv| iv.hi)
    }

    pub fn contains(&self, t: Tick) -> bool {
        // pieces are sorted, so a binary search finds the only candidate
        let idx = self.pieces.partition_point(|iv| iv.hi <= t);
        self.pieces.get(idx).is_some_and(|iv| iv.contains(t))
    }

    pub fn union(&self, other: &Self) -> Self {
        Self::from_intervals(self.pieces.iter().chain(other.pieces.iter()).copied())
    }

    pub fn intersect(&self, other: &Self) -> Self {
        let (a, b) = (&self.pieces, &other.pieces);
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < a.len() && j < b.len() {
            let lo = a[i].lo.max(b[j].lo);
            let hi = a[i].hi.min(b[j].hi);
            if lo < hi {
                out.push(Interval { lo, hi });
            }
            if a[i].hi < b[j].hi {
                i += 1;
            } else {
                j += 1;
            }
        }
        // Intersections of canonical sets can touch at most where both inputs
        // touch, which canonical inputs rule out; normalize anyway.
        Self::from_intervals(out)
    }

    /// Set difference `self \ other`.
    pub fn difference(&self, other: &Self) -> Self {
        let Some(hull) = self.hull() else {
            return Self::empty();
        };
        self.intersect(&other.complement_unchecked(hull))
    }

    /// `domain \ self`; rejects sets that stick out of the domain.
    pub fn complement(&self, domain: Interval) -> Result<Self, WindowError> {
        if !self.is_subset(&Self::from_interval(domain)) {
            return Err(WindowError::NotInDomain {
                set: self.to_string(),
                domain: domain.to_string(),
            });
        }
        Ok(self.complement_unchecked(domain))
    }

    /// `domain \ self` without the containment check; members of `self`
    /// outside `domain` are ignored.
    pub fn complement_unchecked(&self, domain: Interval) -> Self {
        let mut out = Vec::new();
        let mut cursor = domain.lo;
        for iv in &self.pieces {
            if iv.hi <= cursor {
                continue;
            }
            if iv.lo >= domain.hi {
                break;
            }
            if iv.lo > cursor {
                out.push(Interval { lo: cursor, hi: iv.lo });
            }
            cursor = cursor.max(iv.hi);
        }
        if cursor < domain.hi {
            out.push(Interval { lo: cursor, hi: domain.hi });
        }
        Self { pieces: out }
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.pieces.iter().all(|iv| {
            let idx = other.pieces.partition_point(|o| o.hi <= iv.lo);
            other
                .pieces
                .get(idx)
                .is_some_and(|o| o.lo <= iv.lo && iv.hi <= o.hi)
        })
    }

    pub fn clip(&self, domain: Interval) -> Self {
        self.intersect(&Self::from_interval(domain))
    }

    /// Members at or after `t`.
    pub fn from_tick(&self, t: Tick) -> Self {
        match self.sup() {
            Some(sup) if sup > t => self.clip(Interval { lo: t, hi: sup }),
            _ => Self::empty(),
        }
    }

    /// Smallest interval covering the set.
    pub fn hull(&self) -> Option<Interval> {
        Some(Interval {
            lo: self.min()?,
            hi: self.sup()?,
        })
    }

    /// Translates every piece by `delta` ticks.
    pub fn shift(&self, delta: i64) -> Self {
        Self {
            pieces: self
                .pieces
                .iter()
                .map(|iv| Interval {
                    lo: iv.lo + delta,
                    hi: iv.hi + delta,
                })
                .collect(),
        }
    }

    pub fn ticks(&self) -> impl Iterator<Item = Tick> + '_ {
        self.pieces.iter().flat_map(Interval::ticks)
    }
}

/// Can-window: `horizon ∩ ¬(must ∪ must_not)`.
pub fn can_window(must: &WindowSet, must_not: &WindowSet, horizon: &WindowSet) -> WindowSet {
    let blocked = must.union(must_not);
    match horizon.hull() {
        Some(hull) => horizon.intersect(&blocked.complement_unchecked(hull)),
        None => WindowSet::empty(),
    }
}

impl fmt::Display for WindowSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.pieces.is_empty() {
            return f.write_str("∅");
        }
        for (i, iv) in self.pieces.iter().enumerate() {
            if i > 0 {
                f.write_str("∪")?;
            }
            write!(f, "{iv}")?;
        }
        Ok(())
    }
}

impl FromStr for WindowSet {
    type Err = WindowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let text = s.trim();
        let bad = |reason: &str| WindowError::Parse {
            text: s.to_string(),
            reason: reason.to_string(),
        };
        if text == "∅" {
            return Ok(Self::empty());
        }
        let mut pieces = Vec::new();
        for part in text.split('∪') {
            let body = part
                .trim()
                .strip_prefix('[')
                .and_then(|p| p.strip_suffix(')'))
                .ok_or_else(|| bad("expected [lo,hi)"))?;
            let (lo, hi) = body.split_once(',').ok_or_else(|| bad("missing comma"))?;
            let lo: Tick = lo.trim().parse().map_err(|_| bad("bad lower bound"))?;
            let hi: Tick = hi.trim().parse().map_err(|_| bad("bad upper bound"))?;
            pieces.push(Interval::new(lo, hi).map_err(|_| bad("empty interval"))?);
        }
        let set = Self::from_intervals(pieces.iter().copied());
        if set.pieces != pieces {
            return Err(bad("pieces are not in canonical order"));
        }
        Ok(set)
    }
}

impl Serialize for WindowSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for WindowSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}
