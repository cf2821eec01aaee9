use std::fmt;

use serde::{Deserialize, Serialize};

/// Admissible values of one scalar element: a finite union of closed
/// intervals, or the universal set. Unbounded ends use infinities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSet {
    pieces: Vec<(f64, f64)>,
}

impl ValueSet {
    pub fn universal() -> Self {
        Self {
            pieces: vec![(f64::NEG_INFINITY, f64::INFINITY)],
        }
    }

    pub fn empty() -> Self {
        Self { pieces: Vec::new() }
    }

    /// Closed interval `[lo, hi]`; empty when `lo > hi` or a bound is NaN.
    pub fn interval(lo: f64, hi: f64) -> Self {
        Self::from_pieces(vec![(lo, hi)])
    }

    pub fn from_pieces(mut raw: Vec<(f64, f64)>) -> Self {
        raw.retain(|(lo, hi)| lo <= hi);
        raw.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut pieces: Vec<(f64, f64)> = Vec::with_capacity(raw.len());
        for (lo, hi) in raw {
            match pieces.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => pieces.push((lo, hi)),
            }
        }
        Self { pieces }
    }

    pub fn pieces(&self) -> &[(f64, f64)] {
        &self.pieces
    }

    pub fn is_universal(&self) -> bool {
        self.pieces == [(f64::NEG_INFINITY, f64::INFINITY)]
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn contains(&self, v: f64) -> bool {
        self.pieces.iter().any(|&(lo, hi)| lo <= v && v <= hi)
    }

    pub fn lower(&self) -> Option<f64> {
        self.pieces.first().map(|p| p.0)
    }

    pub fn upper(&self) -> Option<f64> {
        self.pieces.last().map(|p| p.1)
    }

    pub fn intersect(&self, other: &Self) -> Self {
        let mut out = Vec::new();
        for &(a_lo, a_hi) in &self.pieces {
            for &(b_lo, b_hi) in &other.pieces {
                let lo = a_lo.max(b_lo);
                let hi = a_hi.min(b_hi);
                if lo <= hi {
                    out.push((lo, hi));
                }
            }
        }
        Self::from_pieces(out)
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.pieces
            .iter()
            .all(|&(lo, hi)| other.pieces.iter().any(|&(o_lo, o_hi)| o_lo <= lo && hi <= o_hi))
    }

    /// Nearest member of the set (saturation); `None` for the empty set.
    pub fn clamp(&self, v: f64) -> Option<f64> {
        if self.contains(v) {
            return Some(v);
        }
        self.pieces
            .iter()
            .flat_map(|&(lo, hi)| [lo, hi])
            .filter(|b| b.is_finite())
            .min_by(|a, b| (a - v).abs().total_cmp(&(b - v).abs()))
    }
}

impl fmt::Display for ValueSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_universal() {
            return f.write_str("ℝ");
        }
        if self.pieces.is_empty() {
            return f.write_str("∅");
        }
        for (i, (lo, hi)) in self.pieces.iter().enumerate() {
            if i > 0 {
                f.write_str("∪")?;
            }
            write!(f, "[{lo},{hi}]")?;
        }
        Ok(())
    }
}
