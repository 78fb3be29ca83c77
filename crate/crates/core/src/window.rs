//! Event-time windows and coalesced interval sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open interval `[start_ts, end_ts)` on the event-time axis, in
/// milliseconds since the Unix epoch. The unit of materialization and of
/// data-state tracking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureWindow {
    pub start_ts: i64,
    pub end_ts: i64,
}

impl FeatureWindow {
    pub fn new(start_ts: i64, end_ts: i64) -> Result<FeatureWindow> {
        if start_ts < 0 || start_ts >= end_ts {
            return Err(Error::InvalidSpec(format!(
                "feature window requires 0 <= start < end, got [{start_ts}, {end_ts})"
            )));
        }
        Ok(FeatureWindow { start_ts, end_ts })
    }

    pub fn contains(&self, ts: i64) -> bool {
        ts >= self.start_ts && ts < self.end_ts
    }

    pub fn overlaps(&self, other: &FeatureWindow) -> bool {
        self.start_ts < other.end_ts && other.start_ts < self.end_ts
    }

    pub fn width(&self) -> i64 {
        self.end_ts - self.start_ts
    }
}

impl std::fmt::Display for FeatureWindow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {})", self.start_ts, self.end_ts)
    }
}

/// Disjoint, coalesced set of half-open intervals. Adjacent intervals are
/// merged on insert so the set is a canonical representation of coverage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalSet {
    intervals: Vec<FeatureWindow>,
}

impl IntervalSet {
    pub fn new() -> IntervalSet {
        IntervalSet::default()
    }

    pub fn intervals(&self) -> &[FeatureWindow] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn add(&mut self, w: FeatureWindow) {
        let mut merged = w;
        let mut out = Vec::with_capacity(self.intervals.len() + 1);
        let mut placed = false;
        for iv in &self.intervals {
            if iv.end_ts < merged.start_ts {
                out.push(*iv);
            } else if iv.start_ts > merged.end_ts {
                if !placed {
                    out.push(merged);
                    placed = true;
                }
                out.push(*iv);
            } else {
                // touching or overlapping: absorb
                merged.start_ts = merged.start_ts.min(iv.start_ts);
                merged.end_ts = merged.end_ts.max(iv.end_ts);
            }
        }
        if !placed {
            out.push(merged);
        }
        self.intervals = out;
    }

    /// True when `w` is fully covered by a single coalesced interval.
    pub fn covers(&self, w: &FeatureWindow) -> bool {
        self.intervals
            .iter()
            .any(|iv| iv.start_ts <= w.start_ts && iv.end_ts >= w.end_ts)
    }

    /// True when any coverage begins strictly before `bound`, i.e. the
    /// half-line `(-inf, bound)` intersects materialized data.
    pub fn any_before(&self, bound: i64) -> bool {
        self.intervals.iter().any(|iv| iv.start_ts < bound)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(a: i64, b: i64) -> FeatureWindow {
        FeatureWindow::new(a, b).unwrap()
    }

    #[test]
    fn rejects_degenerate_windows() {
        assert!(FeatureWindow::new(5, 5).is_err());
        assert!(FeatureWindow::new(6, 5).is_err());
        assert!(FeatureWindow::new(-1, 5).is_err());
        assert!(FeatureWindow::new(0, 1).is_ok());
    }

    #[test]
    fn add_coalesces_adjacent_and_overlapping() {
        let mut s = IntervalSet::new();
        s.add(w(0, 10));
        s.add(w(20, 30));
        s.add(w(10, 20));
        assert_eq!(s.intervals(), &[w(0, 30)]);

        let mut s = IntervalSet::new();
        s.add(w(5, 15));
        s.add(w(0, 7));
        assert_eq!(s.intervals(), &[w(0, 15)]);
    }

    #[test]
    fn covers_requires_single_gapless_span() {
        let mut s = IntervalSet::new();
        s.add(w(0, 10));
        s.add(w(15, 20));
        assert!(s.covers(&w(2, 9)));
        assert!(!s.covers(&w(5, 18)));
        assert!(s.any_before(1));
        assert!(!s.any_before(0));
    }
}
