//! Prediction sets as unions of disjoint closed intervals.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::binning::BinPartition;
use crate::data::{Band, GroupId, LabelDomain};
use crate::error::{Error, Result};
use crate::fair::ThresholdTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }
}

/// Sorted, disjoint closed components, or a single fallback point when every
/// piece came out empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSet {
    components: Vec<Interval>,
    fallback: Option<f64>,
}

impl IntervalSet {
    /// Merges arbitrary closed pieces; empty input yields the fallback point.
    pub fn from_pieces(mut pieces: Vec<Interval>, fallback: f64) -> Self {
        pieces.retain(|p| p.lo <= p.hi);
        pieces.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        let mut components: Vec<Interval> = Vec::with_capacity(pieces.len());
        for p in pieces {
            match components.last_mut() {
                Some(last) if p.lo <= last.hi => last.hi = last.hi.max(p.hi),
                _ => components.push(p),
            }
        }
        if components.is_empty() {
            Self {
                components,
                fallback: Some(fallback),
            }
        } else {
            Self {
                components,
                fallback: None,
            }
        }
    }

    /// `[lo - r, hi + r]` clipped to the domain.
    pub fn shifted_band(band: &Band, r: f64, domain: LabelDomain) -> Self {
        let piece = Interval {
            lo: (band.lo - r).max(domain.min),
            hi: (band.hi + r).min(domain.max),
        };
        Self::from_pieces(vec![piece], domain.clamp(band.mid))
    }

    /// `[mid - r, mid + r]` clipped to the domain.
    pub fn symmetric(mid: f64, r: f64, domain: LabelDomain) -> Self {
        let piece = Interval {
            lo: (mid - r).max(domain.min),
            hi: (mid + r).min(domain.max),
        };
        Self::from_pieces(vec![piece], domain.clamp(mid))
    }

    pub fn components(&self) -> &[Interval] {
        &self.components
    }

    pub fn fallback(&self) -> Option<f64> {
        self.fallback
    }

    pub fn is_fallback(&self) -> bool {
        self.fallback.is_some()
    }

    pub fn contains(&self, y: f64) -> bool {
        match self.fallback {
            Some(p) => p == y,
            None => self.components.iter().any(|c| c.contains(y)),
        }
    }

    /// Sum of component lengths.
    pub fn total_width(&self) -> f64 {
        self.components.iter().map(Interval::width).sum()
    }

    /// Length of the convex hull.
    pub fn hull_width(&self) -> f64 {
        match (self.components.first(), self.components.last()) {
            (Some(a), Some(b)) => b.hi - a.lo,
            _ => 0.0,
        }
    }
}

impl fmt::Display for IntervalSet {
    /// `a:b;c:d`, or empty when only the fallback point remains.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.components.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{}:{}", c.lo, c.hi)?;
        }
        Ok(())
    }
}

/// Union over bins of `[lo - r_m, hi + r_m]` intersected with bin `m`.
///
/// Half-open bin pieces are closed when merged; the last bin is closed already.
pub fn union_over_bins(
    band: &Band,
    r_hat: &[f64],
    partition: &BinPartition,
) -> Result<IntervalSet> {
    let m_count = partition.len();
    if r_hat.len() != m_count {
        return Err(Error::Shape(format!(
            "{} thresholds for {m_count} bins",
            r_hat.len()
        )));
    }
    let mut pieces = Vec::with_capacity(m_count);
    for (m, &r) in r_hat.iter().enumerate() {
        let (l, u) = partition.edges(m);
        let a = (band.lo - r).max(l);
        let b = (band.hi + r).min(u);
        let last = m + 1 == m_count;
        if a <= b && (a < u || last) {
            pieces.push(Interval { lo: a, hi: b });
        }
    }
    Ok(IntervalSet::from_pieces(
        pieces,
        partition.domain().clamp(band.mid),
    ))
}

pub fn predict_interval(
    band: &Band,
    group: GroupId,
    table: &ThresholdTable,
) -> Result<IntervalSet> {
    let s = table.group_count();
    if group.0 >= s {
        return Err(Error::UnknownGroup {
            row: 0,
            group: group.0,
            declared: s,
        });
    }
    union_over_bins(band, &table.group_column(group), table.partition())
}
