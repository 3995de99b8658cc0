//! Equal-mass partitions of the label axis.
//!
//! Bin `m` is `[l_m, l_{m+1})` except the last, which is closed above. Bin
//! indices are 0-based throughout the crate.

use serde::{Deserialize, Serialize};

use crate::data::LabelDomain;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinPartition {
    bounds: Vec<f64>,
    counts: Vec<usize>,
}

impl BinPartition {
    /// Rebuilds a partition from stored bounds, e.g. from a threshold artifact.
    pub fn from_bounds(bounds: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        if bounds.len() < 2 {
            return Err(Error::InvalidConfig(
                "a partition needs at least two bounds".into(),
            ));
        }
        if bounds.iter().any(|b| !b.is_finite()) || bounds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "bin bounds {bounds:?} must be finite and strictly ascending"
            )));
        }
        if counts.len() != bounds.len() - 1 {
            return Err(Error::Shape(format!(
                "{} counts for {} bins",
                counts.len(),
                bounds.len() - 1
            )));
        }
        Ok(Self { bounds, counts })
    }

    /// Number of bins `M`.
    pub fn len(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn domain(&self) -> LabelDomain {
        LabelDomain {
            min: self.bounds[0],
            max: self.bounds[self.len()],
        }
    }

    /// `(lower, upper)` edges of bin `m`.
    pub fn edges(&self, m: usize) -> (f64, f64) {
        (self.bounds[m], self.bounds[m + 1])
    }

    /// 0-based bin holding `y`.
    pub fn assign(&self, y: f64) -> Result<usize> {
        self.domain().check(y)?;
        Ok(self.assign_in_domain(y))
    }

    pub(crate) fn assign_in_domain(&self, y: f64) -> usize {
        let interior = &self.bounds[1..self.len()];
        interior.partition_point(|&b| b <= y)
    }
}

/// Splits `labels` into `m` bins of (nearly) equal population.
///
/// Interior bound `l_{j+1}` sits halfway between the `ceil(jN/M)`-th and the
/// next smallest label; the outer bounds are the domain ends.
pub fn equal_mass_bins(labels: &[f64], m: usize, domain: LabelDomain) -> Result<BinPartition> {
    if m == 0 {
        return Err(Error::InvalidConfig(
            "number of bins must be at least 1".into(),
        ));
    }
    if labels.len() < m {
        return Err(Error::TooFewLabels {
            labels: labels.len(),
            bins: m,
        });
    }
    for &y in labels {
        domain.check(y)?;
    }
    let mut sorted = labels.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if m > 1 && sorted[0] == sorted[n - 1] {
        return Err(Error::DegenerateLabels(format!(
            "all {n} labels equal {}",
            sorted[0]
        )));
    }

    let mut bounds = Vec::with_capacity(m + 1);
    bounds.push(domain.min);
    for j in 1..m {
        let c = (j * n).div_ceil(m);
        bounds.push(0.5 * (sorted[c - 1] + sorted[c]));
    }
    bounds.push(domain.max);
    if bounds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::DegenerateLabels(format!(
            "tied labels collapse bin bounds {bounds:?}; reduce the number of bins"
        )));
    }

    let mut part = BinPartition {
        bounds,
        counts: vec![0; m],
    };
    for &y in &sorted {
        let b = part.assign_in_domain(y);
        part.counts[b] += 1;
    }
    if let Some(empty) = part.counts.iter().position(|&c| c == 0) {
        return Err(Error::DegenerateLabels(format!(
            "bin {empty} receives no labels; reduce the number of bins"
        )));
    }
    Ok(part)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dom() -> LabelDomain {
        LabelDomain::new(0.0, 10.0).unwrap()
    }

    #[test]
    fn two_bins_over_one_to_eight() {
        let labels: Vec<f64> = (1..=8).map(f64::from).collect();
        let p = equal_mass_bins(&labels, 2, dom()).unwrap();
        assert_eq!(p.bounds(), &[0.0, 4.5, 10.0]);
        assert_eq!(p.counts(), &[4, 4]);
    }

    #[test]
    fn single_bin_is_the_domain() {
        let p = equal_mass_bins(&[3.0, 1.0, 7.0], 1, dom()).unwrap();
        assert_eq!(p.bounds(), &[0.0, 10.0]);
        assert_eq!(p.counts(), &[3]);
    }

    #[test]
    fn identical_labels_are_degenerate() {
        let err = equal_mass_bins(&[1.0; 4], 2, dom()).unwrap_err();
        assert!(err.to_string().contains("degenerate labels"));
        assert!(matches!(
            equal_mass_bins(&[1.0], 2, dom()),
            Err(Error::TooFewLabels { .. })
        ));
    }

    #[test]
    fn assignment_conventions() {
        let p = BinPartition::from_bounds(vec![0.0, 4.5, 10.0], vec![4, 4]).unwrap();
        assert_eq!(p.assign(4.5).unwrap(), 1);
        assert_eq!(p.assign(10.0).unwrap(), 1);
        assert_eq!(p.assign(0.0).unwrap(), 0);
        assert_eq!(p.assign(4.4999).unwrap(), 0);
        assert!(matches!(p.assign(-1.0), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn integer_scores_keep_cuts_and_report_counts() {
        let labels = [1.0, 2.0, 2.0, 2.0, 2.0, 3.0, 4.0, 5.0];
        let p = equal_mass_bins(&labels, 2, dom()).unwrap();
        // The cut falls inside the run of 2s, so all of them move up a bin.
        assert_eq!(p.bounds(), &[0.0, 2.0, 10.0]);
        assert_eq!(p.counts(), &[1, 7]);
        let err = equal_mass_bins(&[2.0, 2.0, 2.0, 2.0, 2.0, 9.0], 3, dom()).unwrap_err();
        assert!(matches!(err, Error::DegenerateLabels(_)));
    }

    #[test]
    fn uneven_population_differs_by_at_most_one() {
        let labels: Vec<f64> = (0..23).map(|i| i as f64 * 0.4).collect();
        for m in 1..=7 {
            let p = equal_mass_bins(&labels, m, dom()).unwrap();
            let (lo, hi) = (
                p.counts().iter().min().unwrap(),
                p.counts().iter().max().unwrap(),
            );
            assert!(hi - lo <= 1, "m={m} counts {:?}", p.counts());
            assert_eq!(p.counts().iter().sum::<usize>(), 23);
        }
    }
}
