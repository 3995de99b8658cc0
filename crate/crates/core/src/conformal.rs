//! Conformity scores, finite-sample quantiles and the global baselines.

use serde::{Deserialize, Serialize};

use crate::data::Observation;
use crate::error::{Error, Result};
use crate::quantile::{check_alpha, check_level};

/// `max(q_lo - y, y - q_hi)`: negative strictly inside the band.
pub fn cqr_score(q_lo: f64, q_hi: f64, y: f64) -> Result<f64> {
    if q_lo > q_hi {
        return Err(Error::InvertedBand { lo: q_lo, hi: q_hi });
    }
    Ok((q_lo - y).max(y - q_hi))
}

/// 1-based order statistic `ceil((n + 1) level)`, clamped to `[1, n]`.
pub fn conformal_rank(n: usize, level: f64) -> usize {
    // The small offset keeps products such as 10 * 0.9 from rounding up past
    // an exact integer.
    let k = ((n as f64 + 1.0) * level - 1e-9).ceil();
    (k.max(1.0) as usize).min(n)
}

/// Finite-sample conformal quantile: the `conformal_rank`-th smallest score.
pub fn empirical_quantile(scores: &[f64], level: f64) -> Result<f64> {
    check_level(level)?;
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("conformity score".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[conformal_rank(sorted.len(), level) - 1])
}

pub fn cqr_scores(obs: &[Observation]) -> Result<Vec<f64>> {
    obs.iter()
        .map(|o| cqr_score(o.band.lo, o.band.hi, o.y))
        .collect()
}

/// Absolute residuals around the median prediction.
pub fn residual_scores(obs: &[Observation]) -> Vec<f64> {
    obs.iter().map(|o| (o.y - o.band.mid).abs()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalThreshold {
    pub r_hat: f64,
    pub alpha: f64,
    pub n_cal: usize,
}

/// Vanilla CQR: one shift for every record.
pub fn cqr_calibrate(obs: &[Observation], alpha: f64) -> Result<GlobalThreshold> {
    check_alpha(alpha)?;
    let scores = cqr_scores(obs)?;
    Ok(GlobalThreshold {
        r_hat: empirical_quantile(&scores, 1.0 - alpha)?,
        alpha,
        n_cal: obs.len(),
    })
}

/// Split conformal on absolute residuals; intervals are `median +- r_hat`.
pub fn split_cp_calibrate(obs: &[Observation], alpha: f64) -> Result<GlobalThreshold> {
    check_alpha(alpha)?;
    let scores = residual_scores(obs);
    Ok(GlobalThreshold {
        r_hat: empirical_quantile(&scores, 1.0 - alpha)?,
        alpha,
        n_cal: obs.len(),
    })
}

/// Group-conditional CQR: a separate shift per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupwiseThreshold {
    pub alpha: f64,
    pub r_hat: Vec<f64>,
    pub n_cal: Vec<usize>,
}

pub fn groupwise_calibrate(
    obs: &[Observation],
    group_count: usize,
    alpha: f64,
) -> Result<GroupwiseThreshold> {
    check_alpha(alpha)?;
    let mut per_group: Vec<Vec<f64>> = vec![Vec::new(); group_count];
    for o in obs {
        let slot = per_group.get_mut(o.group.0).ok_or(Error::UnknownGroup {
            row: 0,
            group: o.group.0,
            declared: group_count,
        })?;
        slot.push(cqr_score(o.band.lo, o.band.hi, o.y)?);
    }
    let mut r_hat = Vec::with_capacity(group_count);
    for (g, scores) in per_group.iter().enumerate() {
        if scores.is_empty() {
            return Err(Error::MissingGroup(g));
        }
        r_hat.push(empirical_quantile(scores, 1.0 - alpha)?);
    }
    Ok(GroupwiseThreshold {
        alpha,
        r_hat,
        n_cal: per_group.iter().map(Vec::len).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Band, GroupId};

    fn obs(y: f64, lo: f64, hi: f64, g: usize) -> Observation {
        Observation {
            y,
            group: GroupId(g),
            band: Band {
                lo,
                mid: 0.5 * (lo + hi),
                hi,
            },
        }
    }

    #[test]
    fn score_examples() {
        assert_eq!(cqr_score(3.0, 7.0, 5.0).unwrap(), -2.0);
        assert_eq!(cqr_score(3.0, 7.0, 9.0).unwrap(), 2.0);
        assert_eq!(cqr_score(3.0, 7.0, 3.0).unwrap(), 0.0);
        assert!(matches!(
            cqr_score(7.0, 3.0, 5.0),
            Err(Error::InvertedBand { .. })
        ));
    }

    #[test]
    fn quantile_examples() {
        let nine: Vec<f64> = (1..=9).map(f64::from).collect();
        assert_eq!(empirical_quantile(&nine, 0.9).unwrap(), 9.0);
        assert_eq!(empirical_quantile(&[5.0], 0.1).unwrap(), 5.0);
        assert_eq!(empirical_quantile(&[5.0], 0.99).unwrap(), 5.0);
        let nineteen: Vec<f64> = (1..=19).map(f64::from).collect();
        assert_eq!(empirical_quantile(&nineteen, 0.9).unwrap(), 18.0);
        assert!(matches!(
            empirical_quantile(&[], 0.9),
            Err(Error::EmptyScores)
        ));
        assert!(empirical_quantile(&nine, 1.0).is_err());
    }

    #[test]
    fn rank_is_exact_at_integer_products() {
        assert_eq!(conformal_rank(9, 0.9), 9);
        assert_eq!(conformal_rank(19, 0.9), 18);
        assert_eq!(conformal_rank(3, 0.5), 2);
        assert_eq!(conformal_rank(4000, 0.9), 3601);
        assert_eq!(conformal_rank(1, 0.01), 1);
    }

    #[test]
    fn cqr_constant_and_negative() {
        let c: Vec<Observation> = (0..10)
            .map(|i| obs(5.0 + i as f64 * 0.01, 0.0, 10.0, 0))
            .collect();
        let t = cqr_calibrate(&c, 0.1).unwrap();
        assert!(t.r_hat < 0.0);
        let same: Vec<Observation> = (0..10).map(|_| obs(12.0, 0.0, 10.0, 0)).collect();
        assert_eq!(cqr_calibrate(&same, 0.1).unwrap().r_hat, 2.0);
    }

    #[test]
    fn split_cp_examples() {
        let o = vec![
            obs(1.0, -1.0, 1.0, 0),
            obs(-2.0, -1.0, 1.0, 0),
            obs(3.0, -1.0, 1.0, 0),
        ];
        assert_eq!(split_cp_calibrate(&o, 0.5).unwrap().r_hat, 2.0);
        let z = vec![obs(0.0, -1.0, 1.0, 0); 4];
        assert_eq!(split_cp_calibrate(&z, 0.1).unwrap().r_hat, 0.0);
    }

    #[test]
    fn groupwise_thresholds_per_group() {
        let o = vec![
            obs(11.0, 0.0, 10.0, 0),
            obs(13.0, 0.0, 10.0, 1),
            obs(12.0, 0.0, 10.0, 1),
        ];
        let t = groupwise_calibrate(&o, 2, 0.1).unwrap();
        assert_eq!(t.r_hat, vec![1.0, 3.0]);
        assert_eq!(t.n_cal, vec![1, 2]);
        assert!(matches!(
            groupwise_calibrate(&o, 3, 0.1),
            Err(Error::MissingGroup(2))
        ));
    }
}
