//! Exhaustive search over per-cell thresholds for tiny problems.
//!
//! Each cell's candidate thresholds are its distinct scores plus one value
//! just below the smallest, which covers nothing. Every combination is scored
//! on total calibration width; the cheapest one meeting the coverage targets
//! wins, earliest in cell order on exact ties.

use crate::binning::BinPartition;
use crate::conformal::cqr_calibrate;
use crate::data::Observation;
use crate::error::{Error, Result};

use super::{cell_conformal, covered_count, group_need, Cells, CoverageWeighting, ThresholdTable};

pub const MAX_CELLS: usize = 4;
pub const MAX_CELL_SIZE: usize = 20;

struct Candidate {
    r: f64,
    covered: usize,
    width: f64,
    /// This cell's term in the group's conformal-weighted coverage.
    conformal: f64,
    bin_rate: f64,
}

pub fn brute_force_oracle(
    obs: &[Observation],
    partition: &BinPartition,
    group_count: usize,
    alpha: f64,
    weighting: CoverageWeighting,
) -> Result<ThresholdTable> {
    let m_count = partition.len();
    if m_count * group_count > MAX_CELLS {
        return Err(Error::SearchSpace(format!(
            "{m_count} bins x {group_count} groups exceeds {MAX_CELLS} cells"
        )));
    }
    let cells = Cells::build(obs, partition, group_count)?;
    let global = cqr_calibrate(obs, alpha)?;

    let order: Vec<(usize, usize)> = (0..m_count)
        .flat_map(|m| (0..group_count).map(move |s| (m, s)))
        .collect();
    let mut options: Vec<Vec<Candidate>> = Vec::with_capacity(order.len());
    for &(m, s) in &order {
        let scores = cells.cell(m, s);
        if scores.len() > MAX_CELL_SIZE {
            return Err(Error::SearchSpace(format!(
                "cell ({m}, {s}) holds {} records, limit {MAX_CELL_SIZE}",
                scores.len()
            )));
        }
        let mut values = vec![scores[0].next_down()];
        values.extend_from_slice(scores);
        values.dedup();
        let (l, u) = partition.edges(m);
        let last = m + 1 == m_count;
        let group_n = cells.group_size(s);
        let members: Vec<&Observation> = obs.iter().filter(|o| o.group.0 == s).collect();
        options.push(
            values
                .into_iter()
                .map(|r| {
                    let width = members
                        .iter()
                        .map(|o| {
                            let a = (o.band.lo - r).max(l);
                            let b = (o.band.hi + r).min(u);
                            if a <= b && (a < u || last) {
                                b - a
                            } else {
                                0.0
                            }
                        })
                        .sum();
                    let k = covered_count(scores, r);
                    let conformal = cell_conformal(&[k], &[scores.len()], group_n);
                    Candidate {
                        r,
                        covered: k,
                        width,
                        conformal,
                        bin_rate: k as f64 / scores.len() as f64,
                    }
                })
                .collect(),
        );
    }

    let need: Vec<usize> = (0..group_count)
        .map(|s| group_need(cells.group_size(s), alpha))
        .collect();
    let n_total = obs.len();
    let target = 1.0 - alpha;
    let feasible = |pick: &[usize]| -> bool {
        let mut covered = [0usize; MAX_CELLS];
        let mut rate = [0.0f64; MAX_CELLS];
        for (c, &(_, s)) in order.iter().enumerate() {
            let cand = &options[c][pick[c]];
            covered[s] += cand.covered;
            rate[s] += match weighting {
                CoverageWeighting::CellConformal => cand.conformal,
                _ => cand.bin_rate,
            };
        }
        let groups_ok = (0..group_count).all(|s| match weighting {
            CoverageWeighting::CellConformal => rate[s] >= target - 1e-12,
            CoverageWeighting::SampleMean => covered[s] >= need[s],
            CoverageWeighting::BinMean => rate[s] / m_count as f64 >= target - 1e-12,
        });
        groups_ok
            && covered[..group_count].iter().sum::<usize>() as f64 / n_total as f64
                >= target - 1e-12
    };

    let mut pick = vec![0usize; order.len()];
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        if feasible(&pick) {
            let w: f64 = pick
                .iter()
                .enumerate()
                .map(|(c, &i)| options[c][i].width)
                .sum();
            if best.as_ref().is_none_or(|(bw, _)| w < *bw) {
                best = Some((w, pick.clone()));
            }
        }
        // Odometer increment, last cell fastest.
        let mut c = order.len();
        loop {
            if c == 0 {
                let (_, choice) =
                    best.ok_or_else(|| Error::SearchSpace("no feasible threshold table".into()))?;
                let mut table =
                    ThresholdTable::uniform(alpha, global.r_hat, partition.clone(), group_count)?;
                for (c, &(m, s)) in order.iter().enumerate() {
                    table.set(m, s, options[c][choice[c]].r);
                }
                return Ok(table);
            }
            c -= 1;
            pick[c] += 1;
            if pick[c] < options[c].len() {
                break;
            }
            pick[c] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::empirical_quantile;
    use crate::data::{Band, GroupId};
    use crate::fair::calibration_objective;

    fn ob(y: f64, lo: f64, hi: f64, g: usize) -> Observation {
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
    fn single_cell_reproduces_conformal_quantile() {
        let obs: Vec<Observation> = (0..15)
            .map(|i| ob(1.0 + i as f64 * 0.5, 2.0 + (i % 4) as f64 * 0.3, 6.0, 0))
            .collect();
        let p = BinPartition::from_bounds(vec![0.0, 10.0], vec![15]).unwrap();
        let t = brute_force_oracle(&obs, &p, 1, 0.1, CoverageWeighting::SampleMean).unwrap();
        let scores: Vec<f64> = obs
            .iter()
            .map(|o| (o.band.lo - o.y).max(o.y - o.band.hi))
            .collect();
        assert_eq!(t.get(0, 0), empirical_quantile(&scores, 0.9).unwrap());
    }

    #[test]
    fn rejects_large_search_spaces() {
        let p = BinPartition::from_bounds(vec![0.0, 3.0, 6.0, 10.0], vec![1, 1, 1]).unwrap();
        let err = brute_force_oracle(&[], &p, 2, 0.1, CoverageWeighting::SampleMean).unwrap_err();
        assert!(matches!(err, Error::SearchSpace(_)));
    }

    /// Eight records in two bins of one group with alpha = 0.25: the group
    /// needs ceil(9 * 0.75) = 7 covered samples, so exactly one of the two
    /// largest scores (4 in bin 0, 2 in bin 1) can be left out. Leaving out the
    /// 4 gives mean width 4.5625; leaving out the 2 gives 5.0.
    #[test]
    fn hand_enumerated_two_cells() {
        let obs = vec![
            ob(1.0, 0.0, 2.0, 0),  // -1
            ob(2.0, 2.0, 4.0, 0),  // 0
            ob(3.0, 4.0, 6.0, 0),  // 1
            ob(4.0, 8.0, 10.0, 0), // 4
            ob(6.0, 4.0, 8.0, 0),  // -2
            ob(7.0, 7.0, 8.0, 0),  // 0
            ob(8.0, 8.5, 9.5, 0),  // 0.5
            ob(9.0, 6.0, 7.0, 0),  // 2
        ];
        let p = BinPartition::from_bounds(vec![0.0, 5.0, 10.0], vec![4, 4]).unwrap();
        let t = brute_force_oracle(&obs, &p, 1, 0.25, CoverageWeighting::SampleMean).unwrap();
        assert_eq!(t.rows(), &[vec![1.0], vec![2.0]]);
        assert_eq!(calibration_objective(&obs, &t).unwrap(), 4.5625);
        let alt = ThresholdTable::new(0.25, 0.0, vec![vec![4.0], vec![0.5]], p).unwrap();
        assert_eq!(calibration_objective(&obs, &alt).unwrap(), 5.0);
    }
}
