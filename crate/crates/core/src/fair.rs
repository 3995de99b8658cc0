//! Per-(bin, group) thresholds and the coverage-exchange optimizer.
//!
//! Every calibration record falls in one cell `(m, s)`: bin `m` of its label
//! and its group `s`. Each cell carries its own CQR shift `r[m][s]`. The
//! optimizer starts from the global CQR shift and moves one covered sample at
//! a time from over-covered groups to under-covered ones, choosing the cell
//! whose threshold changes least per unit of coverage.

use serde::{Deserialize, Serialize};

use crate::binning::BinPartition;
use crate::conformal::{cqr_calibrate, cqr_score};
use crate::data::Observation;
use crate::error::{Error, Result};
use crate::intervals::union_over_bins;
use crate::quantile::check_alpha;

pub mod oracle;

pub use oracle::brute_force_oracle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub alpha: f64,
    pub global_r_hat: f64,
    /// `[M][S]`
    r_hat: Vec<Vec<f64>>,
    partition: BinPartition,
}

impl ThresholdTable {
    pub fn new(
        alpha: f64,
        global_r_hat: f64,
        r_hat: Vec<Vec<f64>>,
        partition: BinPartition,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        if r_hat.len() != partition.len() {
            return Err(Error::Shape(format!(
                "{} threshold rows for {} bins",
                r_hat.len(),
                partition.len()
            )));
        }
        let s = r_hat.first().map_or(0, Vec::len);
        if s == 0 || r_hat.iter().any(|row| row.len() != s) {
            return Err(Error::Shape(
                "threshold rows must share a non-zero group count".into(),
            ));
        }
        if !global_r_hat.is_finite() || r_hat.iter().flatten().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("threshold table entry".into()));
        }
        Ok(Self {
            alpha,
            global_r_hat,
            r_hat,
            partition,
        })
    }

    /// Every cell set to `r`.
    pub fn uniform(
        alpha: f64,
        r: f64,
        partition: BinPartition,
        group_count: usize,
    ) -> Result<Self> {
        let rows = vec![vec![r; group_count]; partition.len()];
        Self::new(alpha, r, rows, partition)
    }

    pub fn bins(&self) -> usize {
        self.r_hat.len()
    }

    pub fn group_count(&self) -> usize {
        self.r_hat[0].len()
    }

    pub fn get(&self, m: usize, s: usize) -> f64 {
        self.r_hat[m][s]
    }

    pub fn set(&mut self, m: usize, s: usize, r: f64) {
        self.r_hat[m][s] = r;
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.r_hat
    }

    pub fn partition(&self) -> &BinPartition {
        &self.partition
    }

    /// Thresholds of one group across bins.
    pub fn group_column(&self, group: crate::data::GroupId) -> Vec<f64> {
        self.r_hat.iter().map(|row| row[group.0]).collect()
    }
}

/// How a group's coverage is summarised against the `1 - alpha` target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageWeighting {
    /// Each cell contributes its conformal coverage `k / (n + 1)`, weighted by
    /// the cell's share of the group. A threshold at the `k`-th smallest of `n`
    /// scores covers a fresh exchangeable sample with probability
    /// `k / (n + 1)`, so this is the coverage the group should expect at test
    /// time.
    #[default]
    CellConformal,
    /// Covered samples over group size; the target is the conformal count
    /// `ceil((n_s + 1)(1 - alpha))`.
    SampleMean,
    /// Unweighted mean of per-bin coverage rates.
    BinMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageState {
    /// `beta[m][s]`: covered fraction of cell `(m, s)`.
    pub beta: Vec<Vec<f64>>,
    pub covered: Vec<Vec<usize>>,
    pub cell_counts: Vec<Vec<usize>>,
    /// Mean of `beta[.][s]` over bins.
    pub per_group_mean: Vec<f64>,
    /// Covered samples of group `s` over its size.
    pub per_group_sample: Vec<f64>,
    /// Size-weighted mean of per-cell `covered / (count + 1)`.
    pub per_group_conformal: Vec<f64>,
    /// Pooled covered fraction over all records.
    pub overall: f64,
}

impl CoverageState {
    fn from_counts(covered: Vec<Vec<usize>>, cell_counts: Vec<Vec<usize>>) -> Self {
        let m_count = covered.len();
        let s_count = covered[0].len();
        let beta: Vec<Vec<f64>> = covered
            .iter()
            .zip(&cell_counts)
            .map(|(c, n)| {
                c.iter()
                    .zip(n)
                    .map(|(&c, &n)| c as f64 / n as f64)
                    .collect()
            })
            .collect();
        let per_group_mean = (0..s_count)
            .map(|s| beta.iter().map(|row| row[s]).sum::<f64>() / m_count as f64)
            .collect();
        let per_group_sample = (0..s_count)
            .map(|s| {
                let c: usize = covered.iter().map(|row| row[s]).sum();
                let n: usize = cell_counts.iter().map(|row| row[s]).sum();
                c as f64 / n as f64
            })
            .collect();
        let per_group_conformal = (0..s_count)
            .map(|s| {
                let n: usize = cell_counts.iter().map(|row| row[s]).sum();
                let ks: Vec<usize> = covered.iter().map(|row| row[s]).collect();
                let sizes: Vec<usize> = cell_counts.iter().map(|row| row[s]).collect();
                cell_conformal(&ks, &sizes, n)
            })
            .collect();
        let total_c: usize = covered.iter().flatten().sum();
        let total_n: usize = cell_counts.iter().flatten().sum();
        Self {
            beta,
            covered,
            cell_counts,
            per_group_mean,
            per_group_sample,
            per_group_conformal,
            overall: total_c as f64 / total_n as f64,
        }
    }

    pub fn group_metric(&self, weighting: CoverageWeighting) -> &[f64] {
        match weighting {
            CoverageWeighting::CellConformal => &self.per_group_conformal,
            CoverageWeighting::SampleMean => &self.per_group_sample,
            CoverageWeighting::BinMean => &self.per_group_mean,
        }
    }
}

/// Sorted CQR scores per cell, `[M][S]`.
#[derive(Debug, Clone)]
pub(crate) struct Cells {
    pub scores: Vec<Vec<Vec<f64>>>,
}

impl Cells {
    pub fn build(
        obs: &[Observation],
        partition: &BinPartition,
        group_count: usize,
    ) -> Result<Self> {
        let mut scores = vec![vec![Vec::new(); group_count]; partition.len()];
        for (row, o) in obs.iter().enumerate() {
            if o.group.0 >= group_count {
                return Err(Error::UnknownGroup {
                    row: row + 1,
                    group: o.group.0,
                    declared: group_count,
                });
            }
            let m = partition.assign(o.y)?;
            scores[m][o.group.0].push(cqr_score(o.band.lo, o.band.hi, o.y)?);
        }
        for (m, row) in scores.iter_mut().enumerate() {
            for (s, cell) in row.iter_mut().enumerate() {
                if cell.is_empty() {
                    return Err(Error::EmptyCell { bin: m, group: s });
                }
                cell.sort_by(f64::total_cmp);
            }
        }
        Ok(Self { scores })
    }

    pub fn bins(&self) -> usize {
        self.scores.len()
    }

    pub fn groups(&self) -> usize {
        self.scores[0].len()
    }

    pub fn cell(&self, m: usize, s: usize) -> &[f64] {
        &self.scores[m][s]
    }

    pub fn group_size(&self, s: usize) -> usize {
        self.scores.iter().map(|row| row[s].len()).sum()
    }
}

pub(crate) fn covered_count(sorted: &[f64], r: f64) -> usize {
    sorted.partition_point(|&x| x <= r)
}

/// `sum_m (n_m / n) * k_m / (n_m + 1)`, accumulated in bin order.
pub(crate) fn cell_conformal(covered: &[usize], sizes: &[usize], n: usize) -> f64 {
    covered
        .iter()
        .zip(sizes)
        .map(|(&k, &c)| c as f64 / n as f64 * (k as f64 / (c as f64 + 1.0)))
        .sum()
}

/// Conformal per-group target count for sample-mean weighting.
pub(crate) fn group_need(n: usize, alpha: f64) -> usize {
    crate::conformal::conformal_rank(n, 1.0 - alpha)
}

/// Global CQR threshold copied into every cell, and the coverage it yields.
pub fn init_thresholds(
    obs: &[Observation],
    partition: &BinPartition,
    group_count: usize,
    alpha: f64,
) -> Result<(ThresholdTable, CoverageState)> {
    Cells::build(obs, partition, group_count)?;
    let global = cqr_calibrate(obs, alpha)?;
    let table = ThresholdTable::uniform(alpha, global.r_hat, partition.clone(), group_count)?;
    let state = measure_coverage(obs, &table)?;
    Ok((table, state))
}

/// Recounts per-cell coverage of `table` on the calibration records.
pub fn measure_coverage(obs: &[Observation], table: &ThresholdTable) -> Result<CoverageState> {
    let (m_count, s_count) = (table.bins(), table.group_count());
    let mut covered = vec![vec![0usize; s_count]; m_count];
    let mut counts = vec![vec![0usize; s_count]; m_count];
    for (row, o) in obs.iter().enumerate() {
        let s = o.group.0;
        if s >= s_count {
            return Err(Error::UnknownGroup {
                row: row + 1,
                group: s,
                declared: s_count,
            });
        }
        let m = table.partition().assign(o.y)?;
        counts[m][s] += 1;
        if cqr_score(o.band.lo, o.band.hi, o.y)? <= table.get(m, s) {
            covered[m][s] += 1;
        }
    }
    for (m, row) in counts.iter().enumerate() {
        if let Some(s) = row.iter().position(|&n| n == 0) {
            return Err(Error::EmptyCell { bin: m, group: s });
        }
    }
    Ok(CoverageState::from_counts(covered, counts))
}

/// Threshold saved per unit of cell coverage by covering one fewer record:
/// the gap between the largest covered score and the score below it, divided
/// by the cell size. Tied scores give a zero slope.
pub fn slope_decrease(sorted: &[f64], r: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptyScores);
    }
    let k = covered_count(sorted, r);
    if k == 0 {
        return Err(Error::NothingCovered);
    }
    let top = sorted[k - 1];
    let below = if k >= 2 {
        sorted[k - 2]
    } else {
        top.next_down()
    };
    Ok((top - below) / sorted.len() as f64)
}

/// Threshold needed per unit of cell coverage to cover one more record.
pub fn slope_increase(sorted: &[f64], r: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptyScores);
    }
    let k = covered_count(sorted, r);
    if k == sorted.len() {
        return Err(Error::FullyCovered);
    }
    Ok((sorted[k] - r) / sorted.len() as f64)
}

/// A candidate threshold change for one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Move {
    bin: usize,
    /// Threshold change per unit of cell coverage.
    slope: f64,
    target: f64,
    /// Covered count after the move.
    new_k: usize,
}

/// Lowers `r` just below the largest covered score.
fn drop_move(cell: &[f64], r: f64, k: usize, bin: usize) -> Option<Move> {
    if k == 0 {
        return None;
    }
    let j = cell.partition_point(|&x| x < cell[k - 1]);
    let target = if j >= 1 {
        cell[j - 1]
    } else {
        cell[0].next_down()
    };
    Some(Move {
        bin,
        slope: (r - target) / cell.len() as f64,
        target,
        new_k: j,
    })
}

/// Raises `r` to the smallest uncovered score.
fn add_move(cell: &[f64], r: f64, k: usize, bin: usize) -> Option<Move> {
    if k == cell.len() {
        return None;
    }
    let target = cell[k];
    Some(Move {
        bin,
        slope: (target - r) / cell.len() as f64,
        target,
        new_k: covered_count(cell, target),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// No group is under target and no width-reducing move keeps every group at target.
    Converged,
    /// The cheapest addition cost more than the best removal saved.
    SlopeCrossover,
    MaxIters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    /// Donor group drops a sample, recipient group gains one.
    Exchange,
    /// Recipient gains a sample; no group can spare one.
    Add,
    /// An over-covered group drops a sample it does not need.
    Drop,
    /// One group trades an expensive covered sample for a cheaper one in another bin.
    Rebalance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerStep {
    pub step: usize,
    pub kind: StepKind,
    pub donor_group: Option<usize>,
    pub donor_bin: Option<usize>,
    pub recipient_group: Option<usize>,
    pub recipient_bin: Option<usize>,
    pub slope_decrease: Option<f64>,
    pub slope_increase: Option<f64>,
    /// Net change in covered calibration samples.
    pub covered_delta: i64,
    /// Per-group coverage after the step, under the configured weighting.
    pub group_coverage: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub initial_coverage: Vec<f64>,
    pub steps: Vec<OptimizerStep>,
    pub termination: Termination,
}

impl OptimizerTrace {
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }

    pub fn summary(&self) -> TraceSummary {
        let count = |k: StepKind| self.steps.iter().filter(|s| s.kind == k).count();
        TraceSummary {
            iterations: self.steps.len(),
            termination: self.termination,
            exchanges: count(StepKind::Exchange),
            adds: count(StepKind::Add),
            drops: count(StepKind::Drop),
            rebalances: count(StepKind::Rebalance),
            initial_coverage: self.initial_coverage.clone(),
            final_coverage: self.steps.last().map_or_else(
                || self.initial_coverage.clone(),
                |s| s.group_coverage.clone(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub iterations: usize,
    pub termination: Termination,
    pub exchanges: usize,
    pub adds: usize,
    pub drops: usize,
    pub rebalances: usize,
    pub initial_coverage: Vec<f64>,
    pub final_coverage: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub weighting: CoverageWeighting,
    /// Defaults to ten times the calibration size.
    pub max_iters: Option<usize>,
    /// Stop at the first exchange whose addition slope exceeds its removal
    /// slope, even if a group is still under target.
    pub stop_on_slope_crossover: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            weighting: CoverageWeighting::CellConformal,
            max_iters: None,
            stop_on_slope_crossover: false,
        }
    }
}

struct Optimizer<'a> {
    cells: &'a Cells,
    r: Vec<Vec<f64>>,
    k: Vec<Vec<usize>>,
    group_n: Vec<usize>,
    need: Vec<usize>,
    n_total: usize,
    target: f64,
    weighting: CoverageWeighting,
}

impl Optimizer<'_> {
    fn metric_with(&self, s: usize, k: &dyn Fn(usize) -> usize) -> f64 {
        let m_count = self.cells.bins();
        match self.weighting {
            CoverageWeighting::CellConformal => {
                let ks: Vec<usize> = (0..m_count).map(k).collect();
                let sizes: Vec<usize> = (0..m_count).map(|m| self.cells.cell(m, s).len()).collect();
                cell_conformal(&ks, &sizes, self.group_n[s])
            }
            CoverageWeighting::SampleMean => {
                (0..m_count).map(k).sum::<usize>() as f64 / self.group_n[s] as f64
            }
            CoverageWeighting::BinMean => {
                (0..m_count)
                    .map(|m| k(m) as f64 / self.cells.cell(m, s).len() as f64)
                    .sum::<f64>()
                    / m_count as f64
            }
        }
    }

    fn met_with(&self, s: usize, k: &dyn Fn(usize) -> usize) -> bool {
        match self.weighting {
            CoverageWeighting::SampleMean => {
                (0..self.cells.bins()).map(k).sum::<usize>() >= self.need[s]
            }
            CoverageWeighting::CellConformal | CoverageWeighting::BinMean => {
                self.metric_with(s, k) >= self.target - 1e-12
            }
        }
    }

    /// Whether pooled coverage stays at target after a net change of `delta`
    /// covered samples. Implied by the group targets except under bin-mean
    /// weighting.
    fn pooled_ok(&self, delta: i64) -> bool {
        let covered = self.k.iter().flatten().sum::<usize>() as i64 + delta;
        covered as f64 / self.n_total as f64 >= self.target - 1e-12
    }

    fn metric(&self, s: usize) -> f64 {
        self.metric_with(s, &|m| self.k[m][s])
    }

    fn metrics(&self) -> Vec<f64> {
        (0..self.cells.groups()).map(|s| self.metric(s)).collect()
    }

    fn met(&self, s: usize) -> bool {
        self.met_with(s, &|m| self.k[m][s])
    }

    /// Whether group `s` still meets its target after the given cell changes.
    fn met_after(&self, s: usize, changes: &[Move]) -> bool {
        self.met_with(s, &|m| {
            changes
                .iter()
                .rev()
                .find(|c| c.bin == m)
                .map_or(self.k[m][s], |c| c.new_k)
        })
    }

    fn drops(&self, s: usize) -> Vec<Move> {
        (0..self.cells.bins())
            .filter_map(|m| drop_move(self.cells.cell(m, s), self.r[m][s], self.k[m][s], m))
            .collect()
    }

    fn adds(&self, s: usize) -> Vec<Move> {
        (0..self.cells.bins())
            .filter_map(|m| add_move(self.cells.cell(m, s), self.r[m][s], self.k[m][s], m))
            .collect()
    }

    /// Largest-slope removal that keeps the group at target, with `credit`
    /// samples about to be covered elsewhere.
    fn best_feasible_drop(&self, s: usize, credit: i64) -> Option<Move> {
        let mut best: Option<Move> = None;
        for mv in self.drops(s) {
            let delta = mv.new_k as i64 - self.k[mv.bin][s] as i64 + credit;
            if self.met_after(s, &[mv])
                && self.pooled_ok(delta)
                && best.is_none_or(|b| mv.slope > b.slope)
            {
                best = Some(mv);
            }
        }
        best
    }

    fn cheapest_add(&self, s: usize) -> Option<Move> {
        let mut best: Option<Move> = None;
        for mv in self.adds(s) {
            if best.is_none_or(|b| mv.slope < b.slope) {
                best = Some(mv);
            }
        }
        best
    }

    /// Best within-group swap: drop in one bin, add in another, strictly
    /// cheaper overall and still at target.
    fn best_swap(&self, s: usize) -> Option<(Move, Move)> {
        let drops = self.drops(s);
        let adds = self.adds(s);
        let mut best: Option<(f64, Move, Move)> = None;
        for d in &drops {
            for a in &adds {
                if a.bin == d.bin || d.slope <= a.slope {
                    continue;
                }
                let gain = d.slope - a.slope;
                if best.as_ref().is_some_and(|(g, _, _)| gain <= *g) {
                    continue;
                }
                let delta =
                    d.new_k as i64 + a.new_k as i64 - (self.k[d.bin][s] + self.k[a.bin][s]) as i64;
                if self.met_after(s, &[*d, *a]) && self.pooled_ok(delta) {
                    best = Some((gain, *d, *a));
                }
            }
        }
        best.map(|(_, d, a)| (d, a))
    }

    fn apply(&mut self, s: usize, mv: &Move) -> i64 {
        let before = self.k[mv.bin][s] as i64;
        self.r[mv.bin][s] = mv.target;
        self.k[mv.bin][s] = mv.new_k;
        mv.new_k as i64 - before
    }

    fn argmax(&self, groups: &[usize], metrics: &[f64]) -> Option<usize> {
        groups.iter().copied().fold(None, |acc, s| match acc {
            Some(b) if metrics[b] >= metrics[s] => Some(b),
            _ => Some(s),
        })
    }

    fn argmin(&self, groups: &[usize], metrics: &[f64]) -> Option<usize> {
        groups.iter().copied().fold(None, |acc, s| match acc {
            Some(b) if metrics[b] <= metrics[s] => Some(b),
            _ => Some(s),
        })
    }
}

/// Runs the coverage-exchange loop from `table0`.
///
/// Each step looks for the least-covered group below target (recipient) and
/// the most-covered group that can spare a sample (donor):
///
/// * both exist: the donor drops its largest-slope sample and the recipient
///   covers its smallest-slope one;
/// * only a recipient: it covers one more sample;
/// * only a donor: it drops one sample it does not need;
/// * neither: a group may trade a covered sample in one bin for a cheaper one
///   in another. When no such trade exists the removal slopes no longer exceed
///   the addition slopes and the loop stops.
///
/// No move may take pooled coverage below `1 - alpha`; if it is short while
/// every group is at target, the cheapest addition anywhere is made.
///
/// Finally each threshold is lowered to the largest score it covers, which
/// keeps every coverage count and never widens an interval.
pub fn eoc_optimize(
    obs: &[Observation],
    table0: &ThresholdTable,
    config: &OptimizerConfig,
) -> Result<(ThresholdTable, OptimizerTrace)> {
    let s_count = table0.group_count();
    let cells = Cells::build(obs, table0.partition(), s_count)?;
    let alpha = table0.alpha;
    let m_count = cells.bins();
    let r = table0.rows().to_vec();
    let k: Vec<Vec<usize>> = (0..m_count)
        .map(|m| {
            (0..s_count)
                .map(|s| covered_count(cells.cell(m, s), r[m][s]))
                .collect()
        })
        .collect();
    let group_n: Vec<usize> = (0..s_count).map(|s| cells.group_size(s)).collect();
    let need = group_n.iter().map(|&n| group_need(n, alpha)).collect();
    let mut opt = Optimizer {
        cells: &cells,
        r,
        k,
        group_n,
        need,
        n_total: obs.len(),
        target: 1.0 - alpha,
        weighting: config.weighting,
    };

    let initial_coverage = opt.metrics();
    if s_count < 2 {
        let trace = OptimizerTrace {
            initial_coverage,
            steps: Vec::new(),
            termination: Termination::Converged,
        };
        return Ok((table0.clone(), trace));
    }

    let max_iters = config.max_iters.unwrap_or(10 * obs.len());
    let mut steps = Vec::new();
    let mut termination = Termination::MaxIters;
    let groups: Vec<usize> = (0..s_count).collect();

    while steps.len() < max_iters {
        let metrics = opt.metrics();
        let under: Vec<usize> = groups.iter().copied().filter(|&s| !opt.met(s)).collect();
        let mut recipient = opt.argmin(&under, &metrics);
        if recipient.is_none() && !opt.pooled_ok(0) {
            // Every group is at target but the pooled count is short: cover
            // the cheapest sample anywhere.
            recipient = groups
                .iter()
                .filter_map(|&s| opt.cheapest_add(s).map(|a| (a.slope, s)))
                .fold(None, |acc: Option<(f64, usize)>, c| match acc {
                    Some(b) if b.0 <= c.0 => Some(b),
                    _ => Some(c),
                })
                .map(|(_, s)| s);
        }
        let add = recipient.and_then(|s| opt.cheapest_add(s));
        let credit = match (recipient, add) {
            (Some(rc), Some(a)) => a.new_k as i64 - opt.k[a.bin][rc] as i64,
            _ => 0,
        };
        let donor_moves: Vec<Option<Move>> = groups
            .iter()
            .map(|&s| opt.best_feasible_drop(s, credit))
            .collect();
        let donors: Vec<usize> = groups
            .iter()
            .copied()
            .filter(|&s| donor_moves[s].is_some())
            .collect();
        // A pooled shortfall is repaired by additions only; an exchange would
        // leave the pooled count where it is.
        let donor = if under.is_empty() && recipient.is_some() {
            None
        } else {
            opt.argmax(&donors, &metrics)
        };

        let mut step = OptimizerStep {
            step: steps.len(),
            kind: StepKind::Rebalance,
            donor_group: None,
            donor_bin: None,
            recipient_group: None,
            recipient_bin: None,
            slope_decrease: None,
            slope_increase: None,
            covered_delta: 0,
            group_coverage: Vec::new(),
        };

        match (donor, recipient, add) {
            (Some(d), Some(rc), Some(a)) => {
                let dm = donor_moves[d].expect("donor has a move");
                if config.stop_on_slope_crossover && a.slope > dm.slope {
                    termination = Termination::SlopeCrossover;
                    break;
                }
                step.kind = StepKind::Exchange;
                step.covered_delta = opt.apply(d, &dm) + opt.apply(rc, &a);
                step.donor_group = Some(d);
                step.donor_bin = Some(dm.bin);
                step.slope_decrease = Some(dm.slope);
                step.recipient_group = Some(rc);
                step.recipient_bin = Some(a.bin);
                step.slope_increase = Some(a.slope);
            }
            (_, Some(rc), Some(a)) => {
                step.kind = StepKind::Add;
                step.covered_delta = opt.apply(rc, &a);
                step.recipient_group = Some(rc);
                step.recipient_bin = Some(a.bin);
                step.slope_increase = Some(a.slope);
            }
            (_, Some(_), None) => {
                // An under-covered group with every cell fully covered cannot
                // happen for targets at most the group size.
                termination = Termination::Converged;
                break;
            }
            (Some(d), None, _) => {
                let dm = donor_moves[d].expect("donor has a move");
                step.kind = StepKind::Drop;
                step.covered_delta = opt.apply(d, &dm);
                step.donor_group = Some(d);
                step.donor_bin = Some(dm.bin);
                step.slope_decrease = Some(dm.slope);
            }
            (None, None, _) => {
                let mut best: Option<(f64, usize, Move, Move)> = None;
                for &s in &groups {
                    if let Some((dm, am)) = opt.best_swap(s) {
                        let gain = dm.slope - am.slope;
                        if best.as_ref().is_none_or(|(g, ..)| gain > *g) {
                            best = Some((gain, s, dm, am));
                        }
                    }
                }
                let Some((_, s, dm, am)) = best else {
                    termination = Termination::Converged;
                    break;
                };
                step.covered_delta = opt.apply(s, &dm) + opt.apply(s, &am);
                step.donor_group = Some(s);
                step.donor_bin = Some(dm.bin);
                step.slope_decrease = Some(dm.slope);
                step.recipient_group = Some(s);
                step.recipient_bin = Some(am.bin);
                step.slope_increase = Some(am.slope);
            }
        }
        step.group_coverage = opt.metrics();
        steps.push(step);
    }

    let mut table = table0.clone();
    for m in 0..m_count {
        for s in 0..s_count {
            let kk = opt.k[m][s];
            let r = if kk > 0 {
                cells.cell(m, s)[kk - 1]
            } else {
                opt.r[m][s]
            };
            table.set(m, s, r);
        }
    }
    Ok((
        table,
        OptimizerTrace {
            initial_coverage,
            steps,
            termination,
        },
    ))
}

/// Mean total width over the calibration records of the union intervals
/// built from `table`.
pub fn calibration_objective(obs: &[Observation], table: &ThresholdTable) -> Result<f64> {
    if obs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for o in obs {
        total += union_over_bins(&o.band, &table.group_column(o.group), table.partition())?
            .total_width();
    }
    Ok(total / obs.len() as f64)
}

/// Whether every group meets its target under `weighting`, and pooled
/// sample coverage is at least `1 - alpha`.
pub fn satisfies_targets(state: &CoverageState, alpha: f64, weighting: CoverageWeighting) -> bool {
    let groups_ok = (0..state.per_group_sample.len()).all(|s| match weighting {
        CoverageWeighting::SampleMean => {
            let covered: usize = state.covered.iter().map(|row| row[s]).sum();
            let n: usize = state.cell_counts.iter().map(|row| row[s]).sum();
            covered >= group_need(n, alpha)
        }
        CoverageWeighting::CellConformal => state.per_group_conformal[s] >= 1.0 - alpha - 1e-12,
        CoverageWeighting::BinMean => state.per_group_mean[s] >= 1.0 - alpha - 1e-12,
    });
    groups_ok && state.overall >= 1.0 - alpha - 1e-12
}
