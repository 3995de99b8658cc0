//! Coverage, width and accuracy metrics with per-group and per-bin breakdowns.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::binning::BinPartition;
use crate::data::Observation;
use crate::error::{Error, Result};
use crate::intervals::IntervalSet;

fn check_lengths(predictions: &[IntervalSet], labels: &[f64]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// Fraction of labels inside their prediction set.
pub fn picp(predictions: &[IntervalSet], labels: &[f64]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let covered = predictions
        .iter()
        .zip(labels)
        .filter(|(p, &y)| p.contains(y))
        .count();
    Ok(covered as f64 / labels.len() as f64)
}

/// Mean total width of the prediction sets.
pub fn mpiw(predictions: &[IntervalSet]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(predictions
        .iter()
        .map(IntervalSet::total_width)
        .sum::<f64>()
        / predictions.len() as f64)
}

/// Largest pairwise difference of per-group coverage.
pub fn picp_gap(per_group: &[f64]) -> Result<f64> {
    if per_group.len() < 2 {
        return Err(Error::TooFewGroups {
            needed: 2,
            got: per_group.len(),
        });
    }
    let max = per_group.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = per_group.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group: usize,
    pub n: usize,
    pub covered: usize,
    pub picp: f64,
    pub mpiw: f64,
    pub hull_mpiw: f64,
    /// Unweighted mean of this group's per-bin coverage over non-empty bins.
    pub picp_bin_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_test: usize,
    pub covered: usize,
    pub picp: f64,
    pub picp_percent: f64,
    pub mpiw: f64,
    pub hull_mpiw: f64,
    /// Absent with fewer than two groups.
    pub picp_gap: Option<f64>,
    pub per_group: Vec<GroupReport>,
    pub bin_bounds: Vec<f64>,
    /// `beta[m][s]` on the test labels; `None` for empty cells.
    pub beta: Vec<Vec<Option<f64>>>,
    pub bin_counts: Vec<Vec<usize>>,
    pub bin_covered: Vec<Vec<usize>>,
    pub fallback_count: usize,
    pub mae: f64,
    pub rmse: f64,
}

/// Scores `predictions` against the test observations. Bins for the
/// coverage matrix come from `partition`, using the true test labels.
pub fn evaluate(
    test: &[Observation],
    predictions: &[IntervalSet],
    partition: &BinPartition,
    group_count: usize,
) -> Result<EvalReport> {
    let labels: Vec<f64> = test.iter().map(|o| o.y).collect();
    check_lengths(predictions, &labels)?;
    let m_count = partition.len();
    let mut bin_counts = vec![vec![0usize; group_count]; m_count];
    let mut bin_covered = vec![vec![0usize; group_count]; m_count];
    let mut g_n = vec![0usize; group_count];
    let mut g_cov = vec![0usize; group_count];
    let mut g_width = vec![0.0f64; group_count];
    let mut g_hull = vec![0.0f64; group_count];
    let (mut abs_err, mut sq_err) = (0.0, 0.0);
    let mut fallback_count = 0;

    for (row, (o, p)) in test.iter().zip(predictions).enumerate() {
        let s = o.group.0;
        if s >= group_count {
            return Err(Error::UnknownGroup {
                row: row + 1,
                group: s,
                declared: group_count,
            });
        }
        let m = partition.assign(o.y)?;
        let hit = p.contains(o.y);
        bin_counts[m][s] += 1;
        g_n[s] += 1;
        if hit {
            bin_covered[m][s] += 1;
            g_cov[s] += 1;
        }
        g_width[s] += p.total_width();
        g_hull[s] += p.hull_width();
        fallback_count += usize::from(p.is_fallback());
        let e = o.y - o.band.mid;
        abs_err += e.abs();
        sq_err += e * e;
    }

    let n = test.len();
    let covered: usize = g_cov.iter().sum();
    let beta: Vec<Vec<Option<f64>>> = bin_covered
        .iter()
        .zip(&bin_counts)
        .map(|(c, k)| {
            c.iter()
                .zip(k)
                .map(|(&c, &k)| (k > 0).then(|| c as f64 / k as f64))
                .collect()
        })
        .collect();
    let per_group: Vec<GroupReport> = (0..group_count)
        .map(|s| {
            let rates: Vec<f64> = beta.iter().filter_map(|row| row[s]).collect();
            let nf = g_n[s] as f64;
            GroupReport {
                group: s,
                n: g_n[s],
                covered: g_cov[s],
                picp: if g_n[s] > 0 {
                    g_cov[s] as f64 / nf
                } else {
                    0.0
                },
                mpiw: if g_n[s] > 0 { g_width[s] / nf } else { 0.0 },
                hull_mpiw: if g_n[s] > 0 { g_hull[s] / nf } else { 0.0 },
                picp_bin_mean: if rates.is_empty() {
                    0.0
                } else {
                    rates.iter().sum::<f64>() / rates.len() as f64
                },
            }
        })
        .collect();
    let present: Vec<f64> = per_group
        .iter()
        .filter(|g| g.n > 0)
        .map(|g| g.picp)
        .collect();
    let picp = covered as f64 / n as f64;
    Ok(EvalReport {
        n_test: n,
        covered,
        picp,
        picp_percent: 100.0 * picp,
        mpiw: g_width.iter().sum::<f64>() / n as f64,
        hull_mpiw: g_hull.iter().sum::<f64>() / n as f64,
        picp_gap: picp_gap(&present).ok(),
        per_group,
        bin_bounds: partition.bounds().to_vec(),
        beta,
        bin_counts,
        bin_covered,
        fallback_count,
        mae: abs_err / n as f64,
        rmse: (sq_err / n as f64).sqrt(),
    })
}

impl EvalReport {
    /// `sum_s n_s picp_s / N`, recombined from the group breakdown.
    pub fn recombined_picp(&self) -> f64 {
        self.per_group.iter().map(|g| g.covered).sum::<usize>() as f64 / self.n_test as f64
    }

    pub fn to_canonical_json(&self) -> Result<String> {
        Ok(canonical_json(&serde_json::to_value(self)?))
    }
}

/// JSON with sorted keys and every non-integer number printed with six
/// decimals, so equal inputs always give byte-identical text.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, 0, &mut out);
    out.push('\n');
    out
}

fn write_canonical(value: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize| "  ".repeat(n);
    match value {
        Value::Null | Value::Bool(_) | Value::String(_) => out.push_str(&value.to_string()),
        Value::Number(num) => match (num.as_i64(), num.as_u64(), num.as_f64()) {
            (Some(i), _, _) if !num.is_f64() => out.push_str(&i.to_string()),
            (_, Some(u), _) if !num.is_f64() => out.push_str(&u.to_string()),
            (_, _, Some(f)) => out.push_str(&format!("{f:.6}")),
            _ => out.push_str(&num.to_string()),
        },
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_canonical(item, indent + 1, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, key) in keys.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&Value::String((*key).clone()).to_string());
                out.push_str(": ");
                write_canonical(&map[*key], indent + 1, out);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
    }
}
