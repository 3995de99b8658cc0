//! One entry point for the four calibration methods and their JSON artifacts.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::binning::{equal_mass_bins, BinPartition};
use crate::conformal::{cqr_calibrate, groupwise_calibrate, split_cp_calibrate, GlobalThreshold};
use crate::data::{Band, GroupId, LabelDomain, Observation};
use crate::error::{Error, Result};
use crate::fair::{
    eoc_optimize, init_thresholds, CoverageWeighting, OptimizerConfig, ThresholdTable, TraceSummary,
};
use crate::intervals::{predict_interval, IntervalSet};
use crate::quantile::check_alpha;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Split conformal on absolute residuals around the median.
    Cp,
    /// Conformalized quantile regression with one global shift.
    Cqr,
    /// CQR with one shift per group.
    CqrGroupwise,
    /// Per-(bin, group) shifts tuned for equal group coverage.
    Fuq,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Cp, Method::Cqr, Method::CqrGroupwise, Method::Fuq];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cp => "cp",
            Method::Cqr => "cqr",
            Method::CqrGroupwise => "cqr_groupwise",
            Method::Fuq => "fuq",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown method `{s}` (expected cp, cqr, cqr_groupwise or fuq)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub alpha: f64,
    /// Number of label bins for `fuq`.
    pub bins: usize,
    pub domain: LabelDomain,
    pub optimizer: OptimizerConfig,
}

impl CalibrationConfig {
    pub fn new(alpha: f64, bins: usize, domain: LabelDomain) -> Result<Self> {
        check_alpha(alpha)?;
        if bins == 0 {
            return Err(Error::InvalidConfig(
                "number of bins must be at least 1".into(),
            ));
        }
        Ok(Self {
            alpha,
            bins,
            domain,
            optimizer: OptimizerConfig::default(),
        })
    }
}

/// A fitted calibration, ready to turn bands into prediction sets.
#[derive(Debug, Clone, PartialEq)]
pub enum Calibrator {
    SplitCp {
        threshold: GlobalThreshold,
        domain: LabelDomain,
    },
    Table {
        method: Method,
        table: ThresholdTable,
        n_cal: Vec<usize>,
        trace: Option<TraceSummary>,
    },
}

impl Calibrator {
    pub fn fit(
        method: Method,
        cal: &[Observation],
        group_count: usize,
        cfg: &CalibrationConfig,
    ) -> Result<Self> {
        if cal.is_empty() {
            return Err(Error::EmptySplit("calibration"));
        }
        let alpha = cfg.alpha;
        let whole =
            || BinPartition::from_bounds(vec![cfg.domain.min, cfg.domain.max], vec![cal.len()]);
        let mut n_cal = vec![0usize; group_count];
        for (row, o) in cal.iter().enumerate() {
            *n_cal.get_mut(o.group.0).ok_or(Error::UnknownGroup {
                row: row + 1,
                group: o.group.0,
                declared: group_count,
            })? += 1;
        }
        match method {
            Method::Cp => Ok(Calibrator::SplitCp {
                threshold: split_cp_calibrate(cal, alpha)?,
                domain: cfg.domain,
            }),
            Method::Cqr => {
                let g = cqr_calibrate(cal, alpha)?;
                let table = ThresholdTable::uniform(alpha, g.r_hat, whole()?, group_count)?;
                Ok(Calibrator::Table {
                    method,
                    table,
                    n_cal,
                    trace: None,
                })
            }
            Method::CqrGroupwise => {
                let g = cqr_calibrate(cal, alpha)?;
                let gw = groupwise_calibrate(cal, group_count, alpha)?;
                let table = ThresholdTable::new(alpha, g.r_hat, vec![gw.r_hat], whole()?)?;
                Ok(Calibrator::Table {
                    method,
                    table,
                    n_cal: gw.n_cal,
                    trace: None,
                })
            }
            Method::Fuq => {
                let labels: Vec<f64> = cal.iter().map(|o| o.y).collect();
                let partition = equal_mass_bins(&labels, cfg.bins, cfg.domain)?;
                let (table0, _) = init_thresholds(cal, &partition, group_count, alpha)?;
                let (table, trace) = eoc_optimize(cal, &table0, &cfg.optimizer)?;
                Ok(Calibrator::Table {
                    method,
                    table,
                    n_cal,
                    trace: Some(trace.summary()),
                })
            }
        }
    }

    pub fn method(&self) -> Method {
        match self {
            Calibrator::SplitCp { .. } => Method::Cp,
            Calibrator::Table { method, .. } => *method,
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            Calibrator::SplitCp { threshold, .. } => threshold.alpha,
            Calibrator::Table { table, .. } => table.alpha,
        }
    }

    pub fn domain(&self) -> LabelDomain {
        match self {
            Calibrator::SplitCp { domain, .. } => *domain,
            Calibrator::Table { table, .. } => table.partition().domain(),
        }
    }

    pub fn table(&self) -> Option<&ThresholdTable> {
        match self {
            Calibrator::SplitCp { .. } => None,
            Calibrator::Table { table, .. } => Some(table),
        }
    }

    pub fn group_count(&self) -> Option<usize> {
        self.table().map(ThresholdTable::group_count)
    }

    /// Partition used to report per-bin coverage.
    pub fn partition(&self) -> Result<BinPartition> {
        match self {
            Calibrator::SplitCp { threshold, domain } => {
                BinPartition::from_bounds(vec![domain.min, domain.max], vec![threshold.n_cal])
            }
            Calibrator::Table { table, .. } => Ok(table.partition().clone()),
        }
    }

    pub fn predict(&self, band: &Band, group: GroupId) -> Result<IntervalSet> {
        match self {
            Calibrator::SplitCp { threshold, domain } => {
                Ok(IntervalSet::symmetric(band.mid, threshold.r_hat, *domain))
            }
            Calibrator::Table { table, .. } => predict_interval(band, group, table),
        }
    }

    pub fn predict_all(&self, obs: &[Observation]) -> Result<Vec<IntervalSet>> {
        obs.iter().map(|o| self.predict(&o.band, o.group)).collect()
    }

    pub fn to_artifact(
        &self,
        seed: Option<u64>,
        input_hashes: BTreeMap<String, String>,
    ) -> ThresholdArtifact {
        match self {
            Calibrator::SplitCp { threshold, domain } => ThresholdArtifact::Cp {
                alpha: threshold.alpha,
                r_hat: threshold.r_hat,
                n_cal: threshold.n_cal,
                label_domain: *domain,
            },
            Calibrator::Table {
                method: Method::Cqr,
                table,
                n_cal,
                ..
            } => ThresholdArtifact::Cqr {
                alpha: table.alpha,
                r_hat: table.global_r_hat,
                n_cal: n_cal.iter().sum(),
                label_domain: table.partition().domain(),
                group_count: table.group_count(),
            },
            Calibrator::Table {
                method: Method::CqrGroupwise,
                table,
                n_cal,
                ..
            } => ThresholdArtifact::CqrGroupwise {
                alpha: table.alpha,
                global_r_hat: table.global_r_hat,
                r_hat: table.rows()[0].clone(),
                n_cal: n_cal.clone(),
                label_domain: table.partition().domain(),
            },
            Calibrator::Table {
                table,
                n_cal,
                trace,
                ..
            } => ThresholdArtifact::Fuq {
                alpha: table.alpha,
                bins: table.bins(),
                groups: table.group_count(),
                bounds: table.partition().bounds().to_vec(),
                bin_counts: table.partition().counts().to_vec(),
                global_r_hat: table.global_r_hat,
                r_hat: table.rows().to_vec(),
                n_cal: n_cal.clone(),
                trace_summary: trace.clone(),
                seed,
                input_hashes,
            },
        }
    }

    pub fn from_artifact(artifact: &ThresholdArtifact) -> Result<Self> {
        let whole =
            |d: &LabelDomain, n: usize| BinPartition::from_bounds(vec![d.min, d.max], vec![n]);
        match artifact {
            ThresholdArtifact::Cp {
                alpha,
                r_hat,
                n_cal,
                label_domain,
            } => Ok(Calibrator::SplitCp {
                threshold: GlobalThreshold {
                    r_hat: *r_hat,
                    alpha: *alpha,
                    n_cal: *n_cal,
                },
                domain: LabelDomain::new(label_domain.min, label_domain.max)?,
            }),
            ThresholdArtifact::Cqr {
                alpha,
                r_hat,
                n_cal,
                label_domain,
                group_count,
            } => Ok(Calibrator::Table {
                method: Method::Cqr,
                table: ThresholdTable::uniform(
                    *alpha,
                    *r_hat,
                    whole(label_domain, *n_cal)?,
                    *group_count,
                )?,
                n_cal: vec![*n_cal],
                trace: None,
            }),
            ThresholdArtifact::CqrGroupwise {
                alpha,
                global_r_hat,
                r_hat,
                n_cal,
                label_domain,
            } => {
                let total = n_cal.iter().sum();
                Ok(Calibrator::Table {
                    method: Method::CqrGroupwise,
                    table: ThresholdTable::new(
                        *alpha,
                        *global_r_hat,
                        vec![r_hat.clone()],
                        whole(label_domain, total)?,
                    )?,
                    n_cal: n_cal.clone(),
                    trace: None,
                })
            }
            ThresholdArtifact::Fuq {
                alpha,
                bins,
                groups,
                bounds,
                bin_counts,
                global_r_hat,
                r_hat,
                n_cal,
                trace_summary,
                ..
            } => {
                let partition = BinPartition::from_bounds(bounds.clone(), bin_counts.clone())?;
                let table = ThresholdTable::new(*alpha, *global_r_hat, r_hat.clone(), partition)?;
                if table.bins() != *bins || table.group_count() != *groups {
                    return Err(Error::Shape(format!(
                        "artifact declares M={bins}, S={groups} but the table is {}x{}",
                        table.bins(),
                        table.group_count()
                    )));
                }
                Ok(Calibrator::Table {
                    method: Method::Fuq,
                    table,
                    n_cal: n_cal.clone(),
                    trace: trace_summary.clone(),
                })
            }
        }
    }
}

/// On-disk form of a calibration, tagged by method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ThresholdArtifact {
    Cp {
        alpha: f64,
        r_hat: f64,
        n_cal: usize,
        label_domain: LabelDomain,
    },
    Cqr {
        alpha: f64,
        r_hat: f64,
        n_cal: usize,
        label_domain: LabelDomain,
        group_count: usize,
    },
    CqrGroupwise {
        alpha: f64,
        global_r_hat: f64,
        r_hat: Vec<f64>,
        n_cal: Vec<usize>,
        label_domain: LabelDomain,
    },
    Fuq {
        alpha: f64,
        #[serde(rename = "M")]
        bins: usize,
        #[serde(rename = "S")]
        groups: usize,
        bounds: Vec<f64>,
        bin_counts: Vec<usize>,
        global_r_hat: f64,
        r_hat: Vec<Vec<f64>>,
        n_cal: Vec<usize>,
        trace_summary: Option<TraceSummary>,
        seed: Option<u64>,
        input_hashes: BTreeMap<String, String>,
    },
}

impl ThresholdArtifact {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Weighting names accepted in configuration.
pub fn parse_weighting(s: &str) -> Result<CoverageWeighting> {
    match s {
        "cell_conformal" | "conformal" => Ok(CoverageWeighting::CellConformal),
        "sample_mean" | "sample" => Ok(CoverageWeighting::SampleMean),
        "bin_mean" | "bin" => Ok(CoverageWeighting::BinMean),
        _ => Err(Error::InvalidConfig(format!(
            "unknown coverage weighting `{s}`"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs() -> Vec<Observation> {
        (0..40)
            .map(|i| {
                let y = 1.0 + i as f64 * 0.2;
                let w = 0.5 + (i % 7) as f64 * 0.1;
                Observation {
                    y,
                    group: GroupId(i % 2),
                    band: Band {
                        lo: y - w + 0.3,
                        mid: y - 0.05 * (i % 4) as f64,
                        hi: y + w - 0.2,
                    },
                }
            })
            .collect()
    }

    fn cfg(bins: usize) -> CalibrationConfig {
        CalibrationConfig::new(0.1, bins, LabelDomain::new(0.0, 10.0).unwrap()).unwrap()
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("bogus".parse::<Method>().is_err());
    }

    #[test]
    fn artifacts_round_trip_exactly() {
        for m in Method::ALL {
            let c = Calibrator::fit(m, &obs(), 2, &cfg(2)).unwrap();
            let art = c.to_artifact(Some(3), BTreeMap::new());
            let back = ThresholdArtifact::from_json(&art.to_json().unwrap()).unwrap();
            assert_eq!(back, art);
            let c2 = Calibrator::from_artifact(&back).unwrap();
            assert_eq!(
                c2.predict_all(&obs()).unwrap(),
                c.predict_all(&obs()).unwrap(),
                "{m}"
            );
        }
    }

    #[test]
    fn fuq_artifact_has_table_keys() {
        let c = Calibrator::fit(Method::Fuq, &obs(), 2, &cfg(2)).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&c.to_artifact(None, BTreeMap::new()).to_json().unwrap()).unwrap();
        for key in [
            "method",
            "alpha",
            "M",
            "S",
            "bounds",
            "global_r_hat",
            "r_hat",
            "trace_summary",
            "seed",
            "input_hashes",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["method"], "fuq");
    }

    #[test]
    fn cp_intervals_have_constant_width() {
        let c = Calibrator::fit(Method::Cp, &obs(), 2, &cfg(1)).unwrap();
        let widths: Vec<f64> = c
            .predict_all(&obs())
            .unwrap()
            .iter()
            .map(IntervalSet::total_width)
            .collect();
        let r = match &c {
            Calibrator::SplitCp { threshold, .. } => threshold.r_hat,
            _ => unreachable!(),
        };
        // Medians sit well inside the domain, so nothing is clipped.
        assert!(widths.iter().all(|w| (w - 2.0 * r).abs() < 1e-12));
    }
}
