//! End-to-end synthetic trials: simulate, fit, calibrate, evaluate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::calibrator::{CalibrationConfig, Calibrator, Method};
use crate::data::{Dataset, LabelDomain, Observation};
use crate::error::{Error, Result};
use crate::fair::OptimizerConfig;
use crate::metrics::{evaluate, EvalReport};
use crate::quantile::{fit, FitConfig, QuantileLevels, QuantileModel};
use crate::synthetic::{generate_synthetic, SyntheticSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub group_probs: Vec<f64>,
    pub noise_scale: Vec<f64>,
    pub feature_dim: usize,
    pub label_domain: LabelDomain,
    pub signal_scale: f64,
    pub n_train: usize,
    pub n_cal: usize,
    pub n_test: usize,
    pub alpha: f64,
    pub bins: usize,
    pub fit: FitConfig,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl TrialConfig {
    /// Two balanced groups with noise ratio 2:1.
    pub fn heteroscedastic(seed: u64) -> Self {
        let base = SyntheticSpec::heteroscedastic(1, seed);
        Self {
            group_probs: base.group_probs,
            noise_scale: base.noise_scale,
            feature_dim: base.feature_dim,
            label_domain: base.label_domain,
            signal_scale: base.signal_scale,
            n_train: 2000,
            n_cal: 4000,
            n_test: 4000,
            alpha: 0.1,
            bins: 4,
            fit: FitConfig {
                seed,
                ..FitConfig::default()
            },
            optimizer: OptimizerConfig::default(),
            seed,
        }
    }

    /// Two balanced groups drawn from the same distribution.
    pub fn exchangeable(seed: u64) -> Self {
        Self {
            noise_scale: vec![1.0, 1.0],
            n_cal: 2000,
            n_test: 2000,
            ..Self::heteroscedastic(seed)
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n: self.n_train + self.n_cal + self.n_test,
            group_probs: self.group_probs.clone(),
            feature_dim: self.feature_dim,
            noise_scale: self.noise_scale.clone(),
            label_domain: self.label_domain,
            signal_scale: self.signal_scale,
            seed: self.seed,
        }
    }

    pub fn calibration(&self) -> Result<CalibrationConfig> {
        let mut c = CalibrationConfig::new(self.alpha, self.bins, self.label_domain)?;
        c.optimizer = self.optimizer;
        Ok(c)
    }
}

/// Simulated parts, the fitted model and calibration/test observations.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub cal: Dataset,
    pub test: Dataset,
    pub model: QuantileModel,
    pub cal_obs: Vec<Observation>,
    pub test_obs: Vec<Observation>,
}

impl Prepared {
    pub fn group_count(&self) -> usize {
        self.cal.group_count()
    }
}

/// Simulates one population, cuts it into consecutive train/cal/test blocks
/// (records are i.i.d., so no shuffle is needed) and fits the quantile model.
pub fn prepare(cfg: &TrialConfig) -> Result<Prepared> {
    if cfg.n_cal == 0 {
        return Err(Error::EmptySplit("calibration"));
    }
    if cfg.n_test == 0 {
        return Err(Error::EmptySplit("test"));
    }
    if cfg.n_train == 0 {
        return Err(Error::EmptySplit("training"));
    }
    let data = generate_synthetic(&cfg.synthetic_spec())?.dataset;
    let idx: Vec<usize> = (0..data.len()).collect();
    let (tr, rest) = idx.split_at(cfg.n_train);
    let (ca, te) = rest.split_at(cfg.n_cal);
    let (train, cal, test) = (data.subset(tr), data.subset(ca), data.subset(te));
    let model = fit(&train, &QuantileLevels::for_alpha(cfg.alpha)?, &cfg.fit)?;
    let bands = model.bands(cfg.alpha);
    let cal_obs = cal.observations(&bands)?;
    let test_obs = test.observations(&bands)?;
    Ok(Prepared {
        train,
        cal,
        test,
        model,
        cal_obs,
        test_obs,
    })
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub prepared: Prepared,
    pub calibrators: BTreeMap<Method, Calibrator>,
    pub reports: BTreeMap<Method, EvalReport>,
}

pub fn run_trial(cfg: &TrialConfig, methods: &[Method]) -> Result<TrialOutcome> {
    let prepared = prepare(cfg)?;
    let cal_cfg = cfg.calibration()?;
    let s = prepared.group_count();
    let mut calibrators = BTreeMap::new();
    let mut reports = BTreeMap::new();
    for &m in methods {
        let c = Calibrator::fit(m, &prepared.cal_obs, s, &cal_cfg)?;
        let preds = c.predict_all(&prepared.test_obs)?;
        reports.insert(m, evaluate(&prepared.test_obs, &preds, &c.partition()?, s)?);
        calibrators.insert(m, c);
    }
    Ok(TrialOutcome {
        prepared,
        calibrators,
        reports,
    })
}
