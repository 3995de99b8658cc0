//! Multi-quantile linear regression trained on the pinball loss.
//!
//! One weight row per level, all levels sharing the same standardized
//! features. Outputs are sorted before use so bands never cross.

use serde::{Deserialize, Serialize};

use crate::data::{Band, BandPredictor, Dataset, Record};
use crate::error::{Error, Result};

const LEVEL_TOL: f64 = 1e-12;

/// Strictly ascending quantile levels in `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct QuantileLevels(Vec<f64>);

impl QuantileLevels {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidConfig("no quantile levels".into()));
        }
        for &q in &levels {
            check_level(q)?;
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "quantile levels {levels:?} are not strictly ascending"
            )));
        }
        Ok(Self(levels))
    }

    /// The three levels calibration consumes: `{alpha/2, 0.5, 1 - alpha/2}`.
    pub fn for_alpha(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Self::new(vec![alpha / 2.0, 0.5, 1.0 - alpha / 2.0])
    }

    /// The 0.01..0.99 grid merged with the levels required for `alpha`.
    pub fn grid99(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let mut levels: Vec<f64> = (1..=99).map(|i| i as f64 / 100.0).collect();
        levels.push(alpha / 2.0);
        levels.push(1.0 - alpha / 2.0);
        levels.sort_by(f64::total_cmp);
        levels.dedup_by(|a, b| (*a - *b).abs() <= LEVEL_TOL);
        Self::new(levels)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn position(&self, q: f64) -> Option<usize> {
        self.0.iter().position(|&l| (l - q).abs() <= LEVEL_TOL)
    }
}

impl TryFrom<Vec<f64>> for QuantileLevels {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<QuantileLevels> for Vec<f64> {
    fn from(l: QuantileLevels) -> Self {
        l.0
    }
}

pub(crate) fn check_level(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLevel(q))
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "alpha {alpha} must lie in (0, 1)"
        )))
    }
}

/// Pinball (check) loss of predicting `y_hat` for label `y` at level `q`.
pub fn pinball_loss(y: f64, y_hat: f64, q: f64) -> Result<f64> {
    check_level(q)?;
    Ok(pinball_unchecked(y, y_hat, q))
}

#[inline]
fn pinball_unchecked(y: f64, y_hat: f64, q: f64) -> f64 {
    let r = y - y_hat;
    if r >= 0.0 {
        q * r
    } else {
        (q - 1.0) * r
    }
}

/// Subgradient of the pinball loss with respect to the prediction. Zero is
/// chosen at the kink.
pub fn pinball_subgradient(y: f64, y_hat: f64, q: f64) -> Result<f64> {
    check_level(q)?;
    Ok(subgradient_unchecked(y, y_hat, q))
}

#[inline]
fn subgradient_unchecked(y: f64, y_hat: f64, q: f64) -> f64 {
    if y > y_hat {
        -q
    } else if y < y_hat {
        1.0 - q
    } else {
        0.0
    }
}

/// Empirical `q`-quantile by order statistic `ceil(n q)`, used to seed biases.
fn sample_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let k = ((n as f64 * q).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Initial step size; adapted per level by backtracking.
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lr: 0.5,
            epochs: 400,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileModel {
    pub levels: QuantileLevels,
    /// `[n_levels][feature_dim]`
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub feature_dim: usize,
    pub seed: u64,
    /// Mean pinball loss across levels after each epoch.
    pub loss_trace: Vec<f64>,
}

/// Features centred and scaled to unit variance; constant columns are only centred.
struct Standardized {
    rows: Vec<Vec<f64>>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardized {
    fn new(records: &[Record], d: usize) -> Self {
        let n = records.len() as f64;
        let mut mean = vec![0.0; d];
        for r in records {
            for (m, x) in mean.iter_mut().zip(&r.features) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in records {
            for j in 0..d {
                var[j] += (r.features[j] - mean[j]).powi(2);
            }
        }
        let scale: Vec<f64> = var
            .iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        let rows = records
            .iter()
            .map(|r| {
                (0..d)
                    .map(|j| (r.features[j] - mean[j]) / scale[j])
                    .collect()
            })
            .collect();
        Self { rows, mean, scale }
    }
}

struct LevelFit<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    q: f64,
}

impl LevelFit<'_> {
    fn loss(&self, w: &[f64], b: f64) -> f64 {
        let total: f64 = self
            .x
            .iter()
            .zip(self.y)
            .map(|(x, &y)| pinball_unchecked(y, dot(w, x) + b, self.q))
            .sum();
        total / self.y.len() as f64
    }

    fn gradient(&self, w: &[f64], b: f64) -> (Vec<f64>, f64) {
        let mut gw = vec![0.0; w.len()];
        let mut gb = 0.0;
        for (x, &y) in self.x.iter().zip(self.y) {
            let g = subgradient_unchecked(y, dot(w, x) + b, self.q);
            if g != 0.0 {
                gb += g;
                for (acc, xi) in gw.iter_mut().zip(x) {
                    *acc += g * xi;
                }
            }
        }
        let n = self.y.len() as f64;
        gw.iter_mut().for_each(|v| *v /= n);
        (gw, gb / n)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits one linear model per level by full-batch subgradient descent.
///
/// Each level takes a backtracking step per epoch: a step is accepted only if
/// it does not raise that level's loss, so the recorded trace never increases.
pub fn fit(train: &Dataset, levels: &QuantileLevels, cfg: &FitConfig) -> Result<QuantileModel> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(cfg.lr.is_finite() && cfg.lr > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "learning rate {} must be positive",
            cfg.lr
        )));
    }
    let d = train.feature_dim();
    let std = Standardized::new(train.records(), d);
    let y = train.labels();
    let mut sorted = y.clone();
    sorted.sort_by(f64::total_cmp);

    let k = levels.len();
    let mut weights = vec![vec![0.0; d]; k];
    let mut bias: Vec<f64> = levels
        .as_slice()
        .iter()
        .map(|&q| sample_quantile(&sorted, q))
        .collect();
    let fits: Vec<LevelFit> = levels
        .as_slice()
        .iter()
        .map(|&q| LevelFit {
            x: &std.rows,
            y: &y,
            q,
        })
        .collect();
    let mut losses: Vec<f64> = fits
        .iter()
        .zip(&weights)
        .zip(&bias)
        .map(|((f, w), &b)| f.loss(w, b))
        .collect();
    let mut lrs = vec![cfg.lr; k];
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        for l in 0..k {
            let (gw, gb) = fits[l].gradient(&weights[l], bias[l]);
            if gb == 0.0 && gw.iter().all(|g| *g == 0.0) {
                continue;
            }
            let mut lr = lrs[l];
            for _ in 0..40 {
                let cand_w: Vec<f64> = weights[l]
                    .iter()
                    .zip(&gw)
                    .map(|(w, g)| w - lr * g)
                    .collect();
                let cand_b = bias[l] - lr * gb;
                let cand_loss = fits[l].loss(&cand_w, cand_b);
                if cand_loss <= losses[l] {
                    weights[l] = cand_w;
                    bias[l] = cand_b;
                    losses[l] = cand_loss;
                    lr *= 1.1;
                    break;
                }
                lr *= 0.5;
            }
            // A failed search leaves the level in place; restart from the base rate.
            lrs[l] = if lr < cfg.lr * 1e-12 { cfg.lr } else { lr };
        }
        let mean_loss = losses.iter().sum::<f64>() / k as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: mean_loss,
            });
        }
        loss_trace.push(mean_loss);
    }

    // Undo the standardization.
    for (w, b) in weights.iter_mut().zip(bias.iter_mut()) {
        let mut shift = 0.0;
        for ((wj, scale), mean) in w.iter_mut().zip(&std.scale).zip(&std.mean) {
            *wj /= scale;
            shift += *wj * mean;
        }
        *b -= shift;
    }
    let model = QuantileModel {
        levels: levels.clone(),
        weights,
        bias,
        feature_dim: d,
        seed: cfg.seed,
        loss_trace,
    };
    model.check_finite()?;
    Ok(model)
}

impl QuantileModel {
    /// Model with the given parameters and an empty loss trace.
    pub fn from_parts(
        levels: QuantileLevels,
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != levels.len() || bias.len() != levels.len() {
            return Err(Error::Shape(format!(
                "{} levels but {} weight rows and {} biases",
                levels.len(),
                weights.len(),
                bias.len()
            )));
        }
        let feature_dim = weights.first().map_or(0, Vec::len);
        if weights.iter().any(|w| w.len() != feature_dim) {
            return Err(Error::Shape("ragged weight matrix".into()));
        }
        let model = Self {
            levels,
            weights,
            bias,
            feature_dim,
            seed: 0,
            loss_trace: Vec::new(),
        };
        model.check_finite()?;
        Ok(model)
    }

    fn check_finite(&self) -> Result<()> {
        let ok = self
            .bias
            .iter()
            .chain(self.weights.iter().flatten())
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::NonFinite("model parameters".into()))
        }
    }

    /// Raw per-level outputs, before rearrangement.
    pub fn predict_raw(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                got: features.len(),
            });
        }
        let out: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| dot(w, features) + b)
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prediction".into()));
        }
        Ok(out)
    }

    /// Per-level predictions, sorted so they are non-decreasing in level.
    pub fn predict(&self, features: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.predict_raw(features)?;
        out.sort_by(f64::total_cmp);
        Ok(out)
    }

    /// The `alpha/2`, median and `1 - alpha/2` predictions.
    pub fn band(&self, features: &[f64], alpha: f64) -> Result<Band> {
        let idx = |q: f64| {
            self.levels
                .position(q)
                .ok_or_else(|| Error::InvalidConfig(format!("model has no quantile level {q}")))
        };
        let (lo, mid, hi) = (idx(alpha / 2.0)?, idx(0.5)?, idx(1.0 - alpha / 2.0)?);
        let p = self.predict(features)?;
        Ok(Band {
            lo: p[lo],
            mid: p[mid],
            hi: p[hi],
        })
    }

    pub fn bands(&self, alpha: f64) -> ModelBands<'_> {
        ModelBands { model: self, alpha }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(s)?;
        if model.weights.len() != model.levels.len()
            || model.bias.len() != model.levels.len()
            || model.weights.iter().any(|w| w.len() != model.feature_dim)
        {
            return Err(Error::Shape("model artifact dimensions disagree".into()));
        }
        model.check_finite()?;
        Ok(model)
    }
}

/// [`BandPredictor`] backed by a fitted model.
#[derive(Debug, Clone, Copy)]
pub struct ModelBands<'a> {
    model: &'a QuantileModel,
    alpha: f64,
}

impl BandPredictor for ModelBands<'_> {
    fn band(&self, record: &Record) -> Result<Band> {
        self.model.band(&record.features, self.alpha)
    }
}
