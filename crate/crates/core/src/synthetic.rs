//! Seeded synthetic populations with group-dependent noise.
//!
//! Labels are `y = w . x + c + e_s` with `e_s ~ N(0, sigma_s^2)`, clipped to the
//! label domain. A model that does not see the group predicts one band for
//! everyone, so noisier groups end up under-covered.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroupId, GroupSet, LabelDomain, Record};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub group_probs: Vec<f64>,
    pub feature_dim: usize,
    pub noise_scale: Vec<f64>,
    pub label_domain: LabelDomain,
    /// Euclidean norm of the true weight vector.
    pub signal_scale: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Two equally likely groups with noise ratio 2:1 on a 0..63 scale.
    pub fn heteroscedastic(n: usize, seed: u64) -> Self {
        Self {
            n,
            group_probs: vec![0.5, 0.5],
            feature_dim: 4,
            noise_scale: vec![1.0, 2.0],
            label_domain: LabelDomain {
                min: 0.0,
                max: 63.0,
            },
            signal_scale: 3.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("synthetic n must be positive".into()));
        }
        if self.group_probs.is_empty()
            || self
                .group_probs
                .iter()
                .any(|p| !(p.is_finite() && *p >= 0.0))
        {
            return Err(Error::InvalidConfig(format!(
                "group_probs {:?} must be non-negative",
                self.group_probs
            )));
        }
        let sum: f64 = self.group_probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "group_probs sum to {sum}, expected 1"
            )));
        }
        if self.noise_scale.len() != self.group_probs.len() {
            return Err(Error::InvalidConfig(format!(
                "{} noise scales for {} groups",
                self.noise_scale.len(),
                self.group_probs.len()
            )));
        }
        if self
            .noise_scale
            .iter()
            .any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(Error::InvalidConfig("noise scales must be positive".into()));
        }
        if !(self.signal_scale.is_finite() && self.signal_scale >= 0.0) {
            return Err(Error::InvalidConfig(
                "signal_scale must be non-negative".into(),
            ));
        }
        LabelDomain::new(self.label_domain.min, self.label_domain.max)?;
        Ok(())
    }
}

/// A generated dataset plus the ground-truth regression function.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl Synthetic {
    pub fn mean(&self, features: &[f64]) -> f64 {
        self.intercept
            + self
                .weights
                .iter()
                .zip(features)
                .map(|(w, x)| w * x)
                .sum::<f64>()
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.feature_dim;

    let raw: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = raw.iter().map(|w| w * w).sum::<f64>().sqrt();
    let weights: Vec<f64> = if norm > 0.0 {
        raw.iter().map(|w| w / norm * spec.signal_scale).collect()
    } else {
        raw
    };
    let intercept = 0.5 * (spec.label_domain.min + spec.label_domain.max);
    let noise: Vec<Normal<f64>> = spec
        .noise_scale
        .iter()
        .map(|&s| Normal::new(0.0, s).map_err(|e| Error::InvalidConfig(e.to_string())))
        .collect::<Result<_>>()?;

    let mut cumulative = Vec::with_capacity(spec.group_probs.len());
    let mut acc = 0.0;
    for p in &spec.group_probs {
        acc += p;
        cumulative.push(acc);
    }

    let records = (0..spec.n)
        .map(|i| {
            let u: f64 = rng.random();
            let g = cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or(cumulative.len() - 1);
            let features: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let mean = intercept
                + weights
                    .iter()
                    .zip(&features)
                    .map(|(w, x)| w * x)
                    .sum::<f64>();
            let y = spec.label_domain.clamp(mean + noise[g].sample(&mut rng));
            Record {
                id: format!("s{i}"),
                y,
                group: GroupId(g),
                features,
                band: None,
            }
        })
        .collect();
    let dataset = Dataset::new(
        records,
        spec.label_domain,
        GroupSet::anonymous(spec.group_probs.len())?,
    )?;
    Ok(Synthetic {
        dataset,
        weights,
        intercept,
    })
}
