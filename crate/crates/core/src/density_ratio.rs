//! Exposure density ratio `r(a, w) = g_d(a | w) / g(a | w)`.
//!
//! For a continuous exposure the ratio comes from a classifier trained to
//! tell shifted pairs `(d(a_i), w_i)` (label 1) from observed pairs
//! `(a_i, w_i)` (label 0): with balanced classes `r = p / (1 - p)`. For a
//! binary exposure it is computed directly from a propensity model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{fit_ensemble, EnsembleSpec, Features, FittedLearner, Loss, P_MIN};
use crate::policy::PointShift;
use crate::stats::quantile_sorted;

pub const EXPOSURE_FEATURE: &str = "A";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioMethod {
    /// 2n-sample probabilistic classification; continuous exposures.
    #[default]
    Classification,
    /// `P(d(A) = a | w) / P(A = a | w)` from a propensity model; binary exposures.
    BinaryPropensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatioConfig {
    pub method: RatioMethod,
    pub r_min: f64,
    pub r_max: f64,
    pub p_min: f64,
    /// Fraction truncated at `r_max` above which positivity is flagged.
    pub violation_threshold: f64,
    /// Positivity is also flagged when the mean ratio over observed units
    /// falls below this. The ratio integrates to 1 under the observed law
    /// only when every shifted value has support, so a deficit measures
    /// shifted mass that lands where no unit was observed.
    pub min_mean_ratio: f64,
}

impl Default for RatioConfig {
    fn default() -> Self {
        RatioConfig {
            method: RatioMethod::Classification,
            r_min: 0.01,
            r_max: 100.0,
            p_min: P_MIN,
            violation_threshold: 0.02,
            min_mean_ratio: 0.75,
        }
    }
}

impl RatioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_min > 0.0 && self.r_min <= 1.0 && self.r_max >= 1.0 && self.r_max.is_finite()) {
            return Err(Error::Config(format!(
                "ratio bounds need 0 < r_min <= 1 <= r_max < inf, got [{}, {}]",
                self.r_min, self.r_max
            )));
        }
        if !(0.0..=1.0).contains(&self.min_mean_ratio) {
            return Err(Error::Config(format!("min_mean_ratio must lie in [0, 1], got {}", self.min_mean_ratio)));
        }
        if !(self.p_min > 0.0 && self.p_min < 0.5) {
            return Err(Error::Config(format!("p_min must lie in (0, 0.5), got {}", self.p_min)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DensityRatioModel {
    classifier: FittedLearner,
    shift: PointShift,
    config: RatioConfig,
    covariate_names: Vec<String>,
}

/// One ratio evaluation before and after truncation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioValue {
    pub raw: f64,
    pub r: f64,
}

fn with_exposure(w: &Features, a: &[f64]) -> Features {
    let p = w.n_cols();
    let mut names = w.names().to_vec();
    names.push(EXPOSURE_FEATURE.to_string());
    let mut data = Vec::with_capacity(w.n_rows() * (p + 1));
    for (i, &ai) in a.iter().enumerate() {
        data.extend_from_slice(w.row(i));
        data.push(ai);
    }
    Features::new(names, w.n_rows(), data).expect("shape is consistent")
}

/// Fits the ratio model on covariates `w` and exposures `a`.
pub fn fit_ratio(
    w: &Features,
    a: &[f64],
    shift: &PointShift,
    learner: &EnsembleSpec,
    config: &RatioConfig,
    seed: u64,
) -> Result<DensityRatioModel> {
    config.validate()?;
    if learner.loss != Loss::LogLoss {
        return Err(Error::Config("ratio learner must use log_loss".into()));
    }
    if w.n_rows() != a.len() {
        return Err(Error::InvalidInput("covariate rows and exposures differ in length".into()));
    }
    if a.len() < 20 {
        return Err(Error::InvalidInput(format!("density ratio needs n >= 20, got {}", a.len())));
    }
    let classifier = match config.method {
        RatioMethod::Classification => {
            let shifted = shift.apply_all(a)?;
            let x = with_exposure(w, a).vstack(&with_exposure(w, &shifted))?;
            let mut label = vec![0.0; a.len()];
            label.extend(std::iter::repeat_n(1.0, a.len()));
            fit_ensemble(learner, &x, &label, None, seed)?
        }
        RatioMethod::BinaryPropensity => {
            if a.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidInput("binary_propensity ratio needs a 0/1 exposure".into()));
            }
            for v in [0.0, 1.0] {
                let d = shift.apply(v)?;
                if d != 0.0 && d != 1.0 {
                    return Err(Error::InvalidInput(format!("shift maps {v} to non-binary {d}")));
                }
            }
            fit_ensemble(learner, w, a, None, seed)?
        }
    };
    Ok(DensityRatioModel {
        classifier,
        shift: *shift,
        config: config.clone(),
        covariate_names: w.names().to_vec(),
    })
}

impl DensityRatioModel {
    pub fn config(&self) -> &RatioConfig {
        &self.config
    }

    pub fn classifier(&self) -> &FittedLearner {
        &self.classifier
    }

    pub fn evaluate(&self, w: &Features, a: &[f64]) -> Result<Vec<RatioValue>> {
        if w.names() != self.covariate_names.as_slice() {
            return Err(Error::InvalidInput("ratio covariates differ from training covariates".into()));
        }
        let c = &self.config;
        match c.method {
            RatioMethod::Classification => {
                let p = self.classifier.predict(&with_exposure(w, a))?;
                Ok(p.into_iter()
                    .map(|p| {
                        let p = p.clamp(c.p_min, 1.0 - c.p_min);
                        let raw = p / (1.0 - p);
                        RatioValue { raw, r: raw.clamp(c.r_min, c.r_max) }
                    })
                    .collect())
            }
            RatioMethod::BinaryPropensity => {
                let g1 = self.classifier.predict(w)?;
                let (d0, d1) = (self.shift.apply(0.0)?, self.shift.apply(1.0)?);
                a.iter()
                    .zip(g1)
                    .map(|(&ai, g1)| {
                        let g1 = g1.clamp(c.p_min, 1.0 - c.p_min);
                        let g = |v: f64| if v == 1.0 { g1 } else { 1.0 - g1 };
                        let mass = [(0.0, d0), (1.0, d1)]
                            .iter()
                            .filter(|(_, d)| *d == ai)
                            .map(|(src, _)| g(*src))
                            .sum::<f64>();
                        let raw = mass / g(ai);
                        Ok(RatioValue { raw, r: raw })
                    })
                    .collect()
            }
        }
    }

    pub fn predict(&self, w: &Features, a: &[f64]) -> Result<Vec<f64>> {
        Ok(self.evaluate(w, a)?.into_iter().map(|v| v.r).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityProfile {
    pub n: usize,
    pub mean: f64,
    pub max: f64,
    pub quantiles: BTreeMap<String, f64>,
    pub fraction_truncated_high: f64,
    pub fraction_truncated_low: f64,
    pub fraction_truncated: f64,
    pub threshold: f64,
    pub min_mean_ratio: Option<f64>,
    pub violation: bool,
}

/// Summarizes ratio values. `violation` when the fraction truncated at the
/// upper bound exceeds `threshold` or the mean ratio is below
/// `min_mean_ratio`. Truncation at the lower bound is reported but not
/// flagged on its own: `r = 0` is correct wherever the shifted density
/// vanishes.
pub fn profile_values(values: &[RatioValue], threshold: f64, min_mean_ratio: Option<f64>) -> PositivityProfile {
    let n = values.len();
    let mut r: Vec<f64> = values.iter().map(|v| v.r).collect();
    r.sort_by(f64::total_cmp);
    let high = values.iter().filter(|v| v.raw > v.r).count() as f64 / n.max(1) as f64;
    let low = values.iter().filter(|v| v.raw < v.r).count() as f64 / n.max(1) as f64;
    let quantiles = if n == 0 {
        BTreeMap::new()
    } else {
        [0.0, 0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99, 1.0]
            .iter()
            .map(|&q| (format!("q{:02}", (q * 100.0f64).round() as u32), quantile_sorted(&r, q)))
            .collect()
    };
    let mean = crate::stats::mean(&r);
    PositivityProfile {
        n,
        mean,
        max: r.last().copied().unwrap_or(f64::NAN),
        quantiles,
        fraction_truncated_high: high,
        fraction_truncated_low: low,
        fraction_truncated: high + low,
        threshold,
        min_mean_ratio,
        violation: high > threshold || min_mean_ratio.is_some_and(|m| mean < m),
    }
}

pub fn positivity_profile(model: &DensityRatioModel, w: &Features, a: &[f64]) -> Result<PositivityProfile> {
    let c = &model.config;
    Ok(profile_values(&model.evaluate(w, a)?, c.violation_threshold, Some(c.min_mean_ratio)))
}
