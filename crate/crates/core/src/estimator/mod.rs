//! Cross-fitted targeted estimators of the mean outcome under a shift.
//!
//! [`estimate_point_shift`] handles a continuous exposure shifted by a
//! [`PointShift`](crate::policy::PointShift); [`estimate_longitudinal_delay`]
//! handles a binary never-repealed exposure under a delayed-enactment policy.

mod folds;
mod identification;
mod longitudinal;
mod point;
mod tmle;

use serde::{Deserialize, Serialize};

use crate::density_ratio::{PositivityProfile, RatioConfig};
use crate::error::{Error, Result};
use crate::inference::{cluster_robust_se, iid_se, ClusteredVariance, VarianceMethod};
use crate::learners::EnsembleSummary;

pub use folds::cluster_folds;
pub use identification::{
    identification_checks_longitudinal, identification_checks_point, AssumptionCheck, CheckStatus,
    IdentificationReport,
};
pub use longitudinal::{estimate_longitudinal_delay, LongitudinalDiagnostics};
pub use point::{estimate_point_shift, PointDiagnostics};
pub use tmle::solve_fluctuation;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targeting {
    /// Logistic fluctuation on the [0, 1]-scaled outcome.
    #[default]
    Tmle,
    /// Plug-in plus mean weighted residual, without a fluctuation.
    OneStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub folds: usize,
    pub seed: u64,
    pub targeting: Targeting,
    pub ratio: RatioConfig,
    /// Propensity clip for binary exposures.
    pub p_min: f64,
    /// Outcome-regression predictions on the scaled outcome are clipped to
    /// `[outcome_clip, 1 - outcome_clip]`.
    pub outcome_clip: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            folds: 5,
            seed: 0,
            targeting: Targeting::Tmle,
            ratio: RatioConfig::default(),
            p_min: crate::learners::P_MIN,
            outcome_clip: 1e-5,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config("folds must be >= 2".into()));
        }
        if !(self.p_min > 0.0 && self.p_min < 0.5) {
            return Err(Error::Config(format!("p_min must lie in (0, 0.5), got {}", self.p_min)));
        }
        if !(self.outcome_clip > 0.0 && self.outcome_clip < 0.5) {
            return Err(Error::Config("outcome_clip must lie in (0, 0.5)".into()));
        }
        self.ratio.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EstimandKind {
    PointShift,
    LongitudinalDelay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostics {
    Point(PointDiagnostics),
    Longitudinal(LongitudinalDiagnostics),
    /// Constant outcome or identity policy; no nuisance models were fitted.
    Degenerate { reason: String },
}

impl Diagnostics {
    pub fn positivity(&self) -> Option<&PositivityProfile> {
        match self {
            Diagnostics::Point(d) => Some(&d.positivity),
            Diagnostics::Longitudinal(d) => Some(&d.positivity),
            Diagnostics::Degenerate { .. } => None,
        }
    }
}

/// Fold-level nuisance summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub outcome_ensemble: Option<EnsembleSummary>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimand: EstimandKind,
    /// Estimate of `E(Y_d)`.
    pub psi_hat: f64,
    /// `psi_hat - mean(Y)`.
    pub contrast_hat: f64,
    pub mean_y: f64,
    pub n: usize,
    pub n_clusters: usize,
    pub folds: usize,
    /// Influence-curve values of `psi_hat`.
    #[serde(skip)]
    pub ic_values: Vec<f64>,
    /// Influence-curve values of the contrast: `IC - (Y - mean(Y))`.
    #[serde(skip)]
    pub ic_contrast: Vec<f64>,
    #[serde(skip)]
    pub cluster_index: Vec<usize>,
    pub mean_ic: f64,
    pub diagnostics: Diagnostics,
}

impl EstimateReport {
    pub(crate) fn assemble(
        estimand: EstimandKind,
        psi_hat: f64,
        y: &[f64],
        ic_values: Vec<f64>,
        cluster_index: Vec<usize>,
        folds: usize,
        diagnostics: Diagnostics,
    ) -> Self {
        let mean_y = crate::stats::mean(y);
        let ic_contrast = ic_values.iter().zip(y).map(|(ic, yi)| ic - (yi - mean_y)).collect();
        let n_clusters = cluster_index.iter().copied().max().map_or(0, |m| m + 1);
        EstimateReport {
            estimand,
            psi_hat,
            contrast_hat: psi_hat - mean_y,
            mean_y,
            n: y.len(),
            n_clusters,
            folds,
            mean_ic: crate::stats::mean(&ic_values),
            ic_values,
            ic_contrast,
            cluster_index,
            diagnostics,
        }
    }

    /// Standard errors and intervals for the contrast and for `psi_hat`.
    pub fn variance(&self, method: VarianceMethod, alpha: f64) -> Result<(ClusteredVariance, ClusteredVariance)> {
        match method {
            VarianceMethod::ClusterRobust => Ok((
                cluster_robust_se(&self.ic_contrast, &self.cluster_index, self.contrast_hat, alpha)?,
                cluster_robust_se(&self.ic_values, &self.cluster_index, self.psi_hat, alpha)?,
            )),
            VarianceMethod::Iid => Ok((
                iid_se(&self.ic_contrast, self.contrast_hat, alpha)?,
                iid_se(&self.ic_values, self.psi_hat, alpha)?,
            )),
        }
    }
}

/// Maps `y` to `[0, 1]` by its observed range.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Scale {
    lo: f64,
    range: f64,
}

impl Scale {
    /// `None` when `y` is constant.
    pub(crate) fn fit(y: &[f64]) -> Option<Scale> {
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (hi > lo).then_some(Scale { lo, range: hi - lo })
    }

    pub(crate) fn forward(&self, y: f64) -> f64 {
        ((y - self.lo) / self.range).clamp(0.0, 1.0)
    }

    pub(crate) fn back(&self, v: f64) -> f64 {
        self.lo + self.range * v
    }

    pub(crate) fn range(&self) -> f64 {
        self.range
    }
}

#[cfg(test)]
mod tests;
