//! Regression and classification learners, the cross-validated stacking
//! ensemble, and permutation importance.

mod ensemble;
mod gbt;
mod glm;
mod importance;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ensemble::{fit_ensemble, project_to_simplex, EnsembleSpec, EnsembleSummary, Weighting};
pub use gbt::GbtParams;
pub use importance::{permutation_importance, Importance};

/// Dense row-major feature matrix with a name index.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    names: Vec<String>,
    n_rows: usize,
    data: Vec<f64>,
}

impl Features {
    pub fn new(names: Vec<String>, n_rows: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_rows * names.len() {
            return Err(Error::InvalidInput(format!(
                "feature data has {} values, expected {} x {}",
                data.len(),
                n_rows,
                names.len()
            )));
        }
        Ok(Features { names, n_rows, data })
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let p = names.len();
        let mut data = Vec::with_capacity(rows.len() * p);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != p {
                return Err(Error::InvalidInput(format!("row {i} has {} features, expected {p}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Features::new(names, rows.len(), data)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_cols();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.get(i, j)).collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Features {
        let mut data = Vec::with_capacity(idx.len() * self.n_cols());
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Features {
            names: self.names.clone(),
            n_rows: idx.len(),
            data,
        }
    }

    pub fn with_column(&self, j: usize, values: &[f64]) -> Features {
        let mut out = self.clone();
        let p = self.n_cols();
        for (i, &v) in values.iter().enumerate() {
            out.data[i * p + j] = v;
        }
        out
    }

    /// Stacks `other` below `self`; the name indices must agree.
    pub fn vstack(&self, other: &Features) -> Result<Features> {
        if self.names != other.names {
            return Err(Error::InvalidInput("cannot stack features with different names".into()));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Features {
            names: self.names.clone(),
            n_rows: self.n_rows + other.n_rows,
            data,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    SquaredError,
    LogLoss,
}

/// Probability floor used for log-loss and classifier outputs.
pub const P_MIN: f64 = 0.005;

impl Loss {
    /// Weighted mean loss. Log-loss clips predictions to `[P_MIN, 1 - P_MIN]`.
    pub fn eval(self, y: &[f64], pred: &[f64], w: Option<&[f64]>) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..y.len() {
            let wi = w.map_or(1.0, |w| w[i]);
            let l = match self {
                Loss::SquaredError => (y[i] - pred[i]).powi(2),
                Loss::LogLoss => {
                    let p = pred[i].clamp(P_MIN, 1.0 - P_MIN);
                    -(y[i] * p.ln() + (1.0 - y[i]) * (1.0 - p).ln())
                }
            };
            num += wi * l;
            den += wi;
        }
        num / den
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum LearnerSpec {
    InterceptOnly,
    GlmLinear {
        #[serde(default)]
        l2: f64,
    },
    GlmLogistic {
        #[serde(default)]
        l2: f64,
    },
    GbtRegress(GbtParams),
    GbtClassify(GbtParams),
}

impl LearnerSpec {
    pub fn label(&self) -> &'static str {
        match self {
            LearnerSpec::InterceptOnly => "INTERCEPT_ONLY",
            LearnerSpec::GlmLinear { .. } => "GLM_LINEAR",
            LearnerSpec::GlmLogistic { .. } => "GLM_LOGISTIC",
            LearnerSpec::GbtRegress(_) => "GBT_REGRESS",
            LearnerSpec::GbtClassify(_) => "GBT_CLASSIFY",
        }
    }

    pub fn gbt_regress() -> Self {
        LearnerSpec::GbtRegress(GbtParams::default())
    }

    pub fn gbt_classify() -> Self {
        LearnerSpec::GbtClassify(GbtParams::default())
    }

    fn validate(&self) -> Result<()> {
        match self {
            LearnerSpec::InterceptOnly => Ok(()),
            LearnerSpec::GlmLinear { l2 } | LearnerSpec::GlmLogistic { l2 } => {
                if l2.is_finite() && *l2 >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!("l2 must be >= 0, got {l2}")))
                }
            }
            LearnerSpec::GbtRegress(p) | LearnerSpec::GbtClassify(p) => p.validate(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Model {
    Constant(f64),
    Linear { intercept: f64, coef: Vec<f64> },
    Logistic { intercept: f64, coef: Vec<f64> },
    Gbt(gbt::GbtModel),
    Ensemble { members: Vec<FittedLearner>, weights: Vec<f64> },
}

/// A fitted predictor; `predict` only accepts its training feature index.
#[derive(Debug, Clone)]
pub struct FittedLearner {
    label: String,
    feature_names: Vec<String>,
    model: Model,
    flags: Vec<String>,
    ensemble: Option<EnsembleSummary>,
}

impl FittedLearner {
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Fit-time notes such as `ridge_fallback` or `constant_target`.
    pub fn flags(&self) -> &[String] {
        &self.flags
    }

    pub fn ensemble_summary(&self) -> Option<&EnsembleSummary> {
        self.ensemble.as_ref()
    }

    pub fn predict(&self, x: &Features) -> Result<Vec<f64>> {
        if x.names() != self.feature_names.as_slice() {
            return Err(Error::InvalidInput(format!(
                "predict features {:?} differ from training features {:?}",
                x.names(),
                self.feature_names
            )));
        }
        Ok((0..x.n_rows()).map(|i| self.predict_row(x.row(i))).collect())
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match &self.model {
            Model::Constant(c) => *c,
            Model::Linear { intercept, coef } => intercept + dot(coef, row),
            Model::Logistic { intercept, coef } => glm::logistic_prediction(intercept + dot(coef, row)),
            Model::Gbt(m) => m.predict_row(row),
            Model::Ensemble { members, weights } => members
                .iter()
                .zip(weights)
                .filter(|(_, &w)| w > 0.0)
                .map(|(m, w)| w * m.predict_row(row))
                .sum(),
        }
    }

    /// Linear-model coefficients on the original feature scale.
    pub fn coefficients(&self) -> Option<(f64, &[f64])> {
        match &self.model {
            Model::Linear { intercept, coef } | Model::Logistic { intercept, coef } => Some((*intercept, coef)),
            _ => None,
        }
    }

    /// Boosting training loss after each round, when the model is a GBT.
    pub fn training_loss_path(&self) -> Option<&[f64]> {
        match &self.model {
            Model::Gbt(m) => Some(m.loss_path()),
            _ => None,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn check_inputs(x: &Features, y: &[f64], w: Option<&[f64]>) -> Result<()> {
    if x.n_rows() != y.len() {
        return Err(Error::InvalidInput(format!("{} feature rows but {} targets", x.n_rows(), y.len())));
    }
    if y.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 training rows".into()));
    }
    if y.iter().any(|v| !v.is_finite()) || x.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite training data".into()));
    }
    if let Some(w) = w {
        if w.len() != y.len() || w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidInput("weights must be finite, non-negative, not all zero".into()));
        }
    }
    Ok(())
}

pub(crate) fn weighted_mean(y: &[f64], w: Option<&[f64]>) -> f64 {
    match w {
        None => y.iter().sum::<f64>() / y.len() as f64,
        Some(w) => y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>(),
    }
}

/// Fits a single learner by minimizing its (weighted) empirical loss.
pub fn fit(spec: &LearnerSpec, x: &Features, y: &[f64], w: Option<&[f64]>) -> Result<FittedLearner> {
    spec.validate()?;
    check_inputs(x, y, w)?;
    let classify = matches!(spec, LearnerSpec::GlmLogistic { .. } | LearnerSpec::GbtClassify(_));
    if classify && y.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidInput(format!("{} targets must lie in [0, 1]", spec.label())));
    }
    let mut flags = Vec::new();
    let constant = y.iter().all(|v| *v == y[0]);
    let model = if constant || matches!(spec, LearnerSpec::InterceptOnly) {
        if constant && !matches!(spec, LearnerSpec::InterceptOnly) {
            flags.push("constant_target".to_string());
        }
        let m = weighted_mean(y, w);
        Model::Constant(if classify { m.clamp(P_MIN, 1.0 - P_MIN) } else { m })
    } else {
        match spec {
            LearnerSpec::InterceptOnly => unreachable!(),
            LearnerSpec::GlmLinear { l2 } => glm::fit_linear(x, y, w, *l2, &mut flags)?,
            LearnerSpec::GlmLogistic { l2 } => glm::fit_logistic(x, y, w, *l2, &mut flags)?,
            LearnerSpec::GbtRegress(p) => Model::Gbt(gbt::fit(x, y, w, p, false)),
            LearnerSpec::GbtClassify(p) => Model::Gbt(gbt::fit(x, y, w, p, true)),
        }
    };
    Ok(FittedLearner {
        label: spec.label().to_string(),
        feature_names: x.names().to_vec(),
        model,
        flags,
        ensemble: None,
    })
}
