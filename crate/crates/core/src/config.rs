//! Run configuration read from TOML. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::CorrelationKind;
use crate::error::{Error, Result};
use crate::estimator::{EstimandKind, EstimatorConfig};
use crate::inference::VarianceMethod;
use crate::learners::{EnsembleSpec, GbtParams, LearnerSpec, Loss};
use crate::panel::{IngestSpec, LawCode, OutcomeKind, Stratum};
use crate::policy::{BoundedAdditiveShift, PointShift};
use crate::simulate::{DgpSpec, RawFixtureSpec, DEFAULT_MC_DRAWS};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub ingest: Option<IngestConfig>,
    pub diagnose: Option<DiagnoseConfig>,
    pub estimate: Option<EstimateConfig>,
    pub simulate: Option<SimulateConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    pub county_year: PathBuf,
    pub law_dates: PathBuf,
    pub stratum: Stratum,
    pub outcome: OutcomeKind,
    /// Also write `longitudinal.csv`.
    #[serde(default)]
    pub longitudinal: bool,
    /// Append leave-one-out state means of `W` and `A`.
    #[serde(default)]
    pub loo_summaries: bool,
    /// Full ingestion rules; the stratum preset is used when absent.
    pub spec: Option<IngestSpec>,
}

impl IngestConfig {
    pub fn resolved_spec(&self) -> IngestSpec {
        self.spec.clone().unwrap_or_else(|| match self.stratum {
            Stratum::Late => IngestSpec::late(self.outcome),
            Stratum::Early => IngestSpec::early(self.outcome),
        })
    }
}

fn fig1_laws() -> Vec<LawCode> {
    vec![
        LawCode::NAL_P1,
        LawCode::NAL_P2,
        LawCode::NAL_P3,
        LawCode::GSL,
        LawCode::PDMP_OPERATIONAL,
        LawCode::PDMP_MUSTQUERY,
        LawCode::PMCL,
        LawCode::MML,
    ]
}

fn other_laws() -> Vec<LawCode> {
    vec![LawCode::PDMP_OPERATIONAL, LawCode::PDMP_MUSTQUERY, LawCode::PMCL, LawCode::MML]
}

fn nal_p1() -> LawCode {
    LawCode::NAL_P1
}

fn first_year() -> i32 {
    2007
}

fn last_year() -> i32 {
    2017
}

fn threshold() -> f64 {
    0.7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub law_dates: PathBuf,
    /// All states in the law file when absent.
    pub states: Option<Vec<String>>,
    #[serde(default = "first_year")]
    pub first_year: i32,
    #[serde(default = "last_year")]
    pub last_year: i32,
    #[serde(default = "fig1_laws")]
    pub laws: Vec<LawCode>,
    #[serde(default)]
    pub correlation: CorrelationKind,
    /// Also emit one matrix per year.
    #[serde(default)]
    pub per_year: bool,
    #[serde(default = "threshold")]
    pub bundle_threshold: f64,
    #[serde(default = "nal_p1")]
    pub exposure_law: LawCode,
    #[serde(default = "other_laws")]
    pub covariate_laws: Vec<LawCode>,
}

/// Policy applied to a point exposure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum ShiftConfig {
    /// `a_max` defaults to the largest observed exposure.
    Bounded { delta1: f64, delta2: f64, a_max: Option<f64> },
    Additive { delta: f64 },
    Static { value: f64 },
    Identity,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        ShiftConfig::Bounded { delta1: 1.0, delta2: 2.0, a_max: None }
    }
}

impl ShiftConfig {
    pub fn build(&self, observed_max: f64) -> Result<PointShift> {
        Ok(match *self {
            ShiftConfig::Bounded { delta1, delta2, a_max } => {
                PointShift::Bounded(BoundedAdditiveShift::new(delta1, delta2, a_max.unwrap_or(observed_max))?)
            }
            ShiftConfig::Additive { delta } => PointShift::Additive(delta),
            ShiftConfig::Static { value } => PointShift::Static(value),
            ShiftConfig::Identity => PointShift::Identity,
        })
    }
}

fn default_outcome_learner() -> EnsembleSpec {
    EnsembleSpec {
        library: vec![
            LearnerSpec::InterceptOnly,
            LearnerSpec::GlmLinear { l2: 0.0 },
            LearnerSpec::GbtRegress(GbtParams::default()),
        ],
        ..EnsembleSpec::single(LearnerSpec::InterceptOnly, Loss::SquaredError)
    }
}

fn default_ratio_learner() -> EnsembleSpec {
    EnsembleSpec {
        library: vec![LearnerSpec::GlmLogistic { l2: 0.0 }, LearnerSpec::GbtClassify(GbtParams::default())],
        ..EnsembleSpec::single(LearnerSpec::InterceptOnly, Loss::LogLoss)
    }
}

fn alpha() -> f64 {
    0.05
}

fn quantile_level() -> f64 {
    0.9
}

fn delay_steps() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    /// `panel.csv` for point shifts, `longitudinal.csv` for delays.
    pub panel: PathBuf,
    pub kind: EstimandKind,
    #[serde(default)]
    pub shift: ShiftConfig,
    #[serde(default = "delay_steps")]
    pub delay_steps: usize,
    #[serde(default = "alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub variance: VarianceMethod,
    /// Abort with exit code 3 when the positivity check warns.
    #[serde(default)]
    pub strict_positivity: bool,
    #[serde(default = "quantile_level")]
    pub support_quantile: f64,
    #[serde(default = "default_outcome_learner")]
    pub outcome_learner: EnsembleSpec,
    /// Density-ratio classifier (point) or hazard model (longitudinal).
    #[serde(default = "default_ratio_learner")]
    pub ratio_learner: EnsembleSpec,
    #[serde(default)]
    pub estimator: EstimatorConfig,
}

/// Which panel a simulation writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub dgp: DgpSpec,
    #[serde(default)]
    pub shift: ShiftConfig,
    #[serde(default = "delay_steps")]
    pub delay_steps: usize,
    #[serde(default = "mc_draws")]
    pub mc_draws: usize,
    #[serde(default = "late")]
    pub stratum: Stratum,
    /// Also write raw county-year and law-date inputs.
    pub raw: Option<RawFixtureSpec>,
}

fn mc_draws() -> usize {
    DEFAULT_MC_DRAWS
}

fn late() -> Stratum {
    Stratum::Late
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    /// Reads a config file; relative paths are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        // Absolute paths keep the resolved-config echo valid wherever it is
        // re-read from.
        let fix = |p: &mut PathBuf| {
            let joined = if p.is_relative() { base.join(&*p) } else { p.clone() };
            *p = std::path::absolute(&joined).unwrap_or(joined);
        };
        if let Some(i) = &mut self.ingest {
            fix(&mut i.county_year);
            fix(&mut i.law_dates);
        }
        if let Some(d) = &mut self.diagnose {
            fix(&mut d.law_dates);
        }
        if let Some(e) = &mut self.estimate {
            fix(&mut e.panel);
        }
        if let Some(o) = &mut self.out {
            fix(o);
        }
    }

    /// Copies the run seed into the sections that consume one.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        if let Some(e) = &mut self.estimate {
            e.estimator.seed = seed;
        }
        if let Some(s) = &mut self.simulate {
            s.dgp.seed = seed;
            if let Some(r) = &mut s.raw {
                r.seed = seed;
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

impl EstimateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        self.outcome_learner.validate()?;
        self.ratio_learner.validate()?;
        if self.outcome_learner.loss != Loss::SquaredError || self.ratio_learner.loss != Loss::LogLoss {
            return Err(Error::Config("outcome_learner needs squared_error loss and ratio_learner log_loss".into()));
        }
        self.estimator.validate()
    }
}

