//! Synthetic data with known counterfactual truth.
//!
//! A [`DgpSpec`] describes either a point-exposure panel (continuous
//! exposure years, baseline covariates, additive state effects) or, when
//! `longitudinal` is set, a binary never-repealed exposure over `T` steps.
//! Truth is computed by Monte Carlo over the structural functions and, where
//! available, by closed form or exact enumeration.

mod fixtures;
mod longitudinal;
mod point;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fixtures::{entangled_law_fixture, raw_fixture, RawFixture, RawFixtureSpec};
pub use longitudinal::{simulate_longitudinal, true_longitudinal_contrast, LongitudinalDgp, MAX_ENUMERATED_PATHS};
pub use point::{simulate_point, true_shift_contrast};

/// Default Monte Carlo draws for truth computation.
pub const DEFAULT_MC_DRAWS: usize = 1_000_000;
/// Draws per parallel chunk; each chunk has its own seed.
pub(crate) const MC_CHUNK: usize = 1 << 16;

/// Exposure given the first covariate `W1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum ExposureModel {
    /// Linear density on `[0, a_max]` tilted by `W1`:
    /// `g(a | w) = (1 + theta * (2a / a_max - 1)) / a_max` with
    /// `theta = tilt * W1 / bound`. Every unit has the full support, so
    /// shifts that stay below `a_max` keep positivity. With `cluster_level`
    /// the uniform draw behind `A` is shared within a cluster.
    Ramp {
        a_max: f64,
        tilt: f64,
        #[serde(default)]
        cluster_level: bool,
    },
    /// `A = slope * (W1 + bound) + width * V`, `V ~ U(0, 1)`; with
    /// `cluster_level` one `V` is shared by all units of a cluster.
    UniformBand {
        slope: f64,
        width: f64,
        #[serde(default)]
        cluster_level: bool,
    },
    /// `A ~ N(intercept + slope * W1, sd^2)` truncated to `[0, a_max]`.
    Normal { intercept: f64, slope: f64, sd: f64, a_max: f64 },
    /// `A ~ U(0, 1)` when `W1 < 0`, `A ~ U(a_max - 1, a_max)` otherwise: no
    /// overlap between the two covariate halves.
    Disjoint { a_max: f64 },
}

impl Default for ExposureModel {
    fn default() -> Self {
        ExposureModel::Ramp { a_max: 4.79, tilt: 0.6, cluster_level: false }
    }
}

impl ExposureModel {
    pub(crate) fn cluster_level(&self) -> bool {
        matches!(
            self,
            ExposureModel::Ramp { cluster_level: true, .. } | ExposureModel::UniformBand { cluster_level: true, .. }
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Response {
    #[default]
    Linear,
    /// Outcome does not depend on the exposure.
    Null,
    /// Adds `a_quad * A^2 + a_w * A * W1 + W1^2` to the linear part.
    Nonlinear,
}

/// `Y = f(A, W) + u_cluster + noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutcomeModel {
    pub response: Response,
    pub intercept: f64,
    pub a_coef: f64,
    /// Coefficients of `W1, W2, ...`; missing entries are 0.
    pub w_coefs: Vec<f64>,
    pub a_quad: f64,
    pub a_w: f64,
    pub noise_sd: f64,
    /// Standard deviation of the additive cluster effect.
    pub cluster_sd: f64,
}

impl Default for OutcomeModel {
    fn default() -> Self {
        OutcomeModel {
            response: Response::Linear,
            intercept: 10.0,
            a_coef: 2.0,
            w_coefs: vec![3.0, 1.0],
            a_quad: 0.5,
            a_w: 0.5,
            noise_sd: 1.0,
            cluster_sd: 0.0,
        }
    }
}

impl OutcomeModel {
    /// Structural mean without cluster effect and noise.
    pub fn f(&self, a: f64, w: &[f64]) -> f64 {
        let lin_w: f64 = self.w_coefs.iter().zip(w).map(|(c, x)| c * x).sum();
        match self.response {
            Response::Null => self.intercept + lin_w,
            Response::Linear => self.intercept + self.a_coef * a + lin_w,
            Response::Nonlinear => {
                let w1 = w.first().copied().unwrap_or(0.0);
                self.intercept + self.a_coef * a + lin_w + self.a_quad * a * a + self.a_w * a * w1 + w1 * w1
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DgpSpec {
    pub n_units: usize,
    pub n_clusters: usize,
    /// Number of covariates, each `N(0, 1)` truncated to `[-bound, bound]`.
    pub covariate_dim: usize,
    pub covariate_bound: f64,
    pub exposure: ExposureModel,
    pub outcome: OutcomeModel,
    pub seed: u64,
    pub longitudinal: Option<LongitudinalDgp>,
}

impl Default for DgpSpec {
    fn default() -> Self {
        DgpSpec {
            n_units: 1000,
            n_clusters: 40,
            covariate_dim: 2,
            covariate_bound: 2.0,
            exposure: ExposureModel::default(),
            outcome: OutcomeModel::default(),
            seed: 0,
            longitudinal: None,
        }
    }
}

impl DgpSpec {
    /// Linear outcome with the default ramp exposure.
    pub fn linear(n_units: usize, n_clusters: usize, seed: u64) -> Self {
        DgpSpec { n_units, n_clusters, seed, ..Default::default() }
    }

    /// Outcome independent of the exposure.
    pub fn null(n_units: usize, n_clusters: usize, seed: u64) -> Self {
        let mut s = Self::linear(n_units, n_clusters, seed);
        s.outcome.response = Response::Null;
        s
    }

    /// Exposure noise shared within cluster plus an additive cluster effect.
    pub fn clustered(n_units: usize, n_clusters: usize, cluster_sd: f64, seed: u64) -> Self {
        let mut s = Self::linear(n_units, n_clusters, seed);
        s.exposure = ExposureModel::Ramp { a_max: 4.79, tilt: 0.6, cluster_level: true };
        s.outcome.cluster_sd = cluster_sd;
        s
    }

    /// Exposure whose shifted values leave the support for half the units.
    pub fn disjoint(n_units: usize, n_clusters: usize, seed: u64) -> Self {
        let mut s = Self::linear(n_units, n_clusters, seed);
        s.exposure = ExposureModel::Disjoint { a_max: 4.79 };
        s
    }

    /// Shape of the late-enactor analysis (2298 counties in 39 states),
    /// optionally scaled down.
    pub fn study_late(scale: f64, seed: u64) -> Self {
        Self::linear(((2298.0 * scale).round() as usize).max(39), 39, seed)
    }

    /// Shape of the early-enactor analysis (409 counties in 9 states).
    pub fn study_early(scale: f64, seed: u64) -> Self {
        let mut s = Self::linear(((409.0 * scale).round() as usize).max(9), 9, seed);
        s.exposure = ExposureModel::Ramp { a_max: 5.91, tilt: 0.6, cluster_level: false };
        s
    }

    /// Upper end of the exposure support.
    pub fn a_max(&self) -> f64 {
        match self.exposure {
            ExposureModel::UniformBand { slope, width, .. } => 2.0 * self.covariate_bound * slope + width,
            ExposureModel::Ramp { a_max, .. } | ExposureModel::Normal { a_max, .. } | ExposureModel::Disjoint { a_max } => {
                a_max
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("infeasible simulation spec: {m}")));
        if self.n_clusters == 0 || self.n_units < self.n_clusters {
            return bad("need 1 <= n_clusters <= n_units");
        }
        if self.covariate_dim == 0 || !(self.covariate_bound > 0.0) {
            return bad("need at least one covariate and a positive bound");
        }
        if !(self.a_max() > 0.0) || !self.a_max().is_finite() {
            return bad("a_max must be positive");
        }
        match self.exposure {
            ExposureModel::UniformBand { slope, width, .. } if slope < 0.0 || width < 0.0 => {
                return bad("slope and width must be >= 0")
            }
            ExposureModel::Normal { sd, .. } if !(sd > 0.0) => return bad("sd must be positive"),
            ExposureModel::Ramp { tilt, .. } if !(tilt.abs() < 1.0) => return bad("ramp tilt must lie in (-1, 1)"),
            ExposureModel::Disjoint { a_max } if a_max < 2.0 => return bad("disjoint exposure needs a_max >= 2"),
            _ => {}
        }
        let o = &self.outcome;
        if o.noise_sd < 0.0 || o.cluster_sd < 0.0 {
            return bad("variance parameters must be >= 0");
        }
        if o.w_coefs.len() > self.covariate_dim {
            return bad("more covariate coefficients than covariates");
        }
        if let Some(l) = &self.longitudinal {
            l.validate()?;
        }
        Ok(())
    }
}

/// Counterfactual truth with its Monte Carlo standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub true_contrast: f64,
    /// `E(Y_d)`.
    pub true_psi: f64,
    pub mc_se: f64,
    /// `closed_form`, `exact_enumeration` or `monte_carlo`.
    pub oracle_method: String,
    pub mc_contrast: Option<f64>,
    pub closed_form: Option<f64>,
    pub draws: usize,
}

/// Mean and standard error accumulated chunk by chunk.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Moments {
    pub n: usize,
    pub sum: f64,
    pub sumsq: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sumsq += x * x;
    }

    pub fn merge(mut self, o: Moments) -> Moments {
        self.n += o.n;
        self.sum += o.sum;
        self.sumsq += o.sumsq;
        self
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    pub fn se(&self) -> f64 {
        let n = self.n as f64;
        let var = ((self.sumsq - self.sum * self.sum / n) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

/// Draws per chunk for `draws` total.
pub(crate) fn chunks(draws: usize) -> Vec<usize> {
    let full = draws / MC_CHUNK;
    let mut v = vec![MC_CHUNK; full];
    if draws % MC_CHUNK > 0 {
        v.push(draws % MC_CHUNK);
    }
    v
}
