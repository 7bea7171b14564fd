//! Binary never-repealed exposure over `T` steps with a binary covariate.
//!
//! `W ~ Bernoulli(p_w)`; for `t >= 2`, `L_t ~ Bernoulli(l_base + l_w W +
//! l_a A_{t-1})`; while unexposed, `A_t ~ Bernoulli(expit(h_0 + h_w W +
//! h_l L_t))` (no `L` term at `t = 1`); `Y = y_0 + y_a sum A + y_w W + y_l
//! sum L + u_cluster + noise`. Under the delay policy the natural first
//! enactment `c` is kept, the exposure is held at 0 until `c + k`, and later
//! covariates respond to the intervened exposure.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{chunks, Moments, Truth};
use crate::error::{Error, Result};
use crate::panel::{LongitudinalPanel, LongitudinalUnit, Stratum};
use crate::policy::LongitudinalDelayPolicy;
use crate::stats::{derive_seed, expit, rng};

/// Above this many paths the oracle falls back to Monte Carlo.
pub const MAX_ENUMERATED_PATHS: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LongitudinalDgp {
    pub horizon: usize,
    pub p_w: f64,
    pub hazard_intercept: f64,
    pub hazard_w: f64,
    pub hazard_l: f64,
    pub l_base: f64,
    pub l_w: f64,
    pub l_a: f64,
    pub y_intercept: f64,
    pub y_a: f64,
    pub y_w: f64,
    pub y_l: f64,
    pub noise_sd: f64,
    pub cluster_sd: f64,
    /// No unit is ever exposed.
    pub never_enact: bool,
}

impl Default for LongitudinalDgp {
    fn default() -> Self {
        LongitudinalDgp {
            horizon: 3,
            p_w: 0.5,
            hazard_intercept: -1.2,
            hazard_w: 0.6,
            hazard_l: 0.6,
            l_base: 0.2,
            l_w: 0.3,
            l_a: 0.3,
            y_intercept: 10.0,
            y_a: 2.0,
            y_w: 1.0,
            y_l: 1.0,
            noise_sd: 1.0,
            cluster_sd: 0.0,
            never_enact: false,
        }
    }
}

impl LongitudinalDgp {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("infeasible longitudinal spec: {m}")));
        if self.horizon == 0 {
            return bad("horizon must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.p_w) {
            return bad("p_w must lie in [0, 1]");
        }
        for w in [0.0, 1.0] {
            for a in [0.0, 1.0] {
                if !(0.0..=1.0).contains(&self.l_prob(w, a)) {
                    return bad("L_t probability leaves [0, 1]");
                }
            }
        }
        if self.noise_sd < 0.0 || self.cluster_sd < 0.0 {
            return bad("variance parameters must be >= 0");
        }
        Ok(())
    }

    fn l_prob(&self, w: f64, a_prev: f64) -> f64 {
        self.l_base + self.l_w * w + self.l_a * a_prev
    }

    fn hazard(&self, t: usize, w: f64, l: f64) -> f64 {
        if self.never_enact {
            return 0.0;
        }
        let lt = if t >= 2 { self.hazard_l * l } else { 0.0 };
        expit(self.hazard_intercept + self.hazard_w * w + lt)
    }

    fn y_mean(&self, w: f64, sum_a: f64, sum_l: f64) -> f64 {
        self.y_intercept + self.y_a * sum_a + self.y_w * w + self.y_l * sum_l
    }

    fn n_paths(&self) -> usize {
        // W, L_2..L_T and the first enactment step (or none)
        let l = 1usize.checked_shl((self.horizon - 1) as u32).unwrap_or(usize::MAX);
        l.saturating_mul(2).saturating_mul(self.horizon + 1)
    }

    /// Expected outcome under the delay `k` (`k = 0`: natural course).
    fn enumerate(&self, k: usize) -> f64 {
        let mut total = 0.0;
        for (w, pw) in [(0.0, 1.0 - self.p_w), (1.0, self.p_w)] {
            if pw > 0.0 {
                total += pw * self.step(1, k, w, None, 0.0, 0.0, 0.0);
            }
        }
        total
    }

    /// Conditional expectation from step `t` on. `enacted` is the natural
    /// first enactment step once it has happened.
    #[allow(clippy::too_many_arguments)]
    fn step(&self, t: usize, k: usize, w: f64, enacted: Option<usize>, a_prev: f64, sum_a: f64, sum_l: f64) -> f64 {
        let t_max = self.horizon;
        if t > t_max {
            return self.y_mean(w, sum_a, sum_l);
        }
        let mut out = 0.0;
        let branches: Vec<(f64, f64)> = if t == 1 {
            vec![(0.0, 1.0)]
        } else {
            let p = self.l_prob(w, a_prev);
            vec![(0.0, 1.0 - p), (1.0, p)]
        };
        for (l, pl) in branches {
            if pl == 0.0 {
                continue;
            }
            let regime = |c: usize| -> f64 { f64::from(u8::from(t >= c + k)) };
            let inner = match enacted {
                Some(c) => {
                    let a = regime(c);
                    self.step(t + 1, k, w, enacted, a, sum_a + a, sum_l + l)
                }
                None => {
                    let h = self.hazard(t, w, l);
                    let mut v = 0.0;
                    if h < 1.0 {
                        v += (1.0 - h) * self.step(t + 1, k, w, None, 0.0, sum_a, sum_l + l);
                    }
                    if h > 0.0 {
                        let a = regime(t);
                        v += h * self.step(t + 1, k, w, Some(t), a, sum_a + a, sum_l + l);
                    }
                    v
                }
            };
            out += pl * inner;
        }
        out
    }

    /// One draw of the natural and intervened outcome means with common
    /// random numbers.
    fn draw_pair(&self, k: usize, r: &mut ChaCha8Rng) -> (f64, f64) {
        let w = f64::from(u8::from(r.random::<f64>() < self.p_w));
        let mut res = [0.0; 2];
        let u_l: Vec<f64> = (0..self.horizon).map(|_| r.random()).collect();
        let u_a: Vec<f64> = (0..self.horizon).map(|_| r.random()).collect();
        for (slot, kk) in [(0, 0), (1, k)] {
            let (mut enacted, mut a_prev, mut sa, mut sl) = (None, 0.0, 0.0, 0.0);
            for t in 1..=self.horizon {
                let l = if t >= 2 { f64::from(u8::from(u_l[t - 1] < self.l_prob(w, a_prev))) } else { 0.0 };
                if enacted.is_none() && u_a[t - 1] < self.hazard(t, w, l) {
                    enacted = Some(t);
                }
                let a = enacted.map_or(0.0, |c| f64::from(u8::from(t >= c + kk)));
                sa += a;
                sl += l;
                a_prev = a;
            }
            res[slot] = self.y_mean(w, sa, sl);
        }
        (res[0], res[1])
    }
}

/// Draws a longitudinal panel; unit `i` belongs to cluster `i mod M`.
pub fn simulate_longitudinal(dgp: &LongitudinalDgp, n_units: usize, n_clusters: usize, seed: u64) -> Result<LongitudinalPanel> {
    dgp.validate()?;
    if n_clusters == 0 || n_units < n_clusters {
        return Err(Error::Config("infeasible simulation spec: need 1 <= n_clusters <= n_units".into()));
    }
    let mut crng = rng(seed, 2);
    let effect = Normal::new(0.0, dgp.cluster_sd).expect("validated sd");
    let cluster_effect: Vec<f64> = (0..n_clusters).map(|_| effect.sample(&mut crng)).collect();
    let noise = Normal::new(0.0, dgp.noise_sd).expect("validated sd");
    let mut r = rng(seed, 1);
    let t_max = dgp.horizon;
    let wu = n_units.saturating_sub(1).to_string().len();
    let wc = n_clusters.saturating_sub(1).to_string().len();
    let units = (0..n_units)
        .map(|i| {
            let c = i % n_clusters;
            let w = f64::from(u8::from(r.random::<f64>() < dgp.p_w));
            let (mut a_prev, mut sa, mut sl) = (0.0, 0.0, 0.0);
            let mut exposures = Vec::with_capacity(t_max);
            let mut time_varying = Vec::with_capacity(t_max.saturating_sub(1));
            for t in 1..=t_max {
                let l = if t >= 2 {
                    let l = f64::from(u8::from(r.random::<f64>() < dgp.l_prob(w, a_prev)));
                    time_varying.push(vec![l]);
                    l
                } else {
                    0.0
                };
                let a = if a_prev == 1.0 { 1.0 } else { f64::from(u8::from(r.random::<f64>() < dgp.hazard(t, w, l))) };
                exposures.push(a as u8);
                sa += a;
                sl += l;
                a_prev = a;
            }
            LongitudinalUnit {
                unit_id: format!("u{i:0wu$}"),
                cluster_id: format!("s{c:0wc$}"),
                baseline: vec![w],
                exposures,
                time_varying,
                y: dgp.y_mean(w, sa, sl) + cluster_effect[c] + noise.sample(&mut r),
            }
        })
        .collect();
    let tv = (2..=t_max).map(|_| vec!["L".to_string()]).collect();
    LongitudinalPanel::new(Stratum::Late, t_max, vec!["W".into()], tv, units)
}

/// `E(Y_d) - E(Y)` under the delay policy: exact enumeration when the path
/// count is at most [`MAX_ENUMERATED_PATHS`], otherwise Monte Carlo with
/// common random numbers.
pub fn true_longitudinal_contrast(dgp: &LongitudinalDgp, policy: &LongitudinalDelayPolicy, draws: usize, seed: u64) -> Result<Truth> {
    dgp.validate()?;
    if policy.horizon() != dgp.horizon {
        return Err(Error::Config("policy horizon differs from the simulation horizon".into()));
    }
    let k = policy.delay_steps();
    if dgp.n_paths() <= MAX_ENUMERATED_PATHS {
        let nat = dgp.enumerate(0);
        let psi = dgp.enumerate(k);
        return Ok(Truth {
            true_contrast: psi - nat,
            true_psi: psi,
            mc_se: 0.0,
            oracle_method: "exact_enumeration".into(),
            mc_contrast: None,
            closed_form: None,
            draws: 0,
        });
    }
    monte_carlo(dgp, k, draws, seed)
}

fn monte_carlo(dgp: &LongitudinalDgp, k: usize, draws: usize, seed: u64) -> Result<Truth> {
    let base = derive_seed(seed, 0x10_7A17);
    let (diff, level) = chunks(draws)
        .into_par_iter()
        .enumerate()
        .map(|(c, size)| {
            let mut r = rng(base, c as u64);
            let (mut d, mut l) = (Moments::default(), Moments::default());
            for _ in 0..size {
                let (nat, int) = dgp.draw_pair(k, &mut r);
                d.push(int - nat);
                l.push(int);
            }
            (d, l)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((Moments::default(), Moments::default()), |(a, b), (c, d)| (a.merge(c), b.merge(d)));
    Ok(Truth {
        true_contrast: diff.mean(),
        true_psi: level.mean(),
        mc_se: diff.se(),
        oracle_method: "monte_carlo".into(),
        mc_contrast: Some(diff.mean()),
        closed_form: None,
        draws,
    })
}
