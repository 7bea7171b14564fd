//! Sequential-regression TMLE for the delayed-enactment policy.
//!
//! The policy follows the natural exposure process until the first
//! enactment `T*`, then holds the exposure at 0 for `k` steps and switches
//! it on afterwards. Past `T - k` a delayed enactment can no longer happen
//! inside the window, so every unit still unexposed at `T - k + 1` follows
//! the all-zero continuation from there. Each unit therefore deviates from
//! its natural path at `tau = min(T*, T - k + 1)` and then follows a static
//! continuation of the form `a_s = 1(s >= j)`.
//!
//! Regressions are indexed by nodes `(t, j)`: the conditional mean at step
//! `t` of the outcome under the continuation switching on at `j`. Nodes
//! shared by several cohorts are fitted once and targeted with the summed
//! cohort weights. Cohort weights start at `tau` with the odds
//! `g_tau(1 | H) / g_tau(0 | H)` (units enacting at `tau` are represented
//! through those still unexposed) and accumulate `1(A_t = a_t) / g_t(a_t | H_t)`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::point::assign_folds;
use super::{solve_fluctuation, Diagnostics, EstimandKind, EstimateReport, EstimatorConfig, Scale, Targeting};
use crate::density_ratio::{profile_values, PositivityProfile, RatioValue};
use crate::error::{Error, Result};
use crate::learners::{fit_ensemble, EnsembleSpec, Features, Loss};
use crate::panel::LongitudinalPanel;
use crate::policy::LongitudinalDelayPolicy;
use crate::stats::{derive_seed, expit, logit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub step: usize,
    /// The continuation switches the exposure on from this step (`T + 1`: never).
    pub ones_from: usize,
    pub epsilon: Option<f64>,
    pub weight_sum: f64,
    pub n_weighted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalDiagnostics {
    pub targeting: Targeting,
    pub horizon: usize,
    pub delay_steps: usize,
    /// Units per deviation node, keyed `t=<step>,on=<ones_from>`.
    pub cohorts: BTreeMap<String, usize>,
    pub nodes: Vec<NodeSummary>,
    /// Terminal cumulative weights with and without propensity clipping.
    pub positivity: PositivityProfile,
    /// Units whose policy-consistent path hit the propensity clip.
    pub n_clipped_units: usize,
    pub unit_level_folds: bool,
    pub learner_flags: Vec<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
struct Node {
    t: usize,
    j: usize,
}

impl Node {
    fn a(&self) -> u8 {
        u8::from(self.t >= self.j)
    }

    fn child(&self, horizon: usize) -> Option<Node> {
        (self.t < horizon).then(|| Node { t: self.t + 1, j: self.j.max(self.t + 1) })
    }

    fn key(&self) -> String {
        format!("t={},on={}", self.t, self.j)
    }
}

fn propensity_features(panel: &LongitudinalPanel, t: usize) -> Features {
    let mut names: Vec<String> = panel.baseline_names().iter().map(|n| format!("W.{n}")).collect();
    for s in 2..=t {
        names.extend(panel.time_varying_names()[s - 2].iter().map(|n| format!("L.{s}.{n}")));
    }
    let rows: Vec<Vec<f64>> = panel
        .units()
        .iter()
        .map(|u| {
            let mut r = u.baseline.clone();
            for s in 2..=t {
                r.extend_from_slice(&u.time_varying[s - 2]);
            }
            r
        })
        .collect();
    Features::from_rows(names, &rows).expect("consistent shape")
}

fn history_features(panel: &LongitudinalPanel, t: usize, a_t: Option<u8>) -> Features {
    let rows: Vec<Vec<f64>> = (0..panel.len())
        .map(|i| {
            let mut r = Vec::new();
            let a = a_t.unwrap_or(panel.units()[i].exposures[t - 1]);
            panel.history_row(i, t, f64::from(a), &mut r);
            r
        })
        .collect();
    Features::from_rows(panel.history_names(t), &rows).expect("consistent shape")
}

fn fold_split(fold: &[usize], k: usize) -> (Vec<usize>, Vec<usize>) {
    let train = (0..fold.len()).filter(|&i| fold[i] != k).collect();
    let test = (0..fold.len()).filter(|&i| fold[i] == k).collect();
    (train, test)
}

/// Cross-fitted TMLE of `E(Y_d)` under the delay policy.
pub fn estimate_longitudinal_delay(
    panel: &LongitudinalPanel,
    policy: &LongitudinalDelayPolicy,
    outcome_learner: &EnsembleSpec,
    propensity_learner: &EnsembleSpec,
    cfg: &EstimatorConfig,
) -> Result<EstimateReport> {
    cfg.validate()?;
    if outcome_learner.loss != Loss::SquaredError || propensity_learner.loss != Loss::LogLoss {
        return Err(Error::Config(
            "longitudinal learners need squared_error (outcome) and log_loss (propensity)".into(),
        ));
    }
    let horizon = panel.horizon();
    if policy.horizon() != horizon {
        return Err(Error::Config(format!(
            "policy horizon {} != panel horizon {horizon}",
            policy.horizon()
        )));
    }
    let n = panel.len();
    let y = panel.outcomes();
    let (cluster, m) = panel.cluster_index();
    let units = panel.units();

    let mut fixed = true;
    for u in units {
        if policy.apply_delay(&u.exposures)? != u.exposures {
            fixed = false;
            break;
        }
    }
    let Some(scale) = Scale::fit(&y).filter(|_| !fixed) else {
        let mean_y = crate::stats::mean(&y);
        let (psi, ic, reason) = if fixed {
            (mean_y, y.iter().map(|v| v - mean_y).collect(), "policy leaves every observed trajectory unchanged")
        } else {
            (y.first().copied().unwrap_or(f64::NAN), vec![0.0; n], "constant outcome")
        };
        return Ok(EstimateReport::assemble(
            EstimandKind::LongitudinalDelay,
            psi,
            &y,
            ic,
            cluster,
            0,
            Diagnostics::Degenerate { reason: reason.into() },
        ));
    };
    let ys: Vec<f64> = y.iter().map(|&v| scale.forward(v)).collect();
    let (fold, v, unit_level) = assign_folds(&cluster, m, cfg.folds, cfg.seed);
    if v < 2 {
        return Err(Error::InvalidInput("cross-fitting needs at least two units".into()));
    }
    let a = |i: usize, t: usize| -> u8 { if t == 0 { policy.pre_window_exposure() } else { units[i].exposures[t - 1] } };

    // Cross-fitted hazards h_t(i) = P(A_t = 1 | H_t, A_{t-1} = 0).
    let mut flags: Vec<String> = Vec::new();
    let hazard_fits: Vec<Result<(usize, Vec<usize>, Vec<f64>, Vec<String>)>> = (1..=horizon)
        .flat_map(|t| (0..v).map(move |k| (t, k)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(t, k)| {
            let x = propensity_features(panel, t);
            let (train, test) = fold_split(&fold, k);
            let risk: Vec<usize> = train.into_iter().filter(|&i| a(i, t - 1) == 0).collect();
            let target: Vec<f64> = risk.iter().map(|&i| f64::from(a(i, t))).collect();
            let mut notes = Vec::new();
            let pred = if risk.len() < 2 {
                notes.push(format!("hazard t={t}: fewer than 2 units at risk, using 0.5"));
                vec![0.5; test.len()]
            } else {
                let f = fit_ensemble(
                    propensity_learner,
                    &x.select_rows(&risk),
                    &target,
                    None,
                    derive_seed(cfg.seed, 10_000 + 100 * t as u64 + k as u64),
                )
                .map_err(|e| Error::FoldFit { fold: k, reason: format!("hazard t={t}: {e}") })?;
                notes.extend(f.flags().iter().map(|s| format!("hazard t={t}: {s}")));
                f.predict(&x.select_rows(&test))?
            };
            Ok((t, test, pred, notes))
        })
        .collect();
    let mut hazard_raw = vec![vec![0.0; n]; horizon + 1];
    for r in hazard_fits {
        let (t, test, pred, notes) = r?;
        for (i, p) in test.into_iter().zip(pred) {
            hazard_raw[t][i] = p;
        }
        for s in notes {
            if !flags.contains(&s) {
                flags.push(s);
            }
        }
    }
    // g_t(a | H_t) with and without clipping; exposure is absorbing.
    let g = |i: usize, t: usize, val: u8, clipped: bool| -> f64 {
        if a(i, t - 1) == 1 {
            return f64::from(val);
        }
        let h = hazard_raw[t][i];
        let h = if clipped { h.clamp(cfg.p_min, 1.0 - cfg.p_min) } else { h.clamp(1e-12, 1.0 - 1e-12) };
        if val == 1 {
            h
        } else {
            1.0 - h
        }
    };
    let was_clipped = |i: usize, t: usize| -> bool {
        a(i, t - 1) == 0 && (hazard_raw[t][i] < cfg.p_min || hazard_raw[t][i] > 1.0 - cfg.p_min)
    };

    // Node graph.
    let k_delay = policy.delay_steps();
    let late_start = if k_delay >= horizon { 1 } else { horizon - k_delay + 1 };
    let mut starts: Vec<Node> = (1..late_start).map(|c| Node { t: c, j: c + k_delay }).collect();
    starts.push(Node { t: late_start, j: horizon + 1 });
    let mut nodes: Vec<Node> = Vec::new();
    for &s in &starts {
        let mut cur = Some(s);
        while let Some(nd) = cur {
            if !nodes.contains(&nd) {
                nodes.push(nd);
            }
            cur = nd.child(horizon);
        }
    }
    nodes.sort();
    let index: BTreeMap<Node, usize> = nodes.iter().enumerate().map(|(q, &nd)| (nd, q)).collect();

    // Forward pass: cumulative weights per node, clipped and raw.
    let mut omega = vec![vec![0.0; n]; nodes.len()];
    let mut omega_raw = vec![vec![0.0; n]; nodes.len()];
    let mut clipped_unit = vec![false; n];
    for (q, nd) in nodes.iter().enumerate() {
        let t = nd.t;
        let is_start = starts.contains(nd);
        for i in 0..n {
            let mut w = 0.0;
            let mut w_raw = 0.0;
            if is_start && a(i, t - 1) == 0 && a(i, t) == 0 {
                if nd.j == horizon + 1 && t == late_start {
                    w += 1.0 / g(i, t, 0, true);
                    w_raw += 1.0 / g(i, t, 0, false);
                } else {
                    w += g(i, t, 1, true) / g(i, t, 0, true);
                    w_raw += g(i, t, 1, false) / g(i, t, 0, false);
                }
                if was_clipped(i, t) {
                    clipped_unit[i] = true;
                }
            }
            omega[q][i] = w;
            omega_raw[q][i] = w_raw;
        }
        if t > 1 {
            for (p, parent) in nodes.iter().enumerate() {
                if parent.child(horizon) != Some(*nd) {
                    continue;
                }
                let at = nd.a();
                for i in 0..n {
                    if omega[p][i] == 0.0 || a(i, t) != at {
                        continue;
                    }
                    omega[q][i] += omega[p][i] / g(i, t, at, true);
                    omega_raw[q][i] += omega_raw[p][i] / g(i, t, at, false);
                    if was_clipped(i, t) {
                        clipped_unit[i] = true;
                    }
                }
            }
        }
    }

    // Backward pass: cross-fitted regressions and per-node fluctuation.
    let clip = |p: f64| p.clamp(cfg.outcome_clip, 1.0 - cfg.outcome_clip);
    let mut s_star: Vec<Vec<f64>> = vec![Vec::new(); nodes.len()];
    let mut summaries: Vec<Option<NodeSummary>> = vec![None; nodes.len()];
    for t in (1..=horizon).rev() {
        let at_t: Vec<usize> = (0..nodes.len()).filter(|&q| nodes[q].t == t).collect();
        let x_obs = history_features(panel, t, None);
        for q in at_t {
            let nd = nodes[q];
            let pseudo: Vec<f64> = match nd.child(horizon) {
                None => ys.clone(),
                Some(c) => s_star[index[&c]].clone(),
            };
            let x_reg = history_features(panel, t, Some(nd.a()));
            let preds: Vec<Result<(Vec<usize>, Vec<f64>, Vec<String>)>> = (0..v)
                .into_par_iter()
                .map(|k| {
                    let (train, test) = fold_split(&fold, k);
                    let target: Vec<f64> = train.iter().map(|&i| pseudo[i]).collect();
                    let f = fit_ensemble(
                        outcome_learner,
                        &x_obs.select_rows(&train),
                        &target,
                        None,
                        derive_seed(cfg.seed, 20_000 + 100 * q as u64 + k as u64),
                    )
                    .map_err(|e| Error::FoldFit { fold: k, reason: format!("regression {}: {e}", nd.key()) })?;
                    let notes = f.flags().iter().map(|s| format!("regression {}: {s}", nd.key())).collect();
                    Ok((test.clone(), f.predict(&x_reg.select_rows(&test))?, notes))
                })
                .collect();
            let mut qhat = vec![0.0; n];
            for r in preds {
                let (test, p, notes) = r?;
                for (i, val) in test.into_iter().zip(p) {
                    qhat[i] = clip(val);
                }
                for s in notes {
                    if !flags.contains(&s) {
                        flags.push(s);
                    }
                }
            }
            let w = &omega[q];
            let (star, eps) = match cfg.targeting {
                Targeting::Tmle => {
                    let off: Vec<f64> = qhat.iter().map(|&p| logit(p)).collect();
                    let eps = solve_fluctuation(&pseudo, &off, w);
                    (off.iter().map(|&o| expit(o + eps)).collect(), Some(eps))
                }
                Targeting::OneStep => (qhat, None),
            };
            summaries[q] = Some(NodeSummary {
                step: nd.t,
                ones_from: nd.j,
                epsilon: eps,
                weight_sum: w.iter().sum(),
                n_weighted: w.iter().filter(|&&x| x != 0.0).count(),
            });
            s_star[q] = star;
        }
    }

    // Plug-in at each unit's deviation node and influence curve.
    let mut cohorts: BTreeMap<String, usize> = BTreeMap::new();
    let start_of: Vec<usize> = (0..n)
        .map(|i| {
            let nd = match policy.first_enactment(&units[i].exposures) {
                Some(c) if c < late_start => Node { t: c, j: c + k_delay },
                _ => Node { t: late_start, j: horizon + 1 },
            };
            *cohorts.entry(nd.key()).or_default() += 1;
            index[&nd]
        })
        .collect();
    let correction: Vec<f64> = (0..n)
        .map(|i| {
            nodes
                .iter()
                .enumerate()
                .filter(|(q, _)| omega[*q][i] != 0.0)
                .map(|(q, nd)| {
                    let next = match nd.child(horizon) {
                        None => ys[i],
                        Some(c) => s_star[index[&c]][i],
                    };
                    omega[q][i] * (next - s_star[q][i])
                })
                .sum()
        })
        .collect();
    let plug: Vec<f64> = (0..n).map(|i| s_star[start_of[i]][i]).collect();
    let psi_s = match cfg.targeting {
        Targeting::Tmle => crate::stats::mean(&plug),
        Targeting::OneStep => crate::stats::mean(&plug) + crate::stats::mean(&correction),
    };
    let ic: Vec<f64> = (0..n).map(|i| scale.range() * (correction[i] + plug[i] - psi_s)).collect();

    let last = nodes.len();
    let terminal: Vec<RatioValue> = (0..n)
        .map(|i| {
            let (r, raw) = (0..last)
                .filter(|&q| nodes[q].t == horizon)
                .fold((0.0, 0.0), |(r, raw), q| (r + omega[q][i], raw + omega_raw[q][i]));
            RatioValue { raw, r }
        })
        .collect();
    let diagnostics = LongitudinalDiagnostics {
        targeting: cfg.targeting,
        horizon,
        delay_steps: k_delay,
        cohorts,
        nodes: summaries.into_iter().flatten().collect(),
        positivity: profile_values(&terminal, cfg.ratio.violation_threshold, None),
        n_clipped_units: clipped_unit.iter().filter(|&&c| c).count(),
        unit_level_folds: unit_level,
        learner_flags: flags,
    };
    Ok(EstimateReport::assemble(
        EstimandKind::LongitudinalDelay,
        scale.back(psi_s),
        &y,
        ic,
        cluster,
        v,
        Diagnostics::Longitudinal(diagnostics),
    ))
}
