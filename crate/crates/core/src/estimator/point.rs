//! Point-exposure estimator of `E(Y_d)` for a shifted continuous exposure.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    cluster_folds, solve_fluctuation, Diagnostics, EstimandKind, EstimateReport, EstimatorConfig, FoldSummary,
    Scale, Targeting,
};
use crate::density_ratio::{fit_ratio, profile_values, PositivityProfile, RatioMethod, RatioValue, EXPOSURE_FEATURE};
use crate::error::{Error, Result};
use crate::learners::{fit_ensemble, EnsembleSpec, Features, Loss};
use crate::panel::PanelTable;
use crate::policy::PointShift;
use crate::stats::{derive_seed, expit, logit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointDiagnostics {
    pub targeting: Targeting,
    pub epsilon: Option<f64>,
    /// Cross-fitted mean squared error of the outcome regression on the
    /// [0, 1]-scaled outcome.
    pub outcome_cv_loss: f64,
    pub ratio_method: RatioMethod,
    pub ratio_bounds: [f64; 2],
    pub positivity: PositivityProfile,
    pub y_range: [f64; 2],
    pub unit_level_folds: bool,
    pub folds: Vec<FoldSummary>,
}

struct FoldOut {
    test: Vec<usize>,
    m_a: Vec<f64>,
    m_d: Vec<f64>,
    ratio: Vec<RatioValue>,
    summary: FoldSummary,
}

fn with_exposure(w: &Features, a: &[f64]) -> Features {
    let mut names = w.names().to_vec();
    names.push(EXPOSURE_FEATURE.to_string());
    let rows: Vec<Vec<f64>> = (0..w.n_rows())
        .map(|i| {
            let mut r = w.row(i).to_vec();
            r.push(a[i]);
            r
        })
        .collect();
    Features::from_rows(names, &rows).expect("consistent shape")
}

/// Fold assignment honoring clusters; with a single cluster units are
/// split directly.
pub(crate) fn assign_folds(cluster: &[usize], n_clusters: usize, v: usize, seed: u64) -> (Vec<usize>, usize, bool) {
    if n_clusters >= 2 {
        let (f, k) = cluster_folds(cluster, n_clusters, v, seed);
        (f, k, false)
    } else {
        let units: Vec<usize> = (0..cluster.len()).collect();
        let (f, k) = cluster_folds(&units, units.len(), v, seed);
        (f, k, true)
    }
}

/// Cross-fitted TMLE of `psi = E[m(d(A), W)]`.
///
/// Outcome regression `m(a, w)` and density ratio `r(a, w)` are fitted on
/// the complement of each fold and evaluated on the fold. A single logistic
/// fluctuation with offset `logit m(A, W)` and weights `r` is solved on the
/// pooled out-of-fold values; `psi` is the mean of the updated `m(d(A), W)`.
pub fn estimate_point_shift(
    panel: &PanelTable,
    shift: &PointShift,
    outcome_learner: &EnsembleSpec,
    ratio_learner: &EnsembleSpec,
    cfg: &EstimatorConfig,
) -> Result<EstimateReport> {
    cfg.validate()?;
    if outcome_learner.loss != Loss::SquaredError {
        return Err(Error::Config("outcome learner must use squared_error".into()));
    }
    if panel.covariate_names().iter().any(|n| n == EXPOSURE_FEATURE) {
        return Err(Error::InvalidInput(format!("covariate name `{EXPOSURE_FEATURE}` is reserved")));
    }
    let y = panel.outcomes();
    let a = panel.exposures();
    let (cluster, m) = panel.cluster_index();
    let n = y.len();
    let Some(scale) = Scale::fit(&y) else {
        return Ok(EstimateReport::assemble(
            EstimandKind::PointShift,
            y.first().copied().unwrap_or(f64::NAN),
            &y,
            vec![0.0; n],
            cluster,
            0,
            Diagnostics::Degenerate { reason: "constant outcome".into() },
        ));
    };
    let shifted = shift.apply_all(&a)?;
    let rows: Vec<Vec<f64>> = panel.rows().iter().map(|r| r.w.clone()).collect();
    let w = Features::from_rows(panel.covariate_names().to_vec(), &rows)?;
    let x_obs = with_exposure(&w, &a);
    let x_shift = with_exposure(&w, &shifted);
    let ys: Vec<f64> = y.iter().map(|&v| scale.forward(v)).collect();
    let (fold, v, unit_level) = assign_folds(&cluster, m, cfg.folds, cfg.seed);
    if v < 2 {
        return Err(Error::InvalidInput("cross-fitting needs at least two units".into()));
    }

    let outs: Vec<FoldOut> = (0..v)
        .into_par_iter()
        .map(|k| -> Result<FoldOut> {
            let train: Vec<usize> = (0..n).filter(|&i| fold[i] != k).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold[i] == k).collect();
            let wrap = |e: Error| Error::FoldFit { fold: k, reason: e.to_string() };
            let y_train: Vec<f64> = train.iter().map(|&i| ys[i]).collect();
            let om = fit_ensemble(
                outcome_learner,
                &x_obs.select_rows(&train),
                &y_train,
                None,
                derive_seed(cfg.seed, 2 * k as u64 + 1),
            )
            .map_err(wrap)?;
            let m_a = om.predict(&x_obs.select_rows(&test)).map_err(wrap)?;
            let m_d = om.predict(&x_shift.select_rows(&test)).map_err(wrap)?;
            let a_train: Vec<f64> = train.iter().map(|&i| a[i]).collect();
            let a_test: Vec<f64> = test.iter().map(|&i| a[i]).collect();
            let mut flags: Vec<String> = om.flags().iter().map(|f| format!("outcome:{f}")).collect();
            // The identity shift has r = 1 exactly; no classifier is needed.
            let ratio = if shift.is_identity() {
                vec![RatioValue { raw: 1.0, r: 1.0 }; test.len()]
            } else {
                let rm = fit_ratio(
                    &w.select_rows(&train),
                    &a_train,
                    shift,
                    ratio_learner,
                    &cfg.ratio,
                    derive_seed(cfg.seed, 2 * k as u64 + 2),
                )
                .map_err(wrap)?;
                flags.extend(rm.classifier().flags().iter().map(|f| format!("ratio:{f}")));
                rm.evaluate(&w.select_rows(&test), &a_test).map_err(wrap)?
            };
            Ok(FoldOut {
                summary: FoldSummary {
                    fold: k,
                    n_train: train.len(),
                    n_test: test.len(),
                    outcome_ensemble: om.ensemble_summary().cloned(),
                    flags,
                },
                test,
                m_a,
                m_d,
                ratio,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let clip = |p: f64| p.clamp(cfg.outcome_clip, 1.0 - cfg.outcome_clip);
    let mut m_a = vec![0.0; n];
    let mut m_d = vec![0.0; n];
    let mut ratio = vec![RatioValue { raw: 1.0, r: 1.0 }; n];
    let mut summaries = Vec::with_capacity(v);
    for o in outs {
        for (j, &i) in o.test.iter().enumerate() {
            m_a[i] = clip(o.m_a[j]);
            m_d[i] = clip(o.m_d[j]);
            ratio[i] = o.ratio[j];
        }
        summaries.push(o.summary);
    }
    let r: Vec<f64> = ratio.iter().map(|v| v.r).collect();
    let outcome_cv_loss = Loss::SquaredError.eval(&ys, &m_a, None);

    let (psi_s, ic_s, epsilon) = match cfg.targeting {
        Targeting::Tmle => {
            let off: Vec<f64> = m_a.iter().map(|&p| logit(p)).collect();
            let eps = solve_fluctuation(&ys, &off, &r);
            let star_a: Vec<f64> = off.iter().map(|&o| expit(o + eps)).collect();
            let star_d: Vec<f64> = m_d.iter().map(|&p| expit(logit(p) + eps)).collect();
            let psi = crate::stats::mean(&star_d);
            let ic = (0..n).map(|i| r[i] * (ys[i] - star_a[i]) + star_d[i] - psi).collect::<Vec<_>>();
            (psi, ic, Some(eps))
        }
        Targeting::OneStep => {
            let terms: Vec<f64> = (0..n).map(|i| r[i] * (ys[i] - m_a[i]) + m_d[i]).collect();
            let psi = crate::stats::mean(&terms);
            (psi, terms.iter().map(|t| t - psi).collect(), None)
        }
    };
    let psi = scale.back(psi_s);
    let ic: Vec<f64> = ic_s.iter().map(|v| v * scale.range()).collect();
    let diagnostics = PointDiagnostics {
        targeting: cfg.targeting,
        epsilon,
        outcome_cv_loss,
        ratio_method: cfg.ratio.method,
        ratio_bounds: [cfg.ratio.r_min, cfg.ratio.r_max],
        positivity: profile_values(&ratio, cfg.ratio.violation_threshold, Some(cfg.ratio.min_mean_ratio)),
        y_range: [scale.back(0.0), scale.back(1.0)],
        unit_level_folds: unit_level,
        folds: summaries,
    };
    Ok(EstimateReport::assemble(
        EstimandKind::PointShift,
        psi,
        &y,
        ic,
        cluster,
        v,
        Diagnostics::Point(diagnostics),
    ))
}
