use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::density_ratio::RatioMethod;
use crate::learners::{EnsembleSpec, LearnerSpec, Loss};
use crate::panel::{LongitudinalPanel, LongitudinalUnit, PanelRow, PanelTable, Stratum};
use crate::policy::{BoundedAdditiveShift, LongitudinalDelayPolicy, PointShift};

fn linear() -> EnsembleSpec {
    EnsembleSpec::single(LearnerSpec::GlmLinear { l2: 0.0 }, Loss::SquaredError)
}

fn logistic() -> EnsembleSpec {
    EnsembleSpec::single(LearnerSpec::GlmLogistic { l2: 0.0 }, Loss::LogLoss)
}

fn point_panel(n: usize, clusters: usize, seed: u64) -> PanelTable {
    let mut rng = crate::stats::rng(seed, 1);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let rows = (0..n)
        .map(|i| {
            let w1: f64 = rng.random_range(-1.0..1.0);
            let a = (0.5 * (w1 + 2.0) + 2.79 * rng.random::<f64>()).min(4.79);
            PanelRow {
                unit_id: format!("u{i}"),
                cluster_id: format!("s{}", i % clusters),
                w: vec![w1],
                a,
                y: 10.0 + 2.0 * a + 3.0 * w1 + noise.sample(&mut rng),
            }
        })
        .collect();
    PanelTable::new(Stratum::Late, vec!["W1".into()], rows).unwrap()
}

fn binary_panel(n: usize, horizon: usize, seed: u64, never: bool) -> LongitudinalPanel {
    let mut rng = crate::stats::rng(seed, 2);
    let units = (0..n)
        .map(|i| {
            let w: f64 = if rng.random::<bool>() { 1.0 } else { 0.0 };
            let mut a = Vec::with_capacity(horizon);
            let mut l = Vec::new();
            let mut on = 0u8;
            for t in 0..horizon {
                if t > 0 {
                    l.push(vec![w + rng.random::<f64>()]);
                }
                if on == 0 && !never && rng.random::<f64>() < 0.2 + 0.2 * w {
                    on = 1;
                }
                a.push(on);
            }
            let exposed = a.iter().map(|&x| f64::from(x)).sum::<f64>();
            LongitudinalUnit {
                unit_id: format!("u{i}"),
                cluster_id: format!("s{}", i % 12),
                baseline: vec![w],
                exposures: a,
                time_varying: l,
                y: 1.0 + exposed + w + rng.random::<f64>(),
            }
        })
        .collect();
    let tv = (2..=horizon).map(|_| vec!["L".to_string()]).collect();
    LongitudinalPanel::new(Stratum::Late, horizon, vec!["W".into()], tv, units).unwrap()
}

fn bounded() -> PointShift {
    PointShift::Bounded(BoundedAdditiveShift::new(1.0, 2.0, 4.79).unwrap())
}

#[test]
fn identity_shift_has_zero_contrast() {
    let p = point_panel(300, 10, 1);
    let r = estimate_point_shift(&p, &PointShift::Identity, &linear(), &logistic(), &EstimatorConfig::default()).unwrap();
    assert!(r.contrast_hat.abs() < 1e-8, "{}", r.contrast_hat);
}

#[test]
fn fitted_identity_ratio_is_near_one() {
    let p = point_panel(500, 10, 2);
    let r = estimate_point_shift(&p, &PointShift::Additive(0.0), &linear(), &logistic(), &EstimatorConfig::default())
        .unwrap();
    assert!(r.contrast_hat.abs() < 1e-8);
    // Through a real classifier, a tiny shift is still nearly the identity.
    let r = estimate_point_shift(&p, &PointShift::Additive(1e-9), &linear(), &logistic(), &EstimatorConfig::default())
        .unwrap();
    let prof = r.diagnostics.positivity().unwrap();
    assert!((prof.mean - 1.0).abs() < 0.02, "{}", prof.mean);
    assert!(r.contrast_hat.abs() < 0.05);
}

#[test]
fn targeting_solves_estimating_equation() {
    let p = point_panel(400, 10, 3);
    let r = estimate_point_shift(&p, &bounded(), &linear(), &logistic(), &EstimatorConfig::default()).unwrap();
    assert!(r.mean_ic.abs() < 1e-6, "{}", r.mean_ic);
    let y = p.outcomes();
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!(r.psi_hat >= lo && r.psi_hat <= hi);
    // Linear truth: contrast = 2 E[d(A) - A].
    assert!(r.contrast_hat > 1.0 && r.contrast_hat < 4.0, "{}", r.contrast_hat);
}

#[test]
fn deterministic_under_seed() {
    let p = point_panel(200, 8, 4);
    let cfg = EstimatorConfig { seed: 11, ..Default::default() };
    let a = estimate_point_shift(&p, &bounded(), &linear(), &logistic(), &cfg).unwrap();
    let b = estimate_point_shift(&p, &bounded(), &linear(), &logistic(), &cfg).unwrap();
    assert_eq!(a.psi_hat.to_bits(), b.psi_hat.to_bits());
    assert_eq!(a.ic_values, b.ic_values);
}

#[test]
fn constant_outcome_is_degenerate() {
    let mut p = point_panel(50, 5, 5);
    let rows: Vec<PanelRow> = p.rows().iter().cloned().map(|mut r| {
        r.y = 7.0;
        r
    }).collect();
    p = PanelTable::new(Stratum::Late, vec!["W1".into()], rows).unwrap();
    let r = estimate_point_shift(&p, &bounded(), &linear(), &logistic(), &EstimatorConfig::default()).unwrap();
    assert_eq!(r.psi_hat, 7.0);
    assert_eq!(r.contrast_hat, 0.0);
    assert!(matches!(r.diagnostics, Diagnostics::Degenerate { .. }));
}

#[test]
fn one_step_matches_tmle_roughly() {
    let p = point_panel(400, 10, 6);
    let t = estimate_point_shift(&p, &bounded(), &linear(), &logistic(), &EstimatorConfig::default()).unwrap();
    let cfg = EstimatorConfig { targeting: Targeting::OneStep, ..Default::default() };
    let o = estimate_point_shift(&p, &bounded(), &linear(), &logistic(), &cfg).unwrap();
    assert!((t.psi_hat - o.psi_hat).abs() < 0.3);
    assert!(o.mean_ic.abs() < 1e-9);
}

#[test]
fn variance_reports_cluster_count() {
    let p = point_panel(300, 9, 7);
    let r = estimate_point_shift(&p, &bounded(), &linear(), &logistic(), &EstimatorConfig::default()).unwrap();
    let (c, _) = r.variance(crate::inference::VarianceMethod::ClusterRobust, 0.05).unwrap();
    assert_eq!(c.n_clusters, 9);
    assert!(c.few_clusters);
    assert!(c.se > 0.0);
}

#[test]
fn single_cluster_uses_unit_folds() {
    let p = point_panel(100, 1, 8);
    let r = estimate_point_shift(&p, &bounded(), &linear(), &logistic(), &EstimatorConfig::default()).unwrap();
    match &r.diagnostics {
        Diagnostics::Point(d) => assert!(d.unit_level_folds),
        _ => panic!(),
    }
    assert!(r.variance(crate::inference::VarianceMethod::ClusterRobust, 0.05).is_err());
}

#[test]
fn longitudinal_identity_cases() {
    let p = binary_panel(200, 3, 1, false);
    let pol = LongitudinalDelayPolicy::new(3, 0).unwrap();
    let r = estimate_longitudinal_delay(&p, &pol, &linear(), &logistic(), &EstimatorConfig::default()).unwrap();
    assert_eq!(r.contrast_hat, 0.0);
    let p = binary_panel(200, 3, 1, true);
    let pol = LongitudinalDelayPolicy::new(3, 2).unwrap();
    let r = estimate_longitudinal_delay(&p, &pol, &linear(), &logistic(), &EstimatorConfig::default()).unwrap();
    assert_eq!(r.contrast_hat, 0.0);
}

#[test]
fn longitudinal_targets_and_lowers_mean() {
    let p = binary_panel(1500, 4, 2, false);
    let pol = LongitudinalDelayPolicy::new(4, 2).unwrap();
    let r = estimate_longitudinal_delay(&p, &pol, &linear(), &logistic(), &EstimatorConfig::default()).unwrap();
    assert!(r.mean_ic.abs() < 1e-6, "{}", r.mean_ic);
    // Outcome increases with exposed years, and the delay removes some.
    assert!(r.contrast_hat < 0.0, "{}", r.contrast_hat);
    match &r.diagnostics {
        Diagnostics::Longitudinal(d) => {
            assert_eq!(d.cohorts.values().sum::<usize>(), 1500);
            assert!(d.nodes.iter().all(|n| n.epsilon.is_some()));
        }
        _ => panic!(),
    }
}

#[test]
fn horizon_one_reduces_to_point_estimator() {
    let lp = binary_panel(400, 1, 3, false);
    let rows = lp
        .units()
        .iter()
        .map(|u| PanelRow {
            unit_id: u.unit_id.clone(),
            cluster_id: u.cluster_id.clone(),
            w: u.baseline.clone(),
            a: f64::from(u.exposures[0]),
            y: u.y,
        })
        .collect();
    let pp = PanelTable::new(Stratum::Late, vec!["W".into()], rows).unwrap();
    let mut cfg = EstimatorConfig::default();
    cfg.ratio.method = RatioMethod::BinaryPropensity;
    let pol = LongitudinalDelayPolicy::new(1, 1).unwrap();
    let l = estimate_longitudinal_delay(&lp, &pol, &linear(), &logistic(), &cfg).unwrap();
    let p = estimate_point_shift(&pp, &PointShift::Static(0.0), &linear(), &logistic(), &cfg).unwrap();
    assert!((l.psi_hat - p.psi_hat).abs() < 1e-6, "{} vs {}", l.psi_hat, p.psi_hat);
    for (a, b) in l.ic_values.iter().zip(&p.ic_values) {
        assert!((a - b).abs() < 1e-6);
    }
}
