//! Influence-curve based standard errors and Wald intervals.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::stats::normal_quantile;

/// Below this many clusters the normal approximation is flagged.
pub const FEW_CLUSTERS: usize = 30;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    #[default]
    ClusterRobust,
    Iid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteredVariance {
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub alpha: f64,
    pub n_clusters: usize,
    pub method: VarianceMethod,
    pub few_clusters: bool,
}

/// `estimate -/+ z_{1 - alpha/2} * se`.
pub fn confidence_interval(estimate: f64, se: f64, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(se >= 0.0) {
        return Err(Error::Domain(format!("standard error must be >= 0, got {se}")));
    }
    let z = normal_quantile(1.0 - alpha / 2.0);
    Ok((estimate - z * se, estimate + z * se))
}

/// Cluster-summed influence-curve variance with the `M / (M - 1)` correction:
/// `SE^2 = M / (M - 1) * sum_c (S_c / n)^2`.
pub fn cluster_robust_se<C: Ord>(ic: &[f64], clusters: &[C], estimate: f64, alpha: f64) -> Result<ClusteredVariance> {
    if ic.len() != clusters.len() {
        return Err(Error::InvalidInput(format!(
            "{} influence values but {} cluster ids",
            ic.len(),
            clusters.len()
        )));
    }
    let mut sums: BTreeMap<&C, f64> = BTreeMap::new();
    for (v, c) in ic.iter().zip(clusters) {
        *sums.entry(c).or_default() += v;
    }
    let m = sums.len();
    if m < 2 {
        return Err(Error::SingleCluster);
    }
    let n = ic.len() as f64;
    let ss: f64 = sums.values().map(|s| (s / n).powi(2)).sum();
    let se = (m as f64 / (m as f64 - 1.0) * ss).sqrt();
    let (ci_low, ci_high) = confidence_interval(estimate, se, alpha)?;
    Ok(ClusteredVariance {
        estimate,
        se,
        ci_low,
        ci_high,
        alpha,
        n_clusters: m,
        method: VarianceMethod::ClusterRobust,
        few_clusters: m < FEW_CLUSTERS,
    })
}

/// Naive independent-units variance `SE^2 = sum IC^2 / n^2`.
pub fn iid_se(ic: &[f64], estimate: f64, alpha: f64) -> Result<ClusteredVariance> {
    if ic.is_empty() {
        return Err(Error::InvalidInput("no influence values".into()));
    }
    let n = ic.len() as f64;
    let se = (ic.iter().map(|v| v * v).sum::<f64>() / (n * n)).sqrt();
    let (ci_low, ci_high) = confidence_interval(estimate, se, alpha)?;
    Ok(ClusteredVariance {
        estimate,
        se,
        ci_low,
        ci_high,
        alpha,
        n_clusters: ic.len(),
        method: VarianceMethod::Iid,
        few_clusters: false,
    })
}

/// One row of the results table: a (stratum, outcome, estimand) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub stratum: String,
    pub outcome: String,
    pub estimand: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    pub n_clusters: usize,
}

pub fn write_results_table<W: std::io::Write>(rows: &[ResultRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["stratum", "outcome", "estimand", "estimate", "se", "ci_low", "ci_high", "n", "n_clusters"])?;
    for r in rows {
        w.write_record([
            r.stratum.clone(),
            r.outcome.clone(),
            r.estimand.clone(),
            fmt_f64(r.estimate),
            fmt_f64(r.se),
            fmt_f64(r.ci_low),
            fmt_f64(r.ci_high),
            r.n.to_string(),
            r.n_clusters.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("results table", e))?;
    Ok(())
}
