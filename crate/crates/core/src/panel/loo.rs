//! Leave-one-out within-state summaries used as interference covariates.

use super::table::{PanelRow, PanelTable};

pub const LOO_PREFIX: &str = "loo_";
pub const LOO_EXPOSURE: &str = "loo_A";

fn loo_means(values: &[f64], cluster: &[usize], n_clusters: usize) -> Vec<f64> {
    let mut sum = vec![0.0; n_clusters];
    let mut count = vec![0usize; n_clusters];
    for (&v, &c) in values.iter().zip(cluster) {
        sum[c] += v;
        count[c] += 1;
    }
    values
        .iter()
        .zip(cluster)
        .map(|(&v, &c)| {
            if count[c] < 2 {
                v
            } else {
                (sum[c] - v) / (count[c] - 1) as f64
            }
        })
        .collect()
}

/// Appends, for every unit, the mean of each covariate and of the exposure
/// over the other units of its state. A state with a single county uses
/// the county's own values.
pub fn augment_with_loo_state_summaries(panel: &PanelTable) -> PanelTable {
    let (cluster, m) = panel.cluster_index();
    let p = panel.covariate_names().len();
    let rows = panel.rows();

    let mut summaries: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r.w[j]).collect();
            loo_means(&col, &cluster, m)
        })
        .collect();
    summaries.push(loo_means(&panel.exposures(), &cluster, m));

    let mut names = panel.covariate_names().to_vec();
    names.extend(panel.covariate_names().iter().map(|n| format!("{LOO_PREFIX}{n}")));
    names.push(LOO_EXPOSURE.to_string());

    let new_rows = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut w = r.w.clone();
            w.extend(summaries.iter().map(|s| s[i]));
            PanelRow { w, ..r.clone() }
        })
        .collect();
    panel.with_covariates(names, new_rows)
}
