//! Co-occurrence and entanglement of state laws.
//!
//! Laws are coded per state-year as the proportion of the year in effect.
//! Absolute correlations across state-years show which provisions were
//! enacted together; the share of exposure variation explained by the
//! other laws shows how entangled the exposure is.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::panel::{proportion_of_year_in_effect, LawCode, LawDates};

/// Columns with standard deviation below this are treated as constant.
const CONSTANT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationKind {
    #[default]
    Pearson,
    Spearman,
}

/// Law codings by state-year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateYearTable {
    pub law_codes: Vec<String>,
    pub states: Vec<String>,
    pub years: Vec<i32>,
    /// One row per (state, year), states outer.
    pub values: Vec<Vec<f64>>,
}

impl StateYearTable {
    pub fn column(&self, code: &str) -> Option<Vec<f64>> {
        let j = self.law_codes.iter().position(|c| c == code)?;
        Some(self.values.iter().map(|r| r[j]).collect())
    }

    /// Rows belonging to `year`.
    pub fn year_rows(&self, year: i32) -> Vec<Vec<f64>> {
        let ny = self.years.len();
        self.years
            .iter()
            .position(|&y| y == year)
            .map(|k| (0..self.states.len()).map(|s| self.values[s * ny + k].clone()).collect())
            .unwrap_or_default()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["state_id".to_string(), "year".to_string()];
        header.extend(self.law_codes.iter().cloned());
        w.write_record(&header)?;
        let ny = self.years.len();
        for (i, row) in self.values.iter().enumerate() {
            let mut rec = vec![self.states[i / ny].clone(), self.years[i % ny].to_string()];
            rec.extend(row.iter().map(|&v| fmt_f64(v)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("state_year.csv", e))?;
        Ok(())
    }
}

/// Proportion-of-year coding of `codes` for every state and year. A law
/// without an effective date is coded 0 throughout.
pub fn state_year_law_table(laws: &LawDates, states: &[String], years: &[i32], codes: &[LawCode]) -> StateYearTable {
    let mut values = Vec::with_capacity(states.len() * years.len());
    for s in states {
        for &y in years {
            values.push(
                codes
                    .iter()
                    .map(|&c| laws.effective_date(s, c).map_or(0.0, |d| proportion_of_year_in_effect(d, y)))
                    .collect(),
            );
        }
    }
    StateYearTable {
        law_codes: codes.iter().map(|c| c.to_string()).collect(),
        states: states.to_vec(),
        years: years.to_vec(),
        values,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceMatrix {
    pub law_codes: Vec<String>,
    pub kind: CorrelationKind,
    pub n_rows: usize,
    /// Absolute correlations; `None` where either law is constant.
    pub values: Vec<Vec<Option<f64>>>,
    /// Laws without variation.
    pub undefined: Vec<String>,
}

impl CooccurrenceMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.law_codes.iter().position(|c| c == a)?;
        let j = self.law_codes.iter().position(|c| c == b)?;
        self.values[i][j]
    }
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        // average rank for ties
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn centered(x: &[f64]) -> (Vec<f64>, f64) {
    let m = crate::stats::mean(x);
    let c: Vec<f64> = x.iter().map(|v| v - m).collect();
    let ss = c.iter().map(|v| v * v).sum::<f64>();
    (c, ss)
}

/// Absolute pairwise correlation of the columns of `rows`.
pub fn cooccurrence_matrix(rows: &[Vec<f64>], law_codes: &[String], kind: CorrelationKind) -> Result<CooccurrenceMatrix> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::InvalidInput("co-occurrence needs at least two state-years".into()));
    }
    let p = law_codes.len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::InvalidInput("row width does not match law codes".into()));
    }
    let cols: Vec<(Vec<f64>, f64)> = (0..p)
        .map(|j| {
            let c: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            centered(&match kind {
                CorrelationKind::Pearson => c,
                CorrelationKind::Spearman => ranks(&c),
            })
        })
        .collect();
    let constant: Vec<bool> = cols.iter().map(|(_, ss)| (ss / n as f64).sqrt() < CONSTANT_TOL).collect();
    let mut values = vec![vec![None; p]; p];
    for i in 0..p {
        for j in i..p {
            if constant[i] || constant[j] {
                continue;
            }
            let v = if i == j {
                1.0
            } else {
                let sxy: f64 = cols[i].0.iter().zip(&cols[j].0).map(|(a, b)| a * b).sum();
                (sxy / (cols[i].1.sqrt() * cols[j].1.sqrt())).abs().min(1.0)
            };
            values[i][j] = Some(v);
            values[j][i] = Some(v);
        }
    }
    Ok(CooccurrenceMatrix {
        law_codes: law_codes.to_vec(),
        kind,
        n_rows: n,
        values,
        undefined: (0..p).filter(|&j| constant[j]).map(|j| law_codes[j].clone()).collect(),
    })
}

/// Long-format heatmap rows `panel,law_a,law_b,abs_corr`; constant laws
/// are written as `UNDEFINED`.
pub fn write_heatmap_csv<W: Write>(writer: W, panels: &[(String, CooccurrenceMatrix)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["panel", "law_a", "law_b", "abs_corr"])?;
    for (label, m) in panels {
        for (i, a) in m.law_codes.iter().enumerate() {
            for (j, b) in m.law_codes.iter().enumerate() {
                let v = m.values[i][j].map_or("UNDEFINED".to_string(), fmt_f64);
                w.write_record([label.as_str(), a, b, &v])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("heatmap.csv", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceExplained {
    pub r_squared: f64,
    pub n: usize,
    pub n_covariates: usize,
    pub rank: usize,
    /// Covariates were collinear or constant; the fit used a pseudoinverse.
    pub collinear: bool,
}

/// R² of the least-squares regression of `exposure` on `covariates`
/// (given as columns) with an intercept.
pub fn variance_explained(exposure: &[f64], covariates: &[Vec<f64>]) -> Result<VarianceExplained> {
    let n = exposure.len();
    let p = covariates.len();
    if n <= p + 1 {
        return Err(Error::InvalidInput(format!("variance_explained needs n > {} rows, got {n}", p + 1)));
    }
    if covariates.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidInput("covariate length does not match exposure".into()));
    }
    let (yc, tss) = centered(exposure);
    if (tss / n as f64).sqrt() < CONSTANT_TOL {
        return Err(Error::InvalidInput("exposure has no variation".into()));
    }
    // Standardized columns make the rank tolerance scale-free.
    let mut x = DMatrix::<f64>::zeros(n, p);
    let mut constant = false;
    for (j, c) in covariates.iter().enumerate() {
        let (cc, ss) = centered(c);
        let sd = (ss / n as f64).sqrt();
        if sd < CONSTANT_TOL {
            constant = true;
            continue;
        }
        for i in 0..n {
            x[(i, j)] = cc[i] / sd;
        }
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = smax * 1e-10 * (n.max(p) as f64);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let y = nalgebra::DVector::from_vec(yc);
    let beta = if rank == 0 {
        nalgebra::DVector::zeros(p)
    } else {
        svd.solve(&y, tol).map_err(|e| Error::Data(format!("least squares failed: {e}")))?
    };
    let resid = &y - &x * beta;
    let r2 = (1.0 - resid.norm_squared() / tss).clamp(0.0, 1.0);
    Ok(VarianceExplained {
        r_squared: r2,
        n,
        n_covariates: p,
        rank,
        collinear: constant || rank < p,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub law_a: String,
    pub law_b: String,
    pub abs_corr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub laws: Vec<String>,
    /// Pairs above the threshold that joined this bundle.
    pub merges: Vec<Merge>,
}

/// Single-linkage grouping of laws whose absolute correlation exceeds
/// `threshold`. Advisory only.
pub fn bundle_recommendation(m: &CooccurrenceMatrix, threshold: f64) -> Vec<Bundle> {
    let p = m.law_codes.len();
    let mut parent: Vec<usize> = (0..p).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while parent[r] != r {
            r = parent[r];
        }
        parent[i] = r;
        r
    }
    let mut merges = Vec::new();
    for i in 0..p {
        for j in i + 1..p {
            if let Some(v) = m.values[i][j] {
                if v > threshold {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                    merges.push((i, j, v));
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Bundle> = BTreeMap::new();
    for i in 0..p {
        let r = find(&mut parent, i);
        groups.entry(r).or_insert_with(|| Bundle { laws: Vec::new(), merges: Vec::new() }).laws.push(m.law_codes[i].clone());
    }
    for (i, j, v) in merges {
        let r = find(&mut parent, i);
        groups.get_mut(&r).expect("root exists").merges.push(Merge {
            law_a: m.law_codes[i].clone(),
            law_b: m.law_codes[j].clone(),
            abs_corr: v,
        });
    }
    groups.into_values().collect()
}
