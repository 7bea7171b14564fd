//! Analysis-ready point-exposure panel.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Stratum {
    Early,
    Late,
}

impl Stratum {
    pub fn as_str(self) -> &'static str {
        match self {
            Stratum::Early => "EARLY",
            Stratum::Late => "LATE",
        }
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stratum {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "EARLY" => Ok(Stratum::Early),
            "LATE" => Ok(Stratum::Late),
            other => Err(Error::InvalidInput(format!("unknown stratum `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelRow {
    pub unit_id: String,
    pub cluster_id: String,
    pub w: Vec<f64>,
    /// Years of exposure, `>= 0`.
    pub a: f64,
    /// Outcome rate per 100,000.
    pub y: f64,
}

/// County-level observations for one stratum: baseline covariates `w`,
/// exposure `a`, outcome `y`, and the state the county belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelTable {
    stratum: Stratum,
    covariate_names: Vec<String>,
    rows: Vec<PanelRow>,
}

impl PanelTable {
    pub fn new(stratum: Stratum, covariate_names: Vec<String>, rows: Vec<PanelRow>) -> Result<Self> {
        let p = covariate_names.len();
        for r in &rows {
            if r.w.len() != p {
                return Err(Error::Data(format!(
                    "unit {} has {} covariates, expected {p}",
                    r.unit_id,
                    r.w.len()
                )));
            }
            if !r.a.is_finite() || r.a < 0.0 {
                return Err(Error::Data(format!("unit {} has invalid exposure {}", r.unit_id, r.a)));
            }
            if !r.y.is_finite() || r.w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("unit {} has missing values", r.unit_id)));
            }
        }
        Ok(PanelTable {
            stratum,
            covariate_names,
            rows,
        })
    }

    pub fn stratum(&self) -> Stratum {
        self.stratum
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn rows(&self) -> &[PanelRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Observed maximum of the exposure.
    pub fn exposure_max(&self) -> f64 {
        self.rows.iter().map(|r| r.a).fold(0.0, f64::max)
    }

    pub fn exposures(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.a).collect()
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.y).collect()
    }

    pub fn cluster_ids(&self) -> Vec<&str> {
        self.rows.iter().map(|r| r.cluster_id.as_str()).collect()
    }

    /// Dense cluster index per row, numbered in order of first appearance.
    pub fn cluster_index(&self) -> (Vec<usize>, usize) {
        dense_index(self.rows.iter().map(|r| r.cluster_id.as_str()))
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_index().1
    }

    pub(crate) fn with_covariates(&self, names: Vec<String>, rows: Vec<PanelRow>) -> Self {
        PanelTable {
            stratum: self.stratum,
            covariate_names: names,
            rows,
        }
    }

    /// Writes `panel.csv`; `shifted` adds an `A_shifted` column.
    pub fn write_csv<W: std::io::Write>(&self, writer: W, shifted: Option<&[f64]>) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["unit_id".to_string(), "cluster_id".into(), "stratum".into(), "A".into()];
        if shifted.is_some() {
            header.push("A_shifted".into());
        }
        header.push("Y".into());
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for (i, r) in self.rows.iter().enumerate() {
            let mut rec = vec![r.unit_id.clone(), r.cluster_id.clone(), self.stratum.to_string(), fmt_f64(r.a)];
            if let Some(s) = shifted {
                rec.push(fmt_f64(s[i]));
            }
            rec.push(fmt_f64(r.y));
            rec.extend(r.w.iter().map(|&v| fmt_f64(v)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("panel.csv", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn {
                file: "panel.csv".into(),
                column: name.into(),
            })
        };
        let (iu, ic, ia, iy) = (find("unit_id")?, find("cluster_id")?, find("A")?, find("Y")?);
        let is = headers.iter().position(|h| h == "stratum");
        let reserved = ["unit_id", "cluster_id", "stratum", "A", "A_shifted", "Y"];
        let cov: Vec<(usize, String)> = headers
            .iter()
            .enumerate()
            .filter(|(_, h)| !reserved.contains(h))
            .map(|(i, h)| (i, h.to_string()))
            .collect();
        let mut stratum = Stratum::Late;
        let mut rows = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                let raw = rec.get(i).unwrap_or("");
                raw.parse::<f64>().map_err(|_| {
                    Error::InvalidInput(format!("panel.csv line {}: bad number `{raw}`", k + 2))
                })
            };
            if let Some(i) = is {
                stratum = rec.get(i).unwrap_or("LATE").parse()?;
            }
            rows.push(PanelRow {
                unit_id: rec.get(iu).unwrap_or("").to_string(),
                cluster_id: rec.get(ic).unwrap_or("").to_string(),
                a: num(ia)?,
                y: num(iy)?,
                w: cov.iter().map(|(i, _)| num(*i)).collect::<Result<_>>()?,
            });
        }
        PanelTable::new(stratum, cov.into_iter().map(|(_, n)| n).collect(), rows)
    }

    pub fn read_csv_file(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f)
    }
}

pub(crate) fn dense_index<'a>(ids: impl Iterator<Item = &'a str>) -> (Vec<usize>, usize) {
    let mut map: BTreeMap<&str, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for id in ids {
        let next = map.len();
        out.push(*map.entry(id).or_insert(next));
    }
    (out, map.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(u: &str, c: &str, a: f64, y: f64, w: f64) -> PanelRow {
        PanelRow {
            unit_id: u.into(),
            cluster_id: c.into(),
            w: vec![w],
            a,
            y,
        }
    }

    #[test]
    fn csv_round_trip_keeps_values() {
        let t = PanelTable::new(
            Stratum::Early,
            vec!["w1".into()],
            vec![row("u1", "s1", 0.5, 10.25, -1.0), row("u2", "s2", 5.91, 0.0, 0.1)],
        )
        .unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf, Some(&[2.5, 5.91])).unwrap();
        let back = PanelTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.exposure_max(), 5.91);
    }

    #[test]
    fn rejects_negative_exposure_and_missing() {
        assert!(PanelTable::new(Stratum::Late, vec!["w".into()], vec![row("u", "s", -0.1, 1.0, 0.0)]).is_err());
        assert!(PanelTable::new(Stratum::Late, vec!["w".into()], vec![row("u", "s", 1.0, f64::NAN, 0.0)]).is_err());
    }

    #[test]
    fn cluster_index_is_dense() {
        let t = PanelTable::new(
            Stratum::Late,
            vec!["w".into()],
            vec![row("a", "x", 1.0, 1.0, 0.0), row("b", "y", 1.0, 1.0, 0.0), row("c", "x", 1.0, 1.0, 0.0)],
        )
        .unwrap();
        assert_eq!(t.cluster_index(), (vec![0, 1, 0], 2));
    }
}
