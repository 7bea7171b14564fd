//! Longitudinal panel `O = (W, A_1, L_2, ..., A_T, Y)` with binary,
//! never-repealed exposures.

use std::path::Path;

use super::table::{dense_index, Stratum};
use crate::error::{Error, Result};
use crate::io::fmt_f64;

#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalUnit {
    pub unit_id: String,
    pub cluster_id: String,
    pub baseline: Vec<f64>,
    /// `A_1..A_T`, each 0 or 1, non-decreasing.
    pub exposures: Vec<u8>,
    /// `L_2..L_T`; entry `t - 2` holds `L_t`.
    pub time_varying: Vec<Vec<f64>>,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalPanel {
    stratum: Stratum,
    horizon: usize,
    baseline_names: Vec<String>,
    time_varying_names: Vec<Vec<String>>,
    units: Vec<LongitudinalUnit>,
}

pub fn is_monotone(a: &[u8]) -> bool {
    a.iter().all(|&v| v <= 1) && a.windows(2).all(|w| w[0] <= w[1])
}

impl LongitudinalPanel {
    pub fn new(
        stratum: Stratum,
        horizon: usize,
        baseline_names: Vec<String>,
        time_varying_names: Vec<Vec<String>>,
        units: Vec<LongitudinalUnit>,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Data("longitudinal horizon must be at least 1".into()));
        }
        if time_varying_names.len() != horizon - 1 {
            return Err(Error::Data(format!(
                "expected {} time-varying blocks, got {}",
                horizon - 1,
                time_varying_names.len()
            )));
        }
        for u in &units {
            if u.exposures.len() != horizon {
                return Err(Error::Data(format!("unit {} has {} exposure steps", u.unit_id, u.exposures.len())));
            }
            if !is_monotone(&u.exposures) {
                return Err(Error::Data(format!(
                    "unit {} has a non-monotone exposure trajectory {:?} (laws are never repealed)",
                    u.unit_id, u.exposures
                )));
            }
            if u.baseline.len() != baseline_names.len()
                || u.time_varying.len() != horizon - 1
                || u
                    .time_varying
                    .iter()
                    .zip(&time_varying_names)
                    .any(|(v, n)| v.len() != n.len())
            {
                return Err(Error::Data(format!("unit {} has ragged covariates", u.unit_id)));
            }
            if !u.y.is_finite()
                || u.baseline.iter().chain(u.time_varying.iter().flatten()).any(|v| !v.is_finite())
            {
                return Err(Error::Data(format!("unit {} has missing values", u.unit_id)));
            }
        }
        Ok(LongitudinalPanel {
            stratum,
            horizon,
            baseline_names,
            time_varying_names,
            units,
        })
    }

    pub fn stratum(&self) -> Stratum {
        self.stratum
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn units(&self) -> &[LongitudinalUnit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn baseline_names(&self) -> &[String] {
        &self.baseline_names
    }

    pub fn time_varying_names(&self) -> &[Vec<String>] {
        &self.time_varying_names
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.y).collect()
    }

    pub fn cluster_index(&self) -> (Vec<usize>, usize) {
        dense_index(self.units.iter().map(|u| u.cluster_id.as_str()))
    }

    /// Names of the history `(W, L_2..L_t, A_1..A_t)` used at step `t`
    /// (1-based), exposures last.
    pub fn history_names(&self, t: usize) -> Vec<String> {
        let mut names: Vec<String> = self.baseline_names.iter().map(|n| format!("W.{n}")).collect();
        for s in 2..=t {
            names.extend(self.time_varying_names[s - 2].iter().map(|n| format!("L.{s}.{n}")));
        }
        names.extend((1..=t).map(|s| format!("A.{s}")));
        names
    }

    /// History row of `unit` at step `t`, with `a_t` replaced by
    /// `current_exposure`.
    pub fn history_row(&self, unit: usize, t: usize, current_exposure: f64, out: &mut Vec<f64>) {
        let u = &self.units[unit];
        out.extend_from_slice(&u.baseline);
        for s in 2..=t {
            out.extend_from_slice(&u.time_varying[s - 2]);
        }
        out.extend(u.exposures[..t - 1].iter().map(|&a| f64::from(a)));
        out.push(current_exposure);
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["unit_id".to_string(), "cluster_id".into(), "stratum".into()];
        header.extend(self.baseline_names.iter().map(|n| format!("W.{n}")));
        header.extend((1..=self.horizon).map(|t| format!("A.{t}")));
        for (k, names) in self.time_varying_names.iter().enumerate() {
            header.extend(names.iter().map(|n| format!("L.{}.{n}", k + 2)));
        }
        header.push("Y".into());
        w.write_record(&header)?;
        for u in &self.units {
            let mut rec = vec![u.unit_id.clone(), u.cluster_id.clone(), self.stratum.to_string()];
            rec.extend(u.baseline.iter().map(|&v| fmt_f64(v)));
            rec.extend(u.exposures.iter().map(|a| a.to_string()));
            rec.extend(u.time_varying.iter().flatten().map(|&v| fmt_f64(v)));
            rec.push(fmt_f64(u.y));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("longitudinal.csv", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn {
                file: "longitudinal.csv".into(),
                column: name.into(),
            })
        };
        let (iu, ic, iy) = (find("unit_id")?, find("cluster_id")?, find("Y")?);
        let is = headers.iter().position(|h| h == "stratum");
        let mut w_cols = Vec::new();
        let mut a_cols: Vec<(usize, usize)> = Vec::new();
        let mut l_cols: Vec<(usize, usize, String)> = Vec::new();
        for (i, h) in headers.iter().enumerate() {
            if let Some(n) = h.strip_prefix("W.") {
                w_cols.push((i, n.to_string()));
            } else if let Some(t) = h.strip_prefix("A.") {
                let t: usize = t
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad exposure column `{h}`")))?;
                a_cols.push((t, i));
            } else if let Some(rest) = h.strip_prefix("L.") {
                let (t, n) = rest
                    .split_once('.')
                    .ok_or_else(|| Error::InvalidInput(format!("bad covariate column `{h}`")))?;
                let t: usize = t
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad covariate column `{h}`")))?;
                l_cols.push((t, i, n.to_string()));
            }
        }
        a_cols.sort();
        let horizon = a_cols.len();
        if horizon == 0 || a_cols.iter().enumerate().any(|(k, &(t, _))| t != k + 1) {
            return Err(Error::MissingColumn {
                file: "longitudinal.csv".into(),
                column: "A.1".into(),
            });
        }
        let mut tv_names: Vec<Vec<String>> = vec![Vec::new(); horizon - 1];
        let mut tv_idx: Vec<Vec<usize>> = vec![Vec::new(); horizon - 1];
        for (t, i, n) in l_cols {
            if t < 2 || t > horizon {
                return Err(Error::InvalidInput(format!("covariate step {t} outside 2..={horizon}")));
            }
            tv_names[t - 2].push(n);
            tv_idx[t - 2].push(i);
        }
        let mut stratum = Stratum::Late;
        let mut units = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                let raw = rec.get(i).unwrap_or("");
                raw.parse::<f64>().map_err(|_| {
                    Error::InvalidInput(format!("longitudinal.csv line {}: bad number `{raw}`", k + 2))
                })
            };
            if let Some(i) = is {
                stratum = rec.get(i).unwrap_or("LATE").parse()?;
            }
            let exposures = a_cols
                .iter()
                .map(|&(_, i)| match rec.get(i).unwrap_or("") {
                    "0" => Ok(0u8),
                    "1" => Ok(1u8),
                    other => Err(Error::InvalidInput(format!("line {}: exposure `{other}` not binary", k + 2))),
                })
                .collect::<Result<Vec<u8>>>()?;
            units.push(LongitudinalUnit {
                unit_id: rec.get(iu).unwrap_or("").to_string(),
                cluster_id: rec.get(ic).unwrap_or("").to_string(),
                baseline: w_cols.iter().map(|(i, _)| num(*i)).collect::<Result<_>>()?,
                exposures,
                time_varying: tv_idx
                    .iter()
                    .map(|idx| idx.iter().map(|&i| num(i)).collect::<Result<Vec<_>>>())
                    .collect::<Result<_>>()?,
                y: num(iy)?,
            });
        }
        LongitudinalPanel::new(
            stratum,
            horizon,
            w_cols.into_iter().map(|(_, n)| n).collect(),
            tv_names,
            units,
        )
    }

    pub fn read_csv_file(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f)
    }
}
