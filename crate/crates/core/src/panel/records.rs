//! Raw county-year and law-date records and their CSV readers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An event count as delivered by the data vendor; small cells are masked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventCount {
    Count(u64),
    Masked,
}

impl EventCount {
    pub fn value(self) -> Option<u64> {
        match self {
            EventCount::Count(c) => Some(c),
            EventCount::Masked => None,
        }
    }

    pub fn is_masked(self) -> bool {
        matches!(self, EventCount::Masked)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountyYearRecord {
    pub county_id: String,
    pub state_id: String,
    pub year: i32,
    pub population_12plus: u64,
    pub naloxone: EventCount,
    pub overdose: EventCount,
    /// `None` is UNKNOWN.
    pub pharmacy_count: Option<u64>,
    /// `None` is UNKNOWN.
    pub opioid_dispensing_present: Option<bool>,
    pub covariates: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[allow(non_camel_case_types)]
pub enum LawCode {
    NAL_P1,
    NAL_P2,
    NAL_P3,
    NAL_P4,
    GSL,
    PMCL,
    MML,
    PDMP_OPERATIONAL,
    PDMP_MUSTQUERY,
}

impl LawCode {
    pub const ALL: [LawCode; 9] = [
        LawCode::NAL_P1,
        LawCode::NAL_P2,
        LawCode::NAL_P3,
        LawCode::NAL_P4,
        LawCode::GSL,
        LawCode::PMCL,
        LawCode::MML,
        LawCode::PDMP_OPERATIONAL,
        LawCode::PDMP_MUSTQUERY,
    ];

    /// NAL provisions 1-3 bundled with the Good Samaritan law.
    pub fn nal_gsl_bundle() -> Vec<LawCode> {
        vec![LawCode::NAL_P1, LawCode::NAL_P2, LawCode::NAL_P3, LawCode::GSL]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LawCode::NAL_P1 => "NAL_P1",
            LawCode::NAL_P2 => "NAL_P2",
            LawCode::NAL_P3 => "NAL_P3",
            LawCode::NAL_P4 => "NAL_P4",
            LawCode::GSL => "GSL",
            LawCode::PMCL => "PMCL",
            LawCode::MML => "MML",
            LawCode::PDMP_OPERATIONAL => "PDMP_OPERATIONAL",
            LawCode::PDMP_MUSTQUERY => "PDMP_MUSTQUERY",
        }
    }
}

impl fmt::Display for LawCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LawCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LawCode::ALL
            .iter()
            .copied()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidInput(format!("unknown law code `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LawDateRecord {
    pub state_id: String,
    pub law_code: LawCode,
    pub effective_date: NaiveDate,
}

/// Effective dates keyed by state then law. Laws are never repealed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LawDates {
    dates: BTreeMap<String, BTreeMap<LawCode, NaiveDate>>,
}

impl LawDates {
    pub fn from_records(records: impl IntoIterator<Item = LawDateRecord>) -> Result<Self> {
        let mut dates: BTreeMap<String, BTreeMap<LawCode, NaiveDate>> = BTreeMap::new();
        for r in records {
            let per_state = dates.entry(r.state_id.clone()).or_default();
            if per_state.insert(r.law_code, r.effective_date).is_some() {
                return Err(Error::Data(format!(
                    "duplicate effective date for state {} law {}",
                    r.state_id, r.law_code
                )));
            }
        }
        Ok(LawDates { dates })
    }

    pub fn effective_date(&self, state: &str, code: LawCode) -> Option<NaiveDate> {
        self.dates.get(state).and_then(|m| m.get(&code)).copied()
    }

    /// Earliest effective date among `codes` for `state`.
    pub fn earliest(&self, state: &str, codes: &[LawCode]) -> Option<NaiveDate> {
        codes
            .iter()
            .filter_map(|&c| self.effective_date(state, c))
            .min()
    }

    pub fn states(&self) -> impl Iterator<Item = &str> {
        self.dates.keys().map(String::as_str)
    }

    pub fn records(&self) -> Vec<LawDateRecord> {
        self.dates
            .iter()
            .flat_map(|(s, m)| {
                m.iter().map(move |(&code, &d)| LawDateRecord {
                    state_id: s.clone(),
                    law_code: code,
                    effective_date: d,
                })
            })
            .collect()
    }
}

pub const COUNTY_YEAR_COLUMNS: [&str; 8] = [
    "county_id",
    "state_id",
    "year",
    "pop12plus",
    "naloxone_count",
    "overdose_count",
    "pharmacy_count",
    "opioid_dispensing_flag",
];

pub const LAW_DATE_COLUMNS: [&str; 3] = ["state_id", "law_code", "effective_date"];

fn is_unknown(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t.eq_ignore_ascii_case("NA") || t.eq_ignore_ascii_case("UNKNOWN")
}

fn parse_count(s: &str, what: &str, line: usize) -> Result<EventCount> {
    let t = s.trim();
    if t.eq_ignore_ascii_case("MASKED") || is_unknown(t) {
        return Ok(EventCount::Masked);
    }
    t.parse::<u64>()
        .map(EventCount::Count)
        .map_err(|_| Error::InvalidInput(format!("line {line}: bad {what} `{t}`")))
}

fn parse_opt_u64(s: &str, what: &str, line: usize) -> Result<Option<u64>> {
    if is_unknown(s) {
        return Ok(None);
    }
    s.trim()
        .parse::<u64>()
        .map(Some)
        .map_err(|_| Error::InvalidInput(format!("line {line}: bad {what} `{}`", s.trim())))
}

fn parse_flag(s: &str, line: usize) -> Result<Option<bool>> {
    if is_unknown(s) {
        return Ok(None);
    }
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(Some(true)),
        "0" | "false" | "no" => Ok(Some(false)),
        other => Err(Error::InvalidInput(format!(
            "line {line}: bad opioid_dispensing_flag `{other}`"
        ))),
    }
}

fn column_index(headers: &csv::StringRecord, file: &str, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MissingColumn {
            file: file.to_string(),
            column: name.to_string(),
        })
}

/// Reads `county_year.csv`. Columns beyond the fixed schema are covariates.
pub fn read_county_year<R: std::io::Read>(reader: R) -> Result<Vec<CountyYearRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let idx: Vec<usize> = COUNTY_YEAR_COLUMNS
        .iter()
        .map(|c| column_index(&headers, "county_year.csv", c))
        .collect::<Result<_>>()?;
    let fixed: BTreeSet<usize> = idx.iter().copied().collect();
    let covariate_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| !fixed.contains(i))
        .map(|(i, h)| (i, h.trim().to_string()))
        .collect();

    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let get = |i: usize| rec.get(idx[i]).unwrap_or("");
        let year = get(2)
            .parse::<i32>()
            .map_err(|_| Error::InvalidInput(format!("line {line}: bad year `{}`", get(2))))?;
        let population_12plus = get(3).parse::<u64>().map_err(|_| {
            Error::InvalidInput(format!("line {line}: bad pop12plus `{}`", get(3)))
        })?;
        let mut covariates = BTreeMap::new();
        for (i, name) in &covariate_cols {
            let raw = rec.get(*i).unwrap_or("");
            let v = raw.parse::<f64>().map_err(|_| {
                Error::InvalidInput(format!("line {line}: bad covariate {name} `{raw}`"))
            })?;
            covariates.insert(name.clone(), v);
        }
        out.push(CountyYearRecord {
            county_id: get(0).to_string(),
            state_id: get(1).to_string(),
            year,
            population_12plus,
            naloxone: parse_count(get(4), "naloxone_count", line)?,
            overdose: parse_count(get(5), "overdose_count", line)?,
            pharmacy_count: parse_opt_u64(get(6), "pharmacy_count", line)?,
            opioid_dispensing_present: parse_flag(get(7), line)?,
            covariates,
        });
    }
    Ok(out)
}

pub fn read_county_year_file(path: &Path) -> Result<Vec<CountyYearRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_county_year(f)
}

/// Reads `law_dates.csv` with ISO-8601 effective dates.
pub fn read_law_dates<R: std::io::Read>(reader: R) -> Result<LawDates> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let idx: Vec<usize> = LAW_DATE_COLUMNS
        .iter()
        .map(|c| column_index(&headers, "law_dates.csv", c))
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let date_raw = rec.get(idx[2]).unwrap_or("");
        let effective_date = NaiveDate::parse_from_str(date_raw, "%Y-%m-%d").map_err(|_| {
            Error::InvalidInput(format!("line {line}: bad effective_date `{date_raw}`"))
        })?;
        records.push(LawDateRecord {
            state_id: rec.get(idx[0]).unwrap_or("").to_string(),
            law_code: rec.get(idx[1]).unwrap_or("").parse()?,
            effective_date,
        });
    }
    LawDates::from_records(records)
}

pub fn read_law_dates_file(path: &Path) -> Result<LawDates> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_law_dates(f)
}

fn fmt_count(c: EventCount) -> String {
    match c {
        EventCount::Count(v) => v.to_string(),
        EventCount::Masked => "MASKED".to_string(),
    }
}

/// Writes records in the `county_year.csv` schema. Covariate columns follow
/// the fixed columns in the order of the first record's map.
pub fn write_county_year<W: std::io::Write>(
    writer: W,
    records: &[CountyYearRecord],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let cov_names: Vec<String> = records
        .first()
        .map(|r| r.covariates.keys().cloned().collect())
        .unwrap_or_default();
    let mut header: Vec<String> = COUNTY_YEAR_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(cov_names.iter().cloned());
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.county_id.clone(),
            r.state_id.clone(),
            r.year.to_string(),
            r.population_12plus.to_string(),
            fmt_count(r.naloxone),
            fmt_count(r.overdose),
            r.pharmacy_count.map_or("NA".to_string(), |v| v.to_string()),
            r.opioid_dispensing_present
                .map_or("NA".to_string(), |v| if v { "1" } else { "0" }.to_string()),
        ];
        for name in &cov_names {
            row.push(crate::io::fmt_f64(r.covariates.get(name).copied().unwrap_or(f64::NAN)));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("county_year.csv", e))?;
    Ok(())
}

pub fn write_law_dates<W: std::io::Write>(writer: W, laws: &LawDates) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(LAW_DATE_COLUMNS)?;
    for r in laws.records() {
        w.write_record([
            r.state_id.as_str(),
            r.law_code.as_str(),
            &r.effective_date.format("%Y-%m-%d").to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("law_dates.csv", e))?;
    Ok(())
}
