//! Builds analysis panels from raw county-year and law-date tables.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::longitudinal::{LongitudinalPanel, LongitudinalUnit};
use super::records::{CountyYearRecord, EventCount, LawCode, LawDates};
use super::rules::{
    compute_rate, exposure_years, impute_masked_dispensing, in_effect_during_year,
    proportion_of_year_in_effect,
};
use super::table::{PanelRow, PanelTable, Stratum};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    /// Retail pharmacy naloxone dispensations.
    Naloxone,
    /// Opioid overdose deaths.
    Overdose,
}

fn default_bundle() -> Vec<LawCode> {
    LawCode::nal_gsl_bundle()
}

fn default_policy_covariates() -> BTreeMap<String, Vec<LawCode>> {
    BTreeMap::from([
        ("PMCL".to_string(), vec![LawCode::PMCL]),
        ("MML".to_string(), vec![LawCode::MML]),
        (
            "PDMP".to_string(),
            vec![LawCode::PDMP_OPERATIONAL, LawCode::PDMP_MUSTQUERY],
        ),
    ])
}

fn yes() -> bool {
    true
}

/// How one stratum's panel is cut out of the raw tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSpec {
    pub stratum: Stratum,
    pub outcome: OutcomeKind,
    pub baseline_year: i32,
    pub outcome_year: i32,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    /// Laws whose earliest enactment defines the exposure.
    #[serde(default = "default_bundle")]
    pub exposure_laws: Vec<LawCode>,
    /// State policy covariates, each the summed proportion-of-year of its laws.
    #[serde(default = "default_policy_covariates")]
    pub policy_covariates: BTreeMap<String, Vec<LawCode>>,
    #[serde(default = "yes")]
    pub clip_to_window: bool,
    /// Restrict to these states; all states when absent.
    #[serde(default)]
    pub states: Option<Vec<String>>,
}

impl IngestSpec {
    /// Late enactors: baseline 2013, outcome 2018, exposure window
    /// 2013-03-19 through 2017-12-31.
    pub fn late(outcome: OutcomeKind) -> Self {
        IngestSpec {
            stratum: Stratum::Late,
            outcome,
            baseline_year: 2013,
            outcome_year: 2018,
            window_start: NaiveDate::from_ymd_opt(2013, 3, 19).unwrap(),
            window_end: NaiveDate::from_ymd_opt(2017, 12, 31).unwrap(),
            exposure_laws: default_bundle(),
            policy_covariates: default_policy_covariates(),
            clip_to_window: true,
            states: None,
        }
    }

    /// Early enactors: baseline 2007, outcome 2013, exposure window 2007-2012.
    pub fn early(outcome: OutcomeKind) -> Self {
        IngestSpec {
            stratum: Stratum::Early,
            outcome,
            baseline_year: 2007,
            outcome_year: 2013,
            window_start: NaiveDate::from_ymd_opt(2007, 1, 1).unwrap(),
            window_end: NaiveDate::from_ymd_opt(2012, 12, 31).unwrap(),
            exposure_laws: default_bundle(),
            policy_covariates: default_policy_covariates(),
            clip_to_window: true,
            states: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.outcome_year < self.baseline_year {
            return Err(Error::Config("outcome_year precedes baseline_year".into()));
        }
        if self.window_end < self.window_start {
            return Err(Error::Config("window_end precedes window_start".into()));
        }
        if self.exposure_laws.is_empty() {
            return Err(Error::Config("exposure_laws is empty".into()));
        }
        Ok(())
    }
}

/// Counties dropped while building a panel.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Attrition {
    pub n_input: usize,
    pub n_masked_resolved: usize,
    pub n_excluded: usize,
    pub fraction_excluded: f64,
    pub excluded_by_reason: BTreeMap<String, usize>,
}

impl Attrition {
    fn exclude(&mut self, reason: &str) {
        self.n_excluded += 1;
        *self.excluded_by_reason.entry(reason.to_string()).or_default() += 1;
    }

    fn finish(&mut self) {
        self.fraction_excluded = if self.n_input == 0 {
            0.0
        } else {
            self.n_excluded as f64 / self.n_input as f64
        };
    }
}

struct CountyHistory<'a> {
    state: &'a str,
    by_year: BTreeMap<i32, &'a CountyYearRecord>,
}

fn group_counties<'a>(
    records: &'a [CountyYearRecord],
    spec: &IngestSpec,
) -> Result<BTreeMap<&'a str, CountyHistory<'a>>> {
    let mut counties: BTreeMap<&str, CountyHistory> = BTreeMap::new();
    for r in records {
        if let Some(states) = &spec.states {
            if !states.iter().any(|s| s == &r.state_id) {
                continue;
            }
        }
        let entry = counties.entry(&r.county_id).or_insert_with(|| CountyHistory {
            state: &r.state_id,
            by_year: BTreeMap::new(),
        });
        if entry.state != r.state_id {
            return Err(Error::Data(format!("county {} appears in two states", r.county_id)));
        }
        if entry.by_year.insert(r.year, r).is_some() {
            return Err(Error::Data(format!("duplicate record for county {} year {}", r.county_id, r.year)));
        }
    }
    Ok(counties)
}

enum RateOutcome {
    Rate(f64),
    Excluded(&'static str),
}

fn outcome_rate(rec: &CountyYearRecord, outcome: OutcomeKind, resolved: &mut usize) -> RateOutcome {
    let count = match outcome {
        OutcomeKind::Naloxone => {
            let c = impute_masked_dispensing(rec.naloxone, rec.opioid_dispensing_present, rec.pharmacy_count);
            if rec.naloxone.is_masked() && !c.is_masked() {
                *resolved += 1;
            }
            c
        }
        OutcomeKind::Overdose => rec.overdose,
    };
    match count {
        EventCount::Masked => RateOutcome::Excluded("masked"),
        EventCount::Count(c) => match compute_rate(c, rec.population_12plus) {
            Ok(r) => RateOutcome::Rate(r),
            Err(_) => RateOutcome::Excluded("zero_population"),
        },
    }
}

fn policy_values(laws: &LawDates, state: &str, spec: &IngestSpec, year: i32) -> Vec<f64> {
    spec.policy_covariates
        .values()
        .map(|codes| {
            codes
                .iter()
                .filter_map(|&c| laws.effective_date(state, c))
                .map(|d| proportion_of_year_in_effect(d, year))
                .sum()
        })
        .collect()
}

fn county_covariate_names(counties: &BTreeMap<&str, CountyHistory>, year: i32) -> Vec<String> {
    counties
        .values()
        .find_map(|c| c.by_year.get(&year))
        .map(|r| r.covariates.keys().cloned().collect())
        .unwrap_or_default()
}

/// County-level panel for the point-exposure analysis.
///
/// `W` holds the baseline-year county covariates, the baseline outcome rate
/// and the baseline-year state policy covariates; `A` the exposure years of
/// the bundled laws; `Y` the outcome-year rate. Counties whose outcome stays
/// masked after imputation are excluded and counted.
pub fn build_point_panel(
    records: &[CountyYearRecord],
    laws: &LawDates,
    spec: &IngestSpec,
) -> Result<(PanelTable, Attrition)> {
    spec.validate()?;
    let counties = group_counties(records, spec)?;
    let cov_names = county_covariate_names(&counties, spec.baseline_year);
    let mut names = cov_names.clone();
    names.push("baseline_outcome".to_string());
    names.extend(spec.policy_covariates.keys().cloned());

    let mut attrition = Attrition {
        n_input: counties.len(),
        ..Default::default()
    };
    let mut rows = Vec::new();
    for (county, hist) in &counties {
        let (Some(base), Some(out)) = (
            hist.by_year.get(&spec.baseline_year),
            hist.by_year.get(&spec.outcome_year),
        ) else {
            attrition.exclude("missing_year");
            continue;
        };
        let base_rate = outcome_rate(base, spec.outcome, &mut attrition.n_masked_resolved);
        let final_rate = outcome_rate(out, spec.outcome, &mut attrition.n_masked_resolved);
        let (base_rate, y) = match (base_rate, final_rate) {
            (RateOutcome::Rate(b), RateOutcome::Rate(y)) => (b, y),
            (RateOutcome::Excluded(r), _) | (_, RateOutcome::Excluded(r)) => {
                attrition.exclude(r);
                continue;
            }
        };
        let mut w = Vec::with_capacity(names.len());
        for n in &cov_names {
            match base.covariates.get(n) {
                Some(v) if v.is_finite() => w.push(*v),
                _ => {
                    attrition.exclude("missing_covariate");
                    break;
                }
            }
        }
        if w.len() != cov_names.len() {
            continue;
        }
        w.push(base_rate);
        w.extend(policy_values(laws, hist.state, spec, spec.baseline_year));
        let a = exposure_years(
            laws.earliest(hist.state, &spec.exposure_laws),
            spec.window_start,
            spec.window_end,
            spec.clip_to_window,
        )?;
        rows.push(PanelRow {
            unit_id: county.to_string(),
            cluster_id: hist.state.to_string(),
            w,
            a,
            y,
        });
    }
    attrition.finish();
    Ok((PanelTable::new(spec.stratum, names, rows)?, attrition))
}

/// Longitudinal panel over `baseline_year..=outcome_year`.
///
/// `A_t = 1` when any bundled law was in effect at some point of year `t`.
/// `L_t` holds the year-`t` policy covariates and, for `t < T`, the year-`t`
/// outcome rate; the year-`T` outcome is `Y`.
pub fn build_longitudinal_panel(
    records: &[CountyYearRecord],
    laws: &LawDates,
    spec: &IngestSpec,
) -> Result<(LongitudinalPanel, Attrition)> {
    spec.validate()?;
    let counties = group_counties(records, spec)?;
    let years: Vec<i32> = (spec.baseline_year..=spec.outcome_year).collect();
    let horizon = years.len();
    let cov_names = county_covariate_names(&counties, spec.baseline_year);
    let mut baseline_names = cov_names.clone();
    baseline_names.push("baseline_outcome".to_string());
    baseline_names.extend(spec.policy_covariates.keys().cloned());
    let policy_names: Vec<String> = spec.policy_covariates.keys().cloned().collect();
    let tv_names: Vec<Vec<String>> = (2..=horizon)
        .map(|t| {
            let mut n = policy_names.clone();
            if t < horizon {
                n.push("outcome".to_string());
            }
            n
        })
        .collect();

    let mut attrition = Attrition {
        n_input: counties.len(),
        ..Default::default()
    };
    let mut units = Vec::new();
    'county: for (county, hist) in &counties {
        let mut rates = Vec::with_capacity(horizon);
        for y in &years {
            let Some(rec) = hist.by_year.get(y) else {
                attrition.exclude("missing_year");
                continue 'county;
            };
            match outcome_rate(rec, spec.outcome, &mut attrition.n_masked_resolved) {
                RateOutcome::Rate(r) => rates.push(r),
                RateOutcome::Excluded(reason) => {
                    attrition.exclude(reason);
                    continue 'county;
                }
            }
        }
        let base = hist.by_year[&spec.baseline_year];
        let mut baseline = Vec::with_capacity(baseline_names.len());
        for n in &cov_names {
            match base.covariates.get(n) {
                Some(v) if v.is_finite() => baseline.push(*v),
                _ => {
                    attrition.exclude("missing_covariate");
                    continue 'county;
                }
            }
        }
        baseline.push(rates[0]);
        baseline.extend(policy_values(laws, hist.state, spec, spec.baseline_year));

        let enacted = laws.earliest(hist.state, &spec.exposure_laws);
        let exposures: Vec<u8> = years.iter().map(|&y| u8::from(in_effect_during_year(enacted, y))).collect();
        let time_varying = (2..=horizon)
            .map(|t| {
                let mut v = policy_values(laws, hist.state, spec, years[t - 1]);
                if t < horizon {
                    v.push(rates[t - 1]);
                }
                v
            })
            .collect();
        units.push(LongitudinalUnit {
            unit_id: county.to_string(),
            cluster_id: hist.state.to_string(),
            baseline,
            exposures,
            time_varying,
            y: rates[horizon - 1],
        });
    }
    attrition.finish();
    let panel = LongitudinalPanel::new(spec.stratum, horizon, baseline_names, tv_names, units)?;
    Ok((panel, attrition))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::records::LawDateRecord;

    fn rec(county: &str, state: &str, year: i32, nal: EventCount, pharm: Option<u64>) -> CountyYearRecord {
        CountyYearRecord {
            county_id: county.into(),
            state_id: state.into(),
            year,
            population_12plus: 50_000,
            naloxone: nal,
            overdose: EventCount::Count(5),
            pharmacy_count: pharm,
            opioid_dispensing_present: None,
            covariates: BTreeMap::from([("poverty".to_string(), 0.1)]),
        }
    }

    fn laws(enact: &[(&str, i32, u32, u32)]) -> LawDates {
        LawDates::from_records(enact.iter().map(|&(s, y, m, d)| LawDateRecord {
            state_id: s.into(),
            law_code: LawCode::GSL,
            effective_date: NaiveDate::from_ymd_opt(y, m, d).unwrap(),
        }))
        .unwrap()
    }

    fn spec5() -> IngestSpec {
        IngestSpec {
            baseline_year: 2013,
            outcome_year: 2017,
            window_start: NaiveDate::from_ymd_opt(2013, 1, 1).unwrap(),
            window_end: NaiveDate::from_ymd_opt(2017, 12, 31).unwrap(),
            ..IngestSpec::late(OutcomeKind::Naloxone)
        }
    }

    fn years(county: &str, state: &str, nal: EventCount, pharm: Option<u64>) -> Vec<CountyYearRecord> {
        (2013..=2017).map(|y| rec(county, state, y, nal, pharm)).collect()
    }

    #[test]
    fn longitudinal_coding_of_enactment() {
        let mut records = years("c1", "S1", EventCount::Count(3), Some(4));
        records.extend(years("c2", "S2", EventCount::Count(3), Some(4)));
        records.extend(years("c3", "S3", EventCount::Count(3), Some(4)));
        let laws = laws(&[("S1", 2015, 6, 1), ("S3", 2009, 1, 1)]);
        let (panel, attr) = build_longitudinal_panel(&records, &laws, &spec5()).unwrap();
        assert_eq!(attr.n_excluded, 0);
        assert_eq!(panel.horizon(), 5);
        let a: Vec<&[u8]> = panel.units().iter().map(|u| u.exposures.as_slice()).collect();
        assert_eq!(a, vec![&[0, 0, 1, 1, 1][..], &[0, 0, 0, 0, 0][..], &[1, 1, 1, 1, 1][..]]);
        assert_eq!(panel.time_varying_names()[0].last().unwrap(), "outcome");
        assert!(!panel.time_varying_names()[3].contains(&"outcome".to_string()));
    }

    #[test]
    fn masked_unresolved_counties_are_excluded() {
        let mut records = Vec::new();
        for i in 0..19 {
            records.extend(years(&format!("c{i}"), "S1", EventCount::Masked, Some(5)));
        }
        records.extend(years("bad", "S1", EventCount::Masked, Some(2)));
        let (panel, attr) = build_point_panel(&records, &laws(&[("S1", 2015, 1, 1)]), &spec5()).unwrap();
        assert_eq!(panel.len(), 19);
        assert_eq!(attr.n_input, 20);
        assert_eq!(attr.n_excluded, 1);
        assert_eq!(attr.fraction_excluded, 0.05);
        assert_eq!(attr.n_masked_resolved, 38);
        assert!(panel.rows().iter().all(|r| r.y == 0.0));
    }

    #[test]
    fn point_panel_columns() {
        let records = years("c1", "S1", EventCount::Count(10), None);
        let (panel, _) = build_point_panel(&records, &laws(&[("S1", 2016, 1, 1)]), &spec5()).unwrap();
        assert_eq!(panel.covariate_names(), &["poverty", "baseline_outcome", "MML", "PDMP", "PMCL"]);
        let r = &panel.rows()[0];
        assert_eq!(r.y, 20.0);
        // 2016 is a leap year: 366 + 365 inclusive days
        assert!((r.a - 731.0 / 365.25).abs() < 1e-12);
    }
}
