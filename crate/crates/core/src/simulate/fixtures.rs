//! Raw-input fixtures in the ingestion schemas.

use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{proportion_of_year_in_effect, CountyYearRecord, EventCount, LawCode, LawDateRecord, LawDates};
use crate::stats::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawFixtureSpec {
    pub n_states: usize,
    pub counties_per_state: usize,
    pub first_year: i32,
    pub last_year: i32,
    /// Counties whose naloxone counts stay masked after imputation.
    pub unresolvable_masked_fraction: f64,
    /// County-years masked but resolvable to zero.
    pub resolvable_masked_fraction: f64,
    /// Fraction of states that never enact the naloxone/GSL bundle.
    pub never_enact_fraction: f64,
    pub seed: u64,
}

impl Default for RawFixtureSpec {
    fn default() -> Self {
        RawFixtureSpec {
            n_states: 20,
            counties_per_state: 10,
            first_year: 2007,
            last_year: 2018,
            unresolvable_masked_fraction: 0.0,
            resolvable_masked_fraction: 0.02,
            never_enact_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawFixture {
    pub records: Vec<CountyYearRecord>,
    pub laws: LawDates,
}

fn date_from_fractional_year(y: f64) -> NaiveDate {
    let year = y.floor() as i32;
    let start = NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year");
    let days = if start.leap_year() { 366.0 } else { 365.0 };
    let offset = ((y - y.floor()) * days).floor() as u64;
    start.checked_add_days(Days::new(offset)).expect("in range")
}

fn random_date(r: &mut ChaCha8Rng, from: f64, to: f64) -> NaiveDate {
    date_from_fractional_year(r.random_range(from..to))
}

/// County-year records and law dates. NAL provisions 1 and 3 and the Good
/// Samaritan law share one effective date per state (co-enactment);
/// medical marijuana is never enacted, so it has no variation.
pub fn raw_fixture(spec: &RawFixtureSpec) -> Result<RawFixture> {
    if spec.n_states == 0 || spec.counties_per_state == 0 || spec.last_year < spec.first_year {
        return Err(Error::Config("raw fixture needs states, counties and a year range".into()));
    }
    for f in [spec.unresolvable_masked_fraction, spec.resolvable_masked_fraction, spec.never_enact_fraction] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Config("fixture fractions must lie in [0, 1]".into()));
        }
    }
    let mut r = rng(spec.seed, 0xF1);
    let mut law_records = Vec::new();
    let sw = spec.n_states.saturating_sub(1).to_string().len();
    let states: Vec<String> = (0..spec.n_states).map(|s| format!("S{s:0sw$}")).collect();
    let (y0, y1) = (f64::from(spec.first_year), f64::from(spec.last_year) + 1.0);
    for s in &states {
        let mut add = |code, date| {
            law_records.push(LawDateRecord { state_id: s.clone(), law_code: code, effective_date: date });
        };
        if r.random::<f64>() >= spec.never_enact_fraction {
            let d = random_date(&mut r, y0 + 1.0, y1 - 1.0);
            add(LawCode::NAL_P1, d);
            add(LawCode::NAL_P3, d);
            add(LawCode::GSL, d);
            if r.random::<bool>() {
                let lag = r.random_range(30..700);
                add(LawCode::NAL_P2, d.checked_add_days(Days::new(lag)).expect("in range"));
            }
        }
        add(LawCode::PDMP_OPERATIONAL, random_date(&mut r, y0 - 2.0, y1));
        if r.random::<f64>() < 0.5 {
            add(LawCode::PDMP_MUSTQUERY, random_date(&mut r, y0, y1));
        }
        if r.random::<f64>() < 0.3 {
            add(LawCode::PMCL, random_date(&mut r, y0, y1));
        }
    }
    let laws = LawDates::from_records(law_records)?;

    let n_counties = spec.n_states * spec.counties_per_state;
    let mut order: Vec<usize> = (0..n_counties).collect();
    order.shuffle(&mut r);
    let n_bad = (spec.unresolvable_masked_fraction * n_counties as f64).round() as usize;
    let mut unresolvable = vec![false; n_counties];
    for &i in &order[..n_bad] {
        unresolvable[i] = true;
    }
    let noise = Normal::new(0.0, 3.0).expect("valid");
    let cw = n_counties.saturating_sub(1).to_string().len();
    let mut records = Vec::new();
    for i in 0..n_counties {
        let state = &states[i / spec.counties_per_state];
        let pop: u64 = r.random_range(5_000..500_000);
        let poverty: f64 = r.random_range(0.05..0.3);
        let urban = f64::from(u8::from(r.random::<f64>() < 0.4));
        let nal_date = laws.effective_date(state, LawCode::NAL_P1);
        for year in spec.first_year..=spec.last_year {
            let in_effect = nal_date.map_or(0.0, |d| proportion_of_year_in_effect(d, year));
            let nal_rate = (20.0 + 15.0 * in_effect + 30.0 * poverty + noise.sample(&mut r)).max(0.0);
            let od_rate = (15.0 + 20.0 * poverty + 2.0 * urban + noise.sample(&mut r)).max(0.0);
            let count = |rate: f64| (rate * pop as f64 / 100_000.0).round() as u64;
            let (naloxone, opioid, pharmacies) = if unresolvable[i] {
                (EventCount::Masked, Some(false), Some(r.random_range(1..=2)))
            } else if r.random::<f64>() < spec.resolvable_masked_fraction {
                (EventCount::Masked, Some(true), Some(r.random_range(0..10)))
            } else {
                (EventCount::Count(count(nal_rate)), Some(true), Some(r.random_range(0..10)))
            };
            records.push(CountyYearRecord {
                county_id: format!("C{i:0cw$}"),
                state_id: state.clone(),
                year,
                population_12plus: pop,
                naloxone,
                overdose: EventCount::Count(count(od_rate)),
                pharmacy_count: pharmacies,
                opioid_dispensing_present: opioid,
                covariates: BTreeMap::from([
                    ("poverty".to_string(), poverty),
                    ("urban".to_string(), urban),
                ]),
            });
        }
    }
    Ok(RawFixture { records, laws })
}

/// Law dates where naloxone access timing is partly driven by the same
/// state-level propensity that drives the other opioid laws.
///
/// Every state draws a latent policy year `Z`; PDMP, must-query and pain
/// clinic laws follow `Z` with noise, and NAL provision 1 follows `Z` with
/// noise `nal_noise` (years). With 51 states and `nal_noise = 1.2` the
/// share of NAL variation over state-years 2007-2017 explained by the other
/// laws falls inside [0.48, 0.78].
pub fn entangled_law_fixture(n_states: usize, nal_noise: f64, seed: u64) -> Result<(LawDates, Vec<String>)> {
    if n_states < 3 || !(nal_noise >= 0.0) {
        return Err(Error::Config("entangled fixture needs >= 3 states and nal_noise >= 0".into()));
    }
    let mut r = rng(seed, 0xE7);
    let sw = (n_states - 1).to_string().len();
    let states: Vec<String> = (0..n_states).map(|s| format!("S{s:0sw$}")).collect();
    let nal = Normal::new(0.0, nal_noise).expect("checked");
    let tight = Normal::new(0.0, 0.5).expect("valid");
    let loose = Normal::new(0.0, 1.0).expect("valid");
    let clamp = |y: f64| y.clamp(2004.0, 2019.5);
    let mut recs = Vec::new();
    for s in &states {
        let z: f64 = r.random_range(2008.0..2016.0);
        let mut add = |code, y: f64| {
            recs.push(LawDateRecord { state_id: s.clone(), law_code: code, effective_date: date_from_fractional_year(clamp(y)) });
        };
        add(LawCode::NAL_P1, z + nal.sample(&mut r));
        add(LawCode::PDMP_OPERATIONAL, z - 1.0 + tight.sample(&mut r));
        add(LawCode::PDMP_MUSTQUERY, z + 0.5 + loose.sample(&mut r));
        if r.random::<f64>() < 0.6 {
            add(LawCode::PMCL, z + loose.sample(&mut r));
        }
    }
    Ok((LawDates::from_records(recs)?, states))
}
