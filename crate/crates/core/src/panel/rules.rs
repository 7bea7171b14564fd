//! Data-construction rules: masking imputation, rates, and policy timing.

use chrono::{Datelike, NaiveDate};

use super::records::EventCount;
use crate::error::{Error, Result};

/// Resolves a masked naloxone count.
///
/// A masked county-year is set to zero dispensations when opioid dispensing
/// was observed, or when the county had more than two or zero retail
/// pharmacies. Otherwise it stays masked and is later excluded. UNKNOWN
/// inputs never fire the rule.
pub fn impute_masked_dispensing(
    count: EventCount,
    opioid_dispensing_present: Option<bool>,
    pharmacy_count: Option<u64>,
) -> EventCount {
    match count {
        EventCount::Count(_) => count,
        EventCount::Masked => {
            let opioid_rule = opioid_dispensing_present == Some(true);
            let pharmacy_rule = matches!(pharmacy_count, Some(p) if p > 2 || p == 0);
            if opioid_rule || pharmacy_rule {
                EventCount::Count(0)
            } else {
                EventCount::Masked
            }
        }
    }
}

/// Events per 100,000 people aged 12+.
pub fn compute_rate(event_count: u64, population_12plus: u64) -> Result<f64> {
    if population_12plus == 0 {
        return Err(Error::UndefinedRate);
    }
    Ok(event_count as f64 * 100_000.0 / population_12plus as f64)
}

fn days_in_year(year: i32) -> i64 {
    if NaiveDate::from_ymd_opt(year, 2, 29).is_some() {
        366
    } else {
        365
    }
}

/// Fraction of calendar `year` during which a law effective on
/// `effective_date` was in force, counting the effective day itself.
pub fn proportion_of_year_in_effect(effective_date: NaiveDate, year: i32) -> f64 {
    if effective_date.year() > year {
        return 0.0;
    }
    if effective_date.year() < year || effective_date.ordinal() == 1 {
        return 1.0;
    }
    let total = days_in_year(year);
    let before = i64::from(effective_date.ordinal0());
    (total - before) as f64 / total as f64
}

pub const DAYS_PER_YEAR: f64 = 365.25;

/// Years a law (the earliest of a bundle) was in effect within
/// `[window_start, window_end]`, both ends inclusive, at 365.25 days/year.
///
/// `earliest` is `None` when no law of the bundle was ever enacted. With
/// `clip_to_window` an enactment before the window counts from the window
/// start.
pub fn exposure_years(
    earliest: Option<NaiveDate>,
    window_start: NaiveDate,
    window_end: NaiveDate,
    clip_to_window: bool,
) -> Result<f64> {
    if window_end < window_start {
        return Err(Error::Domain(format!(
            "window end {window_end} precedes start {window_start}"
        )));
    }
    let Some(date) = earliest else {
        return Ok(0.0);
    };
    if date > window_end {
        return Ok(0.0);
    }
    let start = if clip_to_window {
        date.max(window_start)
    } else {
        date
    };
    let days = (window_end - start).num_days() + 1;
    Ok(days as f64 / DAYS_PER_YEAR)
}

/// True when a law effective on `date` was in force at any point of `year`.
pub fn in_effect_during_year(date: Option<NaiveDate>, year: i32) -> bool {
    matches!(date, Some(d) if d.year() <= year)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn masking_truth_table() {
        use EventCount::*;
        assert_eq!(impute_masked_dispensing(Masked, Some(true), None), Count(0));
        assert_eq!(impute_masked_dispensing(Masked, None, Some(5)), Count(0));
        assert_eq!(impute_masked_dispensing(Masked, None, Some(0)), Count(0));
        assert_eq!(impute_masked_dispensing(Masked, None, Some(2)), Masked);
        assert_eq!(impute_masked_dispensing(Masked, Some(false), Some(1)), Masked);
        assert_eq!(impute_masked_dispensing(Masked, None, None), Masked);
        assert_eq!(impute_masked_dispensing(Count(4), Some(true), Some(9)), Count(4));
    }

    #[test]
    fn rate_examples() {
        assert_eq!(compute_rate(5, 100_000).unwrap(), 5.0);
        assert_eq!(compute_rate(0, 50_000).unwrap(), 0.0);
        assert_eq!(compute_rate(123, 250_000).unwrap(), 49.2);
        assert!(matches!(compute_rate(3, 0), Err(Error::UndefinedRate)));
    }

    /// Independent day-count oracle: walk the calendar one day at a time.
    fn enumerate_days_in_effect(date: NaiveDate, year: i32) -> (i64, i64) {
        let mut d = ymd(year, 1, 1);
        let (mut on, mut total) = (0, 0);
        while d.year() == year {
            total += 1;
            if d >= date {
                on += 1;
            }
            d = d.succ_opt().unwrap();
        }
        (on, total)
    }

    #[test]
    fn proportion_examples() {
        assert_eq!(proportion_of_year_in_effect(ymd(2013, 1, 1), 2013), 1.0);
        assert_eq!(proportion_of_year_in_effect(ymd(2014, 1, 1), 2013), 0.0);
        let (on, total) = enumerate_days_in_effect(ymd(2013, 7, 2), 2013);
        assert_eq!((on, total), (183, 365));
        assert_eq!(proportion_of_year_in_effect(ymd(2013, 7, 2), 2013), 183.0 / 365.0);
        assert!((proportion_of_year_in_effect(ymd(2013, 7, 2), 2013) - 0.5014).abs() < 1e-4);
        // leap year
        let (on, total) = enumerate_days_in_effect(ymd(2016, 3, 1), 2016);
        assert_eq!(total, 366);
        assert_eq!(proportion_of_year_in_effect(ymd(2016, 3, 1), 2016), on as f64 / 366.0);
    }

    #[test]
    fn exposure_years_examples() {
        let start = ymd(2013, 3, 19);
        let end = ymd(2017, 12, 31);
        let full = exposure_years(Some(start), start, end, true).unwrap();
        assert!((full - 4.79).abs() < 0.005, "{full}");
        assert_eq!(exposure_years(None, start, end, true).unwrap(), 0.0);
        assert_eq!(exposure_years(Some(ymd(2018, 1, 1)), start, end, true).unwrap(), 0.0);
        let two = exposure_years(Some(ymd(2016, 1, 1)), start, end, true).unwrap();
        assert!((two - 2.0).abs() < 0.01, "{two}");
        // early enactor clipped to window start vs unclipped
        let early = Some(ymd(2010, 1, 1));
        assert_eq!(exposure_years(early, start, end, true).unwrap(), full);
        assert!(exposure_years(early, start, end, false).unwrap() > full);
        assert!(exposure_years(Some(start), end, start, true).is_err());
    }

    #[test]
    fn in_effect_any_time_in_year() {
        assert!(in_effect_during_year(Some(ymd(2013, 12, 31)), 2013));
        assert!(!in_effect_during_year(Some(ymd(2014, 1, 1)), 2013));
        assert!(!in_effect_during_year(None, 2013));
    }

    proptest! {
        #[test]
        fn rate_is_linear_in_events(e1 in 0u64..1_000_000, e2 in 0u64..1_000_000, pop in 1u64..10_000_000) {
            let r = compute_rate(e1 + e2, pop).unwrap();
            let s = compute_rate(e1, pop).unwrap() + compute_rate(e2, pop).unwrap();
            prop_assert!((r - s).abs() <= 1e-9 * r.abs().max(1.0));
        }

        #[test]
        fn rate_inverse_in_population(e in 0u64..1_000_000, pop in 1u64..1_000_000, k in 1u64..50) {
            let r = compute_rate(e, pop).unwrap();
            let rk = compute_rate(e, pop * k).unwrap();
            prop_assert!((r - rk * k as f64).abs() <= 1e-9 * r.abs().max(1.0));
        }

        #[test]
        fn proportion_non_increasing_in_date(year in 2000i32..2030, d1 in 0u32..400, d2 in 0u32..400) {
            let base = ymd(year, 1, 1) - chrono::Duration::days(10);
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let a = proportion_of_year_in_effect(base + chrono::Duration::days(lo as i64), year);
            let b = proportion_of_year_in_effect(base + chrono::Duration::days(hi as i64), year);
            prop_assert!(a >= b);
        }

        #[test]
        fn proportion_matches_fractional_position(year in 2000i32..2030, day in 1u32..365) {
            let date = ymd(year, 1, 1) + chrono::Duration::days(day as i64);
            let total = if ymd(year, 12, 31).ordinal() == 366 { 366.0 } else { 365.0 };
            let expected = 1.0 - day as f64 / total;
            prop_assert!((proportion_of_year_in_effect(date, year) - expected).abs() < 1e-12);
        }

        #[test]
        fn yearly_proportions_sum_to_exposure_years(start_year in 2007i32..2012, offset in 0i64..(365 * 5)) {
            let end_year = start_year + 5;
            let date = ymd(start_year, 1, 1) + chrono::Duration::days(offset);
            let window_start = ymd(start_year, 1, 1);
            let window_end = ymd(end_year, 12, 31);
            let total: f64 = (start_year..=end_year).map(|y| proportion_of_year_in_effect(date, y)).sum();
            let years = exposure_years(Some(date), window_start, window_end, true).unwrap();
            prop_assert!((total - years).abs() < 0.01, "{} vs {}", total, years);
        }
    }
}
