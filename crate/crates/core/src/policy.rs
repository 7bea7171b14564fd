//! Deterministic exposure-shift policies.
//!
//! [`BoundedAdditiveShift`] moves a continuous years-of-exposure value forward
//! by `delta2` years, or by `delta1` near the top of the range, never past
//! `a_max`. [`LongitudinalDelayPolicy`] postpones the first enactment of a
//! binary, never-repealed exposure trajectory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::longitudinal::is_monotone;
use crate::stats::quantile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundedAdditiveShift {
    delta1: f64,
    delta2: f64,
    a_max: f64,
}

impl BoundedAdditiveShift {
    pub fn new(delta1: f64, delta2: f64, a_max: f64) -> Result<Self> {
        if !(delta1.is_finite() && delta2.is_finite() && 0.0 <= delta1 && delta1 <= delta2) {
            return Err(Error::Domain(format!("need 0 <= delta1 <= delta2, got {delta1}, {delta2}")));
        }
        if !(a_max.is_finite() && a_max > 0.0) {
            return Err(Error::Domain(format!("a_max must be positive, got {a_max}")));
        }
        Ok(BoundedAdditiveShift { delta1, delta2, a_max })
    }

    pub fn delta1(&self) -> f64 {
        self.delta1
    }

    pub fn delta2(&self) -> f64 {
        self.delta2
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    /// Which of the three branches `a` falls in: 0 full shift, 1 partial, 2 identity.
    pub fn branch(&self, a: f64) -> usize {
        if a <= self.a_max - self.delta2 {
            0
        } else if a <= self.a_max - self.delta1 {
            1
        } else {
            2
        }
    }

    pub fn apply(&self, a: f64) -> Result<f64> {
        if !(0.0..=self.a_max).contains(&a) {
            return Err(Error::Domain(format!("exposure {a} outside [0, {}]", self.a_max)));
        }
        Ok(match self.branch(a) {
            0 => a + self.delta2,
            1 => a + self.delta1,
            _ => a,
        })
    }
}

/// Shift applied to a scalar exposure by the point estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointShift {
    Bounded(BoundedAdditiveShift),
    /// `d(a) = a + delta` with no bound; for simulation studies.
    Additive(f64),
    /// `d(a) = c` for every unit; with a binary exposure this is a static regime.
    Static(f64),
    Identity,
}

impl PointShift {
    pub fn apply(&self, a: f64) -> Result<f64> {
        match self {
            PointShift::Bounded(s) => s.apply(a),
            PointShift::Additive(d) => Ok(a + d),
            PointShift::Static(c) => Ok(*c),
            PointShift::Identity => Ok(a),
        }
    }

    pub fn apply_all(&self, a: &[f64]) -> Result<Vec<f64>> {
        a.iter().map(|&v| self.apply(v)).collect()
    }

    pub fn is_identity(&self) -> bool {
        match self {
            PointShift::Identity => true,
            PointShift::Additive(d) => *d == 0.0,
            PointShift::Bounded(s) => s.delta2 == 0.0,
            PointShift::Static(_) => false,
        }
    }
}

/// Delays the first enactment of a monotone binary trajectory.
///
/// At the first `t` with `a_{t-1} = 0` and `a_t = 1` (with `a_0` the
/// pre-window exposure), coordinates `t..=min(t + delay_steps - 1, T)` are
/// set to 0. `delay_steps = 0` is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LongitudinalDelayPolicy {
    horizon: usize,
    delay_steps: usize,
    pre_window_exposure: u8,
}

impl LongitudinalDelayPolicy {
    pub fn new(horizon: usize, delay_steps: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Domain("horizon must be at least 1".into()));
        }
        Ok(LongitudinalDelayPolicy {
            horizon,
            delay_steps,
            pre_window_exposure: 0,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn delay_steps(&self) -> usize {
        self.delay_steps
    }

    pub fn pre_window_exposure(&self) -> u8 {
        self.pre_window_exposure
    }

    /// First 1-based step where the exposure switches on, if any.
    pub fn first_enactment(&self, a: &[u8]) -> Option<usize> {
        let mut prev = self.pre_window_exposure;
        for (k, &v) in a.iter().enumerate() {
            if prev == 0 && v == 1 {
                return Some(k + 1);
            }
            prev = v;
        }
        None
    }

    pub fn apply_delay(&self, a: &[u8]) -> Result<Vec<u8>> {
        if a.len() != self.horizon {
            return Err(Error::Domain(format!("trajectory length {} != horizon {}", a.len(), self.horizon)));
        }
        if !is_monotone(a) {
            return Err(Error::Domain(format!("trajectory {a:?} is not monotone non-decreasing")));
        }
        let mut out = a.to_vec();
        if let Some(t) = self.first_enactment(a) {
            let end = (t + self.delay_steps).min(self.horizon + 1);
            for v in &mut out[t - 1..end - 1] {
                *v = 0;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportReport {
    /// Every shifted value lies in the observed exposure range (0.01 tolerance).
    pub support_holds: bool,
    pub n_outside_range: usize,
    pub quantile_level: f64,
    pub quantile_value: f64,
    /// Fraction of units whose shifted exposure exceeds the observed quantile.
    pub fraction_above_quantile: f64,
    /// Set when that fraction exceeds `1 - quantile_level`.
    pub tail_warning: bool,
    /// Fraction of units in the full-shift, partial-shift and identity branches.
    pub branch_fractions: Option<[f64; 3]>,
}

pub const SUPPORT_TOLERANCE: f64 = 0.01;

/// Compares shifted exposures against the observed exposure distribution.
pub fn check_shift_support(exposures: &[f64], shift: &PointShift, q: f64) -> Result<SupportReport> {
    if exposures.is_empty() {
        return Err(Error::InvalidInput("support check needs at least one unit".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("quantile level {q} outside [0, 1]")));
    }
    let shifted = shift.apply_all(exposures)?;
    let lo = exposures.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = exposures.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n_outside = shifted
        .iter()
        .filter(|&&d| d > hi + SUPPORT_TOLERANCE || d < lo - SUPPORT_TOLERANCE)
        .count();
    let qv = quantile(exposures, q);
    let n = exposures.len() as f64;
    let above = shifted.iter().filter(|&&d| d > qv + SUPPORT_TOLERANCE).count() as f64 / n;
    let branch_fractions = match shift {
        PointShift::Bounded(s) => {
            let mut c = [0.0; 3];
            for &a in exposures {
                c[s.branch(a)] += 1.0 / n;
            }
            Some(c)
        }
        _ => None,
    };
    Ok(SupportReport {
        support_holds: n_outside == 0,
        n_outside_range: n_outside,
        quantile_level: q,
        quantile_value: qv,
        fraction_above_quantile: above,
        tail_warning: above > 1.0 - q + 1e-12,
        branch_fractions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn study_late() -> BoundedAdditiveShift {
        BoundedAdditiveShift::new(1.0, 2.0, 4.79).unwrap()
    }

    #[test]
    fn shift_examples() {
        let s = study_late();
        assert_eq!(s.apply(1.0).unwrap(), 3.0);
        assert_eq!(s.apply(3.0).unwrap(), 4.0);
        assert_eq!(s.apply(4.5).unwrap(), 4.5);
        assert!(s.apply(-0.1).is_err());
        assert!(s.apply(4.8).is_err());
        assert!(BoundedAdditiveShift::new(2.0, 1.0, 4.79).is_err());
    }

    #[test]
    fn shift_stays_in_range_on_grid() {
        for s in [study_late(), BoundedAdditiveShift::new(1.0, 2.0, 5.91).unwrap()] {
            let steps = (s.a_max() / 0.01).floor() as usize;
            for k in 0..=steps {
                let a = k as f64 * 0.01;
                let d = s.apply(a).unwrap();
                assert!(d >= a && d <= s.a_max() + 1e-12, "{a} -> {d}");
            }
        }
    }

    #[test]
    fn delay_examples() {
        let p = LongitudinalDelayPolicy::new(5, 2).unwrap();
        assert_eq!(p.apply_delay(&[0, 0, 1, 1, 1]).unwrap(), vec![0, 0, 0, 0, 1]);
        assert_eq!(p.apply_delay(&[0, 0, 0, 0, 1]).unwrap(), vec![0, 0, 0, 0, 0]);
        assert_eq!(p.apply_delay(&[0, 0, 0, 0, 0]).unwrap(), vec![0; 5]);
        assert_eq!(p.apply_delay(&[1, 1, 1, 1, 1]).unwrap(), vec![0, 0, 1, 1, 1]);
        assert!(p.apply_delay(&[0, 1, 0, 1, 1]).is_err());
        assert!(p.apply_delay(&[0, 1]).is_err());
        let id = LongitudinalDelayPolicy::new(5, 0).unwrap();
        assert_eq!(id.apply_delay(&[0, 1, 1, 1, 1]).unwrap(), vec![0, 1, 1, 1, 1]);
    }

    #[test]
    fn support_report_cases() {
        let s = PointShift::Bounded(study_late());
        let all_max = vec![4.79; 50];
        let r = check_shift_support(&all_max, &s, 0.99).unwrap();
        assert!(r.support_holds);
        assert!((r.branch_fractions.unwrap()[2] - 1.0).abs() < 1e-12);

        let uniform: Vec<f64> = (0..=479).map(|k| k as f64 * 0.01).collect();
        assert!(check_shift_support(&uniform, &s, 0.99).unwrap().support_holds);

        // mass at zero plus a thin tail reaching a_max
        let mut conc = vec![0.0; 995];
        conc.extend([4.79; 5]);
        let r = check_shift_support(&conc, &s, 0.99).unwrap();
        assert_eq!(r.quantile_value, 0.0);
        assert!(r.tail_warning);
        assert!(r.fraction_above_quantile > 0.99);

        let id = check_shift_support(&uniform, &PointShift::Identity, 0.99).unwrap();
        assert!(id.support_holds && !id.tail_warning);
    }

    proptest! {
        #[test]
        fn shift_never_decreases(a in 0.0f64..=4.79) {
            let d = study_late().apply(a).unwrap();
            // literal branch arithmetic can overshoot the bound by one ulp
            prop_assert!(d >= a && d - a <= 2.0 + 1e-12 && d <= 4.79 + 1e-12);
        }

        #[test]
        fn delay_never_accelerates(t in 1usize..=6, start in 0usize..=7, k in 0usize..4) {
            let start = start.min(t);
            let a: Vec<u8> = (0..t).map(|i| u8::from(i >= start)).collect();
            let p = LongitudinalDelayPolicy::new(t, k).unwrap();
            let out = p.apply_delay(&a).unwrap();
            prop_assert!(is_monotone(&out));
            let changed = a.iter().zip(&out).filter(|(x, y)| x != y).count();
            match p.first_enactment(&a) {
                None => prop_assert_eq!(changed, 0),
                Some(ts) => {
                    prop_assert!(changed <= k.min(t - ts + 1));
                    let new_start = p.first_enactment(&out).unwrap_or(t + 1);
                    prop_assert!(new_start >= ts);
                }
            }
        }
    }
}
