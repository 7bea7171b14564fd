//! Identification conditions reported alongside an estimate.
//!
//! Randomization and consistency cannot be tested from data and are only
//! declared. Support of the shifted exposure and positivity of the fitted
//! density ratio are checked.

use serde::{Deserialize, Serialize};

use crate::density_ratio::PositivityProfile;
use crate::panel::{LongitudinalPanel, PanelTable};
use crate::policy::{check_shift_support, LongitudinalDelayPolicy, PointShift, SupportReport};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckStatus {
    #[serde(rename = "ASSUMED")]
    Assumed,
    #[serde(rename = "CHECKED-PASS")]
    CheckedPass,
    #[serde(rename = "CHECKED-WARN")]
    CheckedWarn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub checks: Vec<AssumptionCheck>,
    pub support: Option<SupportReport>,
    pub positivity: Option<PositivityProfile>,
    pub any_warn: bool,
}

impl IdentificationReport {
    pub fn status(&self, name: &str) -> Option<CheckStatus> {
        self.checks.iter().find(|c| c.name == name).map(|c| c.status)
    }

    /// True when the density-ratio positivity check warned.
    pub fn positivity_violation(&self) -> bool {
        self.positivity.as_ref().is_some_and(|p| p.violation)
    }
}

fn declared(name: &str, detail: &str) -> AssumptionCheck {
    AssumptionCheck { name: name.into(), status: CheckStatus::Assumed, detail: detail.into() }
}

fn declarations(randomization: &str) -> Vec<AssumptionCheck> {
    vec![
        declared("randomization", randomization),
        declared("consistency", "observed outcome equals the potential outcome under the observed exposure"),
        declared("no_interference", "outcomes depend only on the unit's own exposure; state clustering enters the variance only"),
    ]
}

fn positivity_check(profile: Option<&PositivityProfile>) -> Option<AssumptionCheck> {
    profile.map(|p| AssumptionCheck {
        name: "positivity".into(),
        status: if p.violation { CheckStatus::CheckedWarn } else { CheckStatus::CheckedPass },
        detail: format!(
            "truncated fraction {:.4} (high {:.4}, low {:.4}), high threshold {}; mean ratio {:.3}{}; max ratio {:.3}",
            p.fraction_truncated,
            p.fraction_truncated_high,
            p.fraction_truncated_low,
            p.threshold,
            p.mean,
            p.min_mean_ratio.map_or(String::new(), |m| format!(" (minimum {m})")),
            p.max
        ),
    })
}

fn finish(checks: Vec<AssumptionCheck>, support: Option<SupportReport>, positivity: Option<PositivityProfile>) -> IdentificationReport {
    let any_warn = checks.iter().any(|c| c.status == CheckStatus::CheckedWarn);
    IdentificationReport { checks, support, positivity, any_warn }
}

/// Checks for a point-exposure shift. `positivity` is the ratio profile of
/// a fitted estimate, when one is available.
pub fn identification_checks_point(
    panel: &PanelTable,
    shift: &PointShift,
    quantile: f64,
    positivity: Option<&PositivityProfile>,
) -> Result<IdentificationReport> {
    let mut checks = declarations("Y_a independent of A given W for every a in the support");
    let support = check_shift_support(&panel.exposures(), shift, quantile)?;
    checks.push(AssumptionCheck {
        name: "support".into(),
        status: if support.support_holds { CheckStatus::CheckedPass } else { CheckStatus::CheckedWarn },
        detail: format!("{} shifted values outside the observed exposure range", support.n_outside_range),
    });
    checks.push(AssumptionCheck {
        name: "upper_tail".into(),
        status: if support.tail_warning { CheckStatus::CheckedWarn } else { CheckStatus::CheckedPass },
        detail: format!(
            "{:.4} of shifted values exceed the observed {} quantile {:.4}",
            support.fraction_above_quantile, support.quantile_level, support.quantile_value
        ),
    });
    checks.extend(positivity_check(positivity));
    Ok(finish(checks, Some(support), positivity.cloned()))
}

/// Checks for the delay policy. Delayed trajectories stay in the observed
/// set of monotone paths, so only propensity positivity is testable.
pub fn identification_checks_longitudinal(
    panel: &LongitudinalPanel,
    policy: &LongitudinalDelayPolicy,
    positivity: Option<&PositivityProfile>,
) -> Result<IdentificationReport> {
    let mut checks = declarations("sequential randomization of A_t given the observed history");
    let mut n_changed = 0usize;
    for u in panel.units() {
        if policy.apply_delay(&u.exposures)? != u.exposures {
            n_changed += 1;
        }
    }
    checks.push(AssumptionCheck {
        name: "support".into(),
        status: CheckStatus::CheckedPass,
        detail: format!("{n_changed} of {} trajectories modified; all remain monotone", panel.len()),
    });
    checks.extend(positivity_check(positivity));
    Ok(finish(checks, None, positivity.cloned()))
}
