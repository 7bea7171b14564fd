//! Panel data: raw records, construction rules, and analysis tables.

pub mod build;
pub mod longitudinal;
pub mod loo;
pub mod records;
pub mod rules;
pub mod table;

pub use build::{build_longitudinal_panel, build_point_panel, Attrition, IngestSpec, OutcomeKind};
pub use longitudinal::{LongitudinalPanel, LongitudinalUnit};
pub use loo::augment_with_loo_state_summaries;
pub use records::{CountyYearRecord, EventCount, LawCode, LawDateRecord, LawDates};
pub use rules::{compute_rate, exposure_years, impute_masked_dispensing, proportion_of_year_in_effect};
pub use table::{PanelRow, PanelTable, Stratum};
