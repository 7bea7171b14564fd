//! Command-line driver: `ingest`, `diagnose`, `estimate` and `simulate`.
//!
//! Each command reads one TOML [`RunConfig`], writes its outputs atomically
//! into the output directory and echoes the resolved config as
//! `resolved_config.toml`. No output carries a timestamp, so two runs with
//! the same config and seed are byte-identical.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{DiagnoseConfig, EstimateConfig, IngestConfig, RunConfig, ShiftConfig, SimulateConfig};
use crate::diagnostics::{
    bundle_recommendation, cooccurrence_matrix, state_year_law_table, variance_explained, write_heatmap_csv, Bundle,
    CooccurrenceMatrix, VarianceExplained,
};
use crate::error::{Error, Result};
use crate::estimator::{
    estimate_longitudinal_delay, estimate_point_shift, identification_checks_longitudinal,
    identification_checks_point, EstimandKind, EstimateReport, IdentificationReport,
};
use crate::inference::{write_results_table, ClusteredVariance, ResultRow, VarianceMethod};
use crate::io::{atomic_write, write_json};
use crate::panel::{
    augment_with_loo_state_summaries, build_longitudinal_panel, build_point_panel,
    LawCode, LongitudinalPanel, PanelTable,
};
use crate::panel::records::{read_county_year_file, read_law_dates_file, write_county_year, write_law_dates};
use crate::policy::{LongitudinalDelayPolicy, PointShift};
use crate::simulate::{raw_fixture, simulate_longitudinal, simulate_point, true_longitudinal_contrast, true_shift_contrast, Truth};

/// Environment variable overriding the worker thread count.
pub const THREADS_ENV: &str = "MTPSHIFT_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_IDENTIFICATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mtpshift", version, about = "Modified treatment policy estimation for state policy panels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build analysis panels from county-year records and law dates.
    Ingest(CommonArgs),
    /// Law co-occurrence heatmap, variance explained and bundles.
    Diagnose(CommonArgs),
    /// Cross-fitted estimate with cluster-robust inference.
    Estimate(CommonArgs),
    /// Synthetic panels with known truth.
    Simulate(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Abort with exit code 3 when positivity looks violated.
    #[arg(long)]
    pub strict_positivity: bool,
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Identification(_) => EXIT_IDENTIFICATION,
        e if e.is_input_error() => EXIT_INPUT,
        Error::SingleCluster => EXIT_INPUT,
        _ => EXIT_FAILURE,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let (args, name) = match &cli.command {
        Command::Ingest(a) => (a, "ingest"),
        Command::Diagnose(a) => (a, "diagnose"),
        Command::Estimate(a) => (a, "estimate"),
        Command::Simulate(a) => (a, "simulate"),
    };
    let mut cfg = RunConfig::load(&args.config)?;
    let seed = args.seed.unwrap_or(cfg.seed);
    cfg.apply_seed(seed);
    if args.strict_positivity {
        if let Some(e) = &mut cfg.estimate {
            e.strict_positivity = true;
        }
    }
    if let Some(out) = &args.out {
        cfg.out = Some(std::path::absolute(out).unwrap_or_else(|_| out.clone()));
    }
    let threads = resolve_threads(args.threads, &cfg)?;
    cfg.threads = threads;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let pool = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    }
    .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    pool.install(|| match &cli.command {
        Command::Ingest(_) => cmd_ingest(section(&cfg.ingest, name)?, &out),
        Command::Diagnose(_) => cmd_diagnose(section(&cfg.diagnose, name)?, &out),
        Command::Estimate(_) => cmd_estimate(section(&cfg.estimate, name)?, &cfg, &out),
        Command::Simulate(_) => cmd_simulate(section(&cfg.simulate, name)?, &out),
    })?;
    atomic_write(&out.join("resolved_config.toml"), cfg.to_toml()?.as_bytes())
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T> {
    s.as_ref().ok_or_else(|| Error::Config(format!("config has no [{name}] section")))
}

// Flag, then environment, then config.
fn resolve_threads(flag: Option<usize>, cfg: &RunConfig) -> Result<Option<usize>> {
    let env = match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?,
        ),
        _ => None,
    };
    let n = flag.or(env).or(cfg.threads);
    if n == Some(0) {
        return Err(Error::Config("thread count must be >= 1".into()));
    }
    Ok(n)
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    atomic_write(path, &buf)
}

#[derive(Serialize)]
struct IngestAttrition<'a> {
    #[serde(flatten)]
    point: &'a crate::panel::Attrition,
    #[serde(skip_serializing_if = "Option::is_none")]
    longitudinal: Option<crate::panel::Attrition>,
}

pub fn cmd_ingest(cfg: &IngestConfig, out: &Path) -> Result<()> {
    let records = read_county_year_file(&cfg.county_year)?;
    let laws = read_law_dates_file(&cfg.law_dates)?;
    let spec = cfg.resolved_spec();
    let (mut panel, attrition) = build_point_panel(&records, &laws, &spec)?;
    if cfg.loo_summaries {
        panel = augment_with_loo_state_summaries(&panel);
    }
    write_with(&out.join("panel.csv"), |b| panel.write_csv(b, None))?;
    let longitudinal = if cfg.longitudinal {
        let (lp, la) = build_longitudinal_panel(&records, &laws, &spec)?;
        write_with(&out.join("longitudinal.csv"), |b| lp.write_csv(b))?;
        Some(la)
    } else {
        None
    };
    write_json(&out.join("attrition.json"), &IngestAttrition { point: &attrition, longitudinal })
}

#[derive(Serialize)]
struct Entanglement {
    correlation: crate::diagnostics::CorrelationKind,
    years: (i32, i32),
    n_states: usize,
    pooled: CooccurrenceMatrix,
    per_year: Vec<(i32, CooccurrenceMatrix)>,
    undefined: Vec<String>,
    exposure_law: LawCode,
    covariate_laws: Vec<LawCode>,
    variance_explained: Option<VarianceExplained>,
    variance_explained_error: Option<String>,
    bundle_threshold: f64,
    bundles: Vec<Bundle>,
}

pub fn cmd_diagnose(cfg: &DiagnoseConfig, out: &Path) -> Result<()> {
    if cfg.last_year < cfg.first_year {
        return Err(Error::Config("diagnose: last_year before first_year".into()));
    }
    let laws = read_law_dates_file(&cfg.law_dates)?;
    let states: Vec<String> = match &cfg.states {
        Some(s) => s.clone(),
        None => laws.states().map(String::from).collect(),
    };
    let years: Vec<i32> = (cfg.first_year..=cfg.last_year).collect();
    let table = state_year_law_table(&laws, &states, &years, &cfg.laws);
    write_with(&out.join("state_year.csv"), |b| table.write_csv(b))?;

    let pooled = cooccurrence_matrix(&table.values, &table.law_codes, cfg.correlation)?;
    let mut panels = vec![("pooled".to_string(), pooled.clone())];
    let mut per_year = Vec::new();
    if cfg.per_year {
        for &y in &years {
            let rows = table.year_rows(y);
            let m = cooccurrence_matrix(&rows, &table.law_codes, cfg.correlation)?;
            panels.push((format!("year={y}"), m.clone()));
            per_year.push((y, m));
        }
    }
    write_with(&out.join("heatmap.csv"), |b| write_heatmap_csv(b, &panels))?;

    let ve_table = {
        let mut codes = vec![cfg.exposure_law];
        codes.extend(cfg.covariate_laws.iter().copied());
        state_year_law_table(&laws, &states, &years, &codes)
    };
    let y = ve_table.column(cfg.exposure_law.as_str()).expect("exposure law is in the table");
    let x: Vec<Vec<f64>> = cfg
        .covariate_laws
        .iter()
        .map(|c| ve_table.column(c.as_str()).expect("covariate law is in the table"))
        .collect();
    let (ve, ve_err) = match variance_explained(&y, &x) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let bundles = bundle_recommendation(&pooled, cfg.bundle_threshold);
    write_json(
        &out.join("entanglement.json"),
        &Entanglement {
            correlation: cfg.correlation,
            years: (cfg.first_year, cfg.last_year),
            n_states: states.len(),
            undefined: pooled.undefined.clone(),
            pooled,
            per_year,
            exposure_law: cfg.exposure_law,
            covariate_laws: cfg.covariate_laws.clone(),
            variance_explained: ve,
            variance_explained_error: ve_err,
            bundle_threshold: cfg.bundle_threshold,
            bundles,
        },
    )
}

/// Contents of `results.json`.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateOutput {
    pub report: EstimateReport,
    /// Contrast `E(Y_d) - E(Y)` with the configured variance.
    pub contrast: ClusteredVariance,
    pub psi: ClusteredVariance,
    /// The contrast under an iid influence-curve variance, for comparison.
    pub contrast_iid: ClusteredVariance,
    pub identification: IdentificationReport,
    pub config: EstimateConfig,
}

enum Loaded {
    Point(PanelTable, PointShift),
    Longitudinal(LongitudinalPanel, LongitudinalDelayPolicy),
}

/// Runs the configured estimate without writing anything.
pub fn run_estimate(cfg: &EstimateConfig) -> Result<EstimateOutput> {
    cfg.validate()?;
    let loaded = match cfg.kind {
        EstimandKind::PointShift => {
            let panel = PanelTable::read_csv_file(&cfg.panel)?;
            let shift = cfg.shift.build(panel.exposure_max())?;
            Loaded::Point(panel, shift)
        }
        EstimandKind::LongitudinalDelay => {
            let panel = LongitudinalPanel::read_csv_file(&cfg.panel)?;
            let policy = LongitudinalDelayPolicy::new(panel.horizon(), cfg.delay_steps)?;
            Loaded::Longitudinal(panel, policy)
        }
    };
    let (report, identification) = match &loaded {
        Loaded::Point(panel, shift) => {
            let r = estimate_point_shift(panel, shift, &cfg.outcome_learner, &cfg.ratio_learner, &cfg.estimator)?;
            let id = identification_checks_point(panel, shift, cfg.support_quantile, r.diagnostics.positivity())?;
            (r, id)
        }
        Loaded::Longitudinal(panel, policy) => {
            let r = estimate_longitudinal_delay(panel, policy, &cfg.outcome_learner, &cfg.ratio_learner, &cfg.estimator)?;
            let id = identification_checks_longitudinal(panel, policy, r.diagnostics.positivity())?;
            (r, id)
        }
    };
    if cfg.strict_positivity && identification.positivity_violation() {
        return Err(Error::Identification(
            identification
                .checks
                .iter()
                .find(|c| c.name == "positivity")
                .map_or_else(|| "positivity violated".to_string(), |c| c.detail.clone()),
        ));
    }
    let (contrast, psi) = report.variance(cfg.variance, cfg.alpha)?;
    let (contrast_iid, _) = report.variance(VarianceMethod::Iid, cfg.alpha)?;
    Ok(EstimateOutput { report, contrast, psi, contrast_iid, identification, config: cfg.clone() })
}

pub fn cmd_estimate(cfg: &EstimateConfig, _run: &RunConfig, out: &Path) -> Result<()> {
    let result = match run_estimate(cfg) {
        Err(Error::Identification(msg)) => {
            // Record what failed before aborting.
            if let Ok(id) = identification_only(cfg) {
                write_json(&out.join("identification.json"), &id)?;
            }
            return Err(Error::Identification(msg));
        }
        r => r?,
    };
    write_json(&out.join("results.json"), &result)?;
    let stratum = match cfg.kind {
        EstimandKind::PointShift => PanelTable::read_csv_file(&cfg.panel)?.stratum(),
        EstimandKind::LongitudinalDelay => LongitudinalPanel::read_csv_file(&cfg.panel)?.stratum(),
    };
    let outcome = cfg
        .panel
        .file_stem()
        .map_or_else(|| "Y".to_string(), |s| s.to_string_lossy().into_owned());
    let estimand = match cfg.kind {
        EstimandKind::PointShift => "POINT_SHIFT",
        EstimandKind::LongitudinalDelay => "LONGITUDINAL_DELAY",
    };
    let row = |label: &str, v: &ClusteredVariance| ResultRow {
        stratum: stratum.as_str().to_string(),
        outcome: outcome.clone(),
        estimand: format!("{estimand}:{label}"),
        estimate: v.estimate,
        se: v.se,
        ci_low: v.ci_low,
        ci_high: v.ci_high,
        n: result.report.n,
        n_clusters: result.report.n_clusters,
    };
    let rows = vec![row("contrast", &result.contrast), row("psi", &result.psi)];
    write_with(&out.join("results.csv"), |b| write_results_table(&rows, b))
}

// Re-runs the estimate non-strictly to obtain the full identification report.
fn identification_only(cfg: &EstimateConfig) -> Result<IdentificationReport> {
    let relaxed = EstimateConfig { strict_positivity: false, ..cfg.clone() };
    Ok(run_estimate(&relaxed)?.identification)
}

#[derive(Serialize)]
struct TruthFile<'a> {
    #[serde(flatten)]
    truth: &'a Truth,
    /// The policy the truth refers to, with `a_max` resolved.
    policy: ShiftOrDelay,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
enum ShiftOrDelay {
    PointShift { shift: ShiftConfig },
    LongitudinalDelay { horizon: usize, delay_steps: usize },
}

pub fn cmd_simulate(cfg: &SimulateConfig, out: &Path) -> Result<()> {
    let dgp = &cfg.dgp;
    dgp.validate()?;
    if cfg.mc_draws == 0 {
        return Err(Error::Config("mc_draws must be >= 1".into()));
    }
    match &dgp.longitudinal {
        Some(l) => {
            let panel = simulate_longitudinal(l, dgp.n_units, dgp.n_clusters, dgp.seed)?;
            write_with(&out.join("longitudinal.csv"), |b| panel.write_csv(b))?;
            let policy = LongitudinalDelayPolicy::new(l.horizon, cfg.delay_steps)?;
            let truth = true_longitudinal_contrast(l, &policy, cfg.mc_draws, dgp.seed)?;
            write_json(
                &out.join("truth.json"),
                &TruthFile {
                    truth: &truth,
                    policy: ShiftOrDelay::LongitudinalDelay { horizon: l.horizon, delay_steps: cfg.delay_steps },
                },
            )?;
        }
        None => {
            let panel = simulate_point(dgp, cfg.stratum)?;
            write_with(&out.join("panel.csv"), |b| panel.write_csv(b, None))?;
            // The truth refers to the population support, so an unset a_max
            // resolves to the DGP's upper bound rather than the sample max.
            let resolved = match cfg.shift.clone() {
                ShiftConfig::Bounded { delta1, delta2, a_max } => {
                    ShiftConfig::Bounded { delta1, delta2, a_max: Some(a_max.unwrap_or(dgp.a_max())) }
                }
                s => s,
            };
            let shift = resolved.build(dgp.a_max())?;
            let truth = true_shift_contrast(dgp, &shift, cfg.mc_draws)?;
            write_json(
                &out.join("truth.json"),
                &TruthFile { truth: &truth, policy: ShiftOrDelay::PointShift { shift: resolved } },
            )?;
        }
    }
    if let Some(raw) = &cfg.raw {
        let f = raw_fixture(raw)?;
        write_with(&out.join("county_year.csv"), |b| write_county_year(b, &f.records))?;
        write_with(&out.join("law_dates.csv"), |b| write_law_dates(b, &f.laws))?;
    }
    Ok(())
}
