//! End-to-end runs of the `mtpshift` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::Rng;
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mtpshift"));
    c.env_remove("MTPSHIFT_THREADS");
    c
}

fn run(args: &[&str], config: &Path) -> Output {
    bin().args(args).arg("--config").arg(config).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn f(v: &Value, path: &[&str]) -> f64 {
    let mut v = v;
    for k in path {
        v = &v[k];
    }
    v.as_f64().unwrap_or_else(|| panic!("{path:?} is not a number: {v}"))
}

const GLM: &str = "[estimate.outcome_learner]\nlibrary = [{ kind = \"GLM_LINEAR\" }]\nloss = \"squared_error\"\n\
                   [estimate.ratio_learner]\nlibrary = [{ kind = \"GLM_LOGISTIC\" }]\nloss = \"log_loss\"\n";

fn simulate(dir: &Path, name: &str, dgp: &str) -> PathBuf {
    let cfg = write(dir, &format!("{name}.toml"), &format!("seed = 3\nout = \"{name}\"\n[simulate]\nmc_draws = 200000\n{dgp}"));
    let o = run(&["simulate"], &cfg);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    dir.join(name)
}

fn estimate(dir: &Path, name: &str, panel: &Path, extra: &str) -> Output {
    let cfg = write(
        dir,
        &format!("{name}.toml"),
        &format!(
            "seed = 3\nout = \"{name}\"\n[estimate]\npanel = \"{}\"\nkind = \"POINT_SHIFT\"\n{extra}\n{GLM}",
            panel.display()
        ),
    );
    run(&["estimate"], &cfg)
}

#[test]
fn ingest_reports_attrition() {
    let d = tempfile::tempdir().unwrap();
    for (frac, want) in [(0.05, 0.05), (0.0, 0.0)] {
        let name = format!("raw{}", (frac * 100.0) as u32);
        let src = simulate(
            d.path(),
            &name,
            &format!("[simulate.raw]\nunresolvable_masked_fraction = {frac}\nresolvable_masked_fraction = 0.0\n"),
        );
        let cfg = write(
            d.path(),
            &format!("ingest{name}.toml"),
            &format!(
                "out = \"ing{name}\"\n[ingest]\ncounty_year = \"{0}/county_year.csv\"\nlaw_dates = \"{0}/law_dates.csv\"\nstratum = \"LATE\"\noutcome = \"naloxone\"\nlongitudinal = true\n",
                src.display()
            ),
        );
        let o = run(&["ingest"], &cfg);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let out = d.path().join(format!("ing{name}"));
        let a = json(out.join("attrition.json"));
        assert_eq!(f(&a, &["fraction_excluded"]), want);
        assert_eq!(a["n_input"], 200);
        assert!(out.join("panel.csv").exists() && out.join("longitudinal.csv").exists());
        assert!(out.join("resolved_config.toml").exists());
    }
}

#[test]
fn ingest_names_missing_column() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "cy.csv", "county_id,state_id,year,pop12plus,naloxone_count,pharmacy_count,opioid_dispensing_flag\n");
    write(d.path(), "laws.csv", "state_id,law_code,effective_date\nS1,NAL_P1,2012-01-01\n");
    let cfg = write(
        d.path(),
        "ingest.toml",
        "out = \"o\"\n[ingest]\ncounty_year = \"cy.csv\"\nlaw_dates = \"laws.csv\"\nstratum = \"LATE\"\noutcome = \"naloxone\"\n",
    );
    let o = run(&["ingest"], &cfg);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("overdose_count"));
}

#[test]
fn config_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let unknown = write(d.path(), "a.toml", "[simulate]\nmc_draws = 10\nbogus_key = 1\n");
    assert_eq!(run(&["simulate"], &unknown).status.code(), Some(2));
    let missing = write(d.path(), "b.toml", "seed = 1\n");
    let o = run(&["estimate"], &missing);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("[estimate]"));
    let infeasible = write(d.path(), "c.toml", "out = \"c\"\n[simulate]\n[simulate.dgp]\nn_units = 5\nn_clusters = 10\n");
    assert_eq!(run(&["simulate"], &infeasible).status.code(), Some(2));
    let ok = write(d.path(), "d.toml", "out = \"d\"\n[simulate]\nmc_draws = 1000\n[simulate.dgp]\nn_units = 50\nn_clusters = 5\n");
    let o = bin().args(["simulate", "--config"]).arg(&ok).env("MTPSHIFT_THREADS", "many").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(bin().args(["simulate", "--config"]).arg(&ok).args(["--threads", "1"]).status().unwrap().success());
    assert_eq!(bin().arg("frobnicate").status().unwrap().code(), Some(2));
}

#[test]
fn simulate_truth_files() {
    let d = tempfile::tempdir().unwrap();
    let null = simulate(d.path(), "null", "[simulate.dgp]\nn_units = 200\nn_clusters = 10\noutcome = { response = \"NULL\" }\n");
    let t = json(null.join("truth.json"));
    assert_eq!(f(&t, &["true_contrast"]), 0.0);
    assert_eq!(t["oracle_method"], "closed_form");

    let lin = simulate(d.path(), "lin", "[simulate.dgp]\nn_units = 200\nn_clusters = 10\n");
    let t = json(lin.join("truth.json"));
    let gap = (f(&t, &["closed_form"]) - f(&t, &["mc_contrast"])).abs();
    assert!(gap < 3.0 * f(&t, &["mc_se"]), "{t}");
    assert_eq!(f(&t, &["policy", "shift", "a_max"]), 4.79);
}

#[test]
fn estimate_null_and_linear_against_oracle() {
    let d = tempfile::tempdir().unwrap();
    let null = simulate(d.path(), "null", "[simulate.dgp]\nn_units = 2000\nn_clusters = 40\noutcome = { response = \"NULL\" }\n");
    let o = estimate(d.path(), "est_null", &null.join("panel.csv"), "");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(d.path().join("est_null/results.json"));
    let (c, se) = (f(&r, &["contrast", "estimate"]), f(&r, &["contrast", "se"]));
    assert!(c.abs() < 3.0 * se, "{c} {se}");
    assert!(f(&r, &["report", "mean_ic"]).abs() < 1e-6);

    let lin = simulate(d.path(), "lin", "[simulate.dgp]\nn_units = 3000\nn_clusters = 40\n");
    let truth = f(&json(lin.join("truth.json")), &["true_contrast"]);
    let shift = "[estimate.shift]\nkind = \"BOUNDED\"\ndelta1 = 1.0\ndelta2 = 2.0\na_max = 4.79\n";
    let o = estimate(d.path(), "est_lin", &lin.join("panel.csv"), shift);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(d.path().join("est_lin/results.json"));
    let (c, se) = (f(&r, &["contrast", "estimate"]), f(&r, &["contrast", "se"]));
    assert!((c - truth).abs() < 3.0 * se, "{c} vs {truth} (se {se})");
    assert_eq!(r["identification"]["checks"].as_array().unwrap().len(), 6);
    let csv = std::fs::read_to_string(d.path().join("est_lin/results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("stratum,outcome,estimand,estimate,se,ci_low,ci_high,n,n_clusters"));
}

#[test]
fn resolved_config_reproduces_results() {
    let d = tempfile::tempdir().unwrap();
    let sim = simulate(d.path(), "sim", "[simulate.dgp]\nn_units = 600\nn_clusters = 20\n");
    let o = estimate(d.path(), "first", &sim.join("panel.csv"), "");
    assert!(o.status.success());
    let echoed = d.path().join("first/resolved_config.toml");
    let again = d.path().join("again");
    let o = bin().args(["estimate", "--config"]).arg(&echoed).arg("--out").arg(&again).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(d.path().join("first/results.json")).unwrap(),
        std::fs::read(again.join("results.json")).unwrap()
    );
    // A different seed changes the fold assignment and hence the numbers.
    let o = bin().args(["estimate", "--config"]).arg(&echoed).args(["--seed", "99", "--out"]).arg(d.path().join("other")).output().unwrap();
    assert!(o.status.success());
    let a = json(d.path().join("first/results.json"));
    let b = json(d.path().join("other/results.json"));
    assert_ne!(a["report"]["psi_hat"], b["report"]["psi_hat"]);
    assert_eq!(b["config"]["estimator"]["seed"], 99);
}

#[test]
fn strict_positivity_aborts_on_disjoint_support() {
    let d = tempfile::tempdir().unwrap();
    let sim = simulate(
        d.path(),
        "disjoint",
        "[simulate.dgp]\nn_units = 1000\nn_clusters = 20\nexposure = { kind = \"DISJOINT\", a_max = 4.79 }\n",
    );
    let shift = "[estimate.shift]\nkind = \"ADDITIVE\"\ndelta = 2.0\n";
    let lax = estimate(d.path(), "lax", &sim.join("panel.csv"), shift);
    assert!(lax.status.success(), "{}", String::from_utf8_lossy(&lax.stderr));
    let r = json(d.path().join("lax/results.json"));
    assert_eq!(r["identification"]["any_warn"], true);
    assert_eq!(r["report"]["diagnostics"]["positivity"]["violation"], true);

    let strict = estimate(d.path(), "strict", &sim.join("panel.csv"), &format!("strict_positivity = true\n{shift}"));
    assert_eq!(strict.status.code(), Some(3), "{}", String::from_utf8_lossy(&strict.stderr));
    let id = json(d.path().join("strict/identification.json"));
    let pos = id["checks"].as_array().unwrap().iter().find(|c| c["name"] == "positivity").unwrap();
    assert_eq!(pos["status"], "CHECKED-WARN");
    assert!(!d.path().join("strict/results.json").exists());

    // The flag has the same effect as the config key.
    let cfg = d.path().join("lax.toml");
    let o = bin().args(["estimate", "--strict-positivity", "--config"]).arg(&cfg).arg("--out").arg(d.path().join("flag")).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn estimate_longitudinal_from_cli() {
    let d = tempfile::tempdir().unwrap();
    let sim = simulate(d.path(), "long", "[simulate.dgp]\nn_units = 3000\nn_clusters = 30\n[simulate.dgp.longitudinal]\nhorizon = 3\n");
    let truth = json(sim.join("truth.json"));
    assert_eq!(truth["oracle_method"], "exact_enumeration");
    let cfg = write(
        d.path(),
        "est.toml",
        &format!(
            "out = \"est\"\n[estimate]\npanel = \"{}\"\nkind = \"LONGITUDINAL_DELAY\"\ndelay_steps = 2\n{GLM}",
            sim.join("longitudinal.csv").display()
        ),
    );
    let o = run(&["estimate"], &cfg);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(d.path().join("est/results.json"));
    let (psi, se) = (f(&r, &["psi", "estimate"]), f(&r, &["psi", "se"]));
    assert!((psi - f(&truth, &["true_psi"])).abs() < 3.0 * se, "{psi} {se} {truth}");
    assert_eq!(r["report"]["diagnostics"]["kind"], "longitudinal");
}

fn law_csv(rows: &[(String, &str, String)]) -> String {
    let mut s = String::from("state_id,law_code,effective_date\n");
    for (st, code, date) in rows {
        s.push_str(&format!("{st},{code},{date}\n"));
    }
    s
}

fn diagnose(dir: &Path, laws: &str, extra: &str) -> (Value, String) {
    write(dir, "laws.csv", laws);
    let cfg = write(dir, "diag.toml", &format!("out = \"diag\"\n[diagnose]\nlaw_dates = \"laws.csv\"\n{extra}"));
    let o = run(&["diagnose"], &cfg);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    (json(dir.join("diag/entanglement.json")), std::fs::read_to_string(dir.join("diag/heatmap.csv")).unwrap())
}

fn heat(csv: &str, a: &str, b: &str) -> String {
    csv.lines()
        .find(|l| l.starts_with(&format!("pooled,{a},{b},")))
        .unwrap_or_else(|| panic!("no {a}/{b} row"))
        .rsplit(',')
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn diagnose_co_enacted_and_constant_laws() {
    let d = tempfile::tempdir().unwrap();
    let mut rows = Vec::new();
    for s in 0..30 {
        let st = format!("S{s:02}");
        let date = format!("{}-0{}-15", 2008 + s % 9, 1 + s % 9);
        for code in ["NAL_P1", "NAL_P3", "GSL"] {
            rows.push((st.clone(), code, date.clone()));
        }
        rows.push((st.clone(), "PDMP_OPERATIONAL", format!("{}-03-01", 2006 + (s * 7) % 12)));
    }
    let (e, csv) = diagnose(d.path(), &law_csv(&rows), "laws = [\"NAL_P1\", \"GSL\", \"PDMP_OPERATIONAL\", \"MML\"]\n");
    assert!((heat(&csv, "NAL_P1", "GSL").parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(heat(&csv, "NAL_P1", "MML"), "UNDEFINED");
    assert_eq!(e["undefined"], serde_json::json!(["MML"]));
    let bundles = e["bundles"].as_array().unwrap();
    assert!(bundles.iter().any(|b| b["laws"] == serde_json::json!(["NAL_P1", "GSL"]) || b["laws"] == serde_json::json!(["GSL", "NAL_P1"])), "{bundles:?}");
    assert!(d.path().join("diag/state_year.csv").exists());
}

#[test]
fn diagnose_independent_laws_are_uncorrelated() {
    let d = tempfile::tempdir().unwrap();
    let mut r = mtpshift::stats::rng(21, 0);
    let codes = ["NAL_P1", "GSL", "PDMP_OPERATIONAL", "PMCL"];
    let mut rows = Vec::new();
    for s in 0..3000 {
        for code in codes {
            let day = r.random_range(0..(365 * 11));
            let date = chrono::NaiveDate::from_ymd_opt(2007, 1, 1).unwrap() + chrono::Days::new(day);
            rows.push((format!("S{s:04}"), code, date.to_string()));
        }
    }
    let (e, csv) = diagnose(
        d.path(),
        &law_csv(&rows),
        "laws = [\"NAL_P1\", \"GSL\", \"PDMP_OPERATIONAL\", \"PMCL\"]\nper_year = true\n",
    );
    // Pooled state-years share the secular trend of every law, so
    // independence shows up in the within-year cross-sections.
    let mut n = 0;
    for line in csv.lines().filter(|l| l.starts_with("year=")) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols[1] == cols[2] || cols[3] == "UNDEFINED" {
            continue;
        }
        let v: f64 = cols[3].parse().unwrap();
        assert!(v < 0.1, "{line}");
        n += 1;
    }
    assert!(n >= 6 * 10, "{n} off-diagonal entries checked");
    assert_eq!(e["per_year"].as_array().unwrap().len(), 11);
}
