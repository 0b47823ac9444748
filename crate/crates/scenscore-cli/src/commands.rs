//! Pipeline commands behind the CLI subcommands: ingest → fit →
//! generate → score → compare, plus the brute-force oracle cross-check.

use std::collections::BTreeMap;
use std::path::Path;

use scenscore::distributions::fit::{FitMode, ParamsDocument};
use scenscore::distributions::FitProvider;
use scenscore::error::{Error, Result};
use scenscore::factor::FactorId;
use scenscore::marketdata::{ingest_curve, to_returns, CurveSeries, IngestOptions, ReturnMatrix};
use scenscore::optimizer::{brute_force_optimal, exact_optimal, LossConstraint};
use scenscore::portfolios::{
    bond_duration, build_universe, tenor_years, universe_to_csv, PortfolioUniverse, UniverseOptions,
};
use scenscore::scenarios::{build_base_set, build_enriched_set, pca_per_curve, PcaBasis, ScenarioSet};
use scenscore::scoring::{
    aggregate_by_scenario, plausibility_comparison, portfolio_curves, score_universe,
    ScenarioAggregate, ScoreRecord, ScoringOptions, ScoringOutcome,
};

use crate::config::{CouponConfig, RunConfig};
use crate::output::{sanitize_name, write_csv, write_json, write_text, OutputMeta};

/// Outcome counters used by the binary to pick the exit code.
#[derive(Debug, Default, Clone, Copy)]
pub struct RunStatus {
    /// Portfolios that failed outright and were excluded.
    pub failures: usize,
    /// Records whose exact solve did not converge.
    pub non_converged: usize,
}

impl RunStatus {
    pub fn merge(self, other: RunStatus) -> RunStatus {
        RunStatus {
            failures: self.failures + other.failures,
            non_converged: self.non_converged + other.non_converged,
        }
    }
}

pub struct MarketData {
    pub curves: Vec<CurveSeries>,
    pub returns: ReturnMatrix,
}

pub fn load_market(cfg: &RunConfig) -> Result<MarketData> {
    let options = IngestOptions {
        date_column: cfg.data.date_column.clone(),
        column_map: cfg.data.column_map.clone(),
    };
    let curves: Vec<CurveSeries> = cfg
        .data
        .curves
        .iter()
        .map(|c| ingest_curve(cfg.resolve(&c.file), &c.id, &cfg.data.pillars, &options))
        .collect::<Result<_>>()?;
    let returns = to_returns(&curves)?;
    Ok(MarketData { curves, returns })
}

/// Instrument durations from the last observed yield level per pillar.
/// Yield files quote percentage points; rates are converted to decimals
/// and the par coupon is floored at zero when yields are negative.
pub fn duration_map(cfg: &RunConfig, market: &MarketData) -> Result<BTreeMap<(String, String), f64>> {
    let mut out = BTreeMap::new();
    for series in &market.curves {
        for pillar in series.pillars() {
            let maturity = tenor_years(pillar)?;
            let y = series.last_yield(pillar)? / 100.0;
            let coupon = match cfg.portfolios.coupon {
                CouponConfig::Rate(r) => r,
                CouponConfig::Named(_) => y.max(0.0),
            };
            let d = bond_duration(maturity, y, coupon)?;
            out.insert((series.curve_id().to_string(), pillar.clone()), d);
        }
    }
    Ok(out)
}

pub fn universe_from(cfg: &RunConfig, market: &MarketData) -> Result<PortfolioUniverse> {
    let durations = duration_map(cfg, market)?;
    let curve_ids: Vec<String> = cfg.data.curves.iter().map(|c| c.id.clone()).collect();
    build_universe(
        &curve_ids,
        &cfg.data.pillars,
        &durations,
        &UniverseOptions {
            beta_kinds: cfg.portfolios.beta_kinds.clone(),
            pnl_sign: cfg.portfolios.pnl_sign,
        },
    )
}

fn meta_for(cfg: &RunConfig, market: &MarketData) -> OutputMeta {
    OutputMeta::new(&cfg.config_hash, market.returns.window())
}

fn meta_with_solver(cfg: &RunConfig, market: &MarketData) -> OutputMeta {
    meta_for(cfg, market).with(
        "solver",
        format!(
            "tol_grad={} tol_con={} max_iters={} tie_break={:?}",
            cfg.solver.tol_grad, cfg.solver.tol_con, cfg.solver.max_iters, cfg.solver.tie_break
        ),
    )
}

/// `fit`: fits the configured distributions and writes the parameter
/// document. Per-group mode fits one copula per distinct portfolio
/// factor group; full mode fits a single distribution on every factor.
pub fn cmd_fit(cfg: &RunConfig) -> Result<RunStatus> {
    let market = load_market(cfg)?;
    let universe = universe_from(cfg, &market)?;
    let provider = FitProvider::new(cfg.fit.mode, &market.returns, cfg.fit.options())?;

    match cfg.fit.mode {
        FitMode::PerGroup => {
            let mut groups: Vec<Vec<FactorId>> =
                universe.portfolios.iter().map(|p| p.involved_factors()).collect();
            groups.sort();
            groups.dedup();
            use rayon::prelude::*;
            groups
                .par_iter()
                .map(|g| provider.params_for(g).map(|_| ()))
                .collect::<Result<Vec<()>>>()?;
        }
        FitMode::Full => {
            provider.params_for(&market.returns.factors().to_vec())?;
        }
    }

    let doc = ParamsDocument::from_provider(&provider, &market.returns);
    for g in &doc.groups {
        if g.nu_bar_at_upper_bound {
            eprintln!(
                "warning: group [{}] copula dof at the search bound ({:.1}): near-Gaussian copula",
                g.factors.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(", "),
                g.nu_bar
            );
        }
    }
    let mut json = serde_json::to_value(&doc)
        .map_err(|e| Error::data(format!("parameter document: {e}")))?;
    if let serde_json::Value::Object(ref mut map) = json {
        map.insert(
            "config_hash".to_string(),
            serde_json::Value::String(cfg.config_hash.clone()),
        );
    }
    let text = serde_json::to_string_pretty(&json)
        .map_err(|e| Error::data(format!("parameter document: {e}")))?;
    let out = cfg.out_dir();
    write_text(&out.join("fitted_params.json"), &text)?;
    // Bond conventions ride along so the exported durations are auditable.
    let coupon_desc = match cfg.portfolios.coupon {
        CouponConfig::Rate(r) => format!("fixed {r}"),
        CouponConfig::Named(_) => "par (last yield, floored at 0)".to_string(),
    };
    write_text(&out.join("universe.csv"), &{
        let meta = meta_for(cfg, &market)
            .with("coupon-convention", coupon_desc)
            .with("coupon-frequency", "semi-annual")
            .with("pnl-sign", format!("{:?}", cfg.portfolios.pnl_sign).to_lowercase());
        let mut s = meta.comment_lines();
        s.push_str(&universe_to_csv(&universe));
        s
    })?;
    eprintln!(
        "fit: {} group(s) written to {}",
        doc.groups.len(),
        out.join("fitted_params.json").display()
    );
    Ok(RunStatus::default())
}

/// PCA bases for the two configured curves (scenario generation is
/// defined for exactly two).
pub fn pca_bases(cfg: &RunConfig, market: &MarketData) -> Result<(PcaBasis, PcaBasis)> {
    if cfg.data.curves.len() != 2 {
        return Err(Error::validation(format!(
            "scenario generation needs exactly 2 curves, config has {}",
            cfg.data.curves.len()
        )));
    }
    let n = cfg.scenarios.n_components.max(3);
    let a = pca_per_curve(&market.returns, &cfg.data.curves[0].id, n)?;
    let b = pca_per_curve(&market.returns, &cfg.data.curves[1].id, n)?;
    for w in a.warnings.iter().chain(&b.warnings) {
        eprintln!("warning: {w}");
    }
    Ok((a, b))
}

/// `gen-scenarios`: writes the base and enriched PCA scenario sets.
pub fn cmd_generate(cfg: &RunConfig) -> Result<RunStatus> {
    let market = load_market(cfg)?;
    let (aaa, all_) = pca_bases(cfg, &market)?;
    let base = build_base_set(&aaa, &all_, cfg.scenarios.scale)?;
    let enriched = build_enriched_set(&aaa, &all_, cfg.scenarios.scale)?;

    let out = cfg.out_dir();
    let meta = meta_for(cfg, &market);
    for (set, file) in [(&base, "scenarios_base.csv"), (&enriched, "scenarios_enriched.csv")] {
        let mut text = meta.clone().with("set", &set.name).comment_lines();
        text.push_str(&set.to_csv());
        write_text(&out.join(file), &text)?;
    }

    let curve_summaries: Vec<serde_json::Value> = [&aaa, &all_]
        .iter()
        .map(|b| {
            serde_json::json!({
                "curve": b.curve_id,
                "pillars": b.pillars,
                "sigmas": b.sigmas,
                "components": b.components.iter().map(|c| c.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>(),
                "warnings": b.warnings,
            })
        })
        .collect();
    let pca_json = serde_json::json!({
        "curves": curve_summaries,
        "scale": cfg.scenarios.scale,
    });
    write_json(&out.join("pca_summary.json"), &meta, pca_json)?;
    eprintln!(
        "gen-scenarios: base {} rows, enriched {} rows written to {}",
        base.len(),
        enriched.len(),
        out.display()
    );
    Ok(RunStatus::default())
}

fn scoring_options(cfg: &RunConfig) -> ScoringOptions {
    ScoringOptions {
        solver: cfg.solver.settings(),
        tie_break: cfg.solver.tie_break,
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

fn scores_csv_rows(records: &[ScoreRecord]) -> Vec<String> {
    records
        .iter()
        .map(|r| {
            let optimal = r
                .group
                .iter()
                .zip(r.optimal.scenario.iter())
                .map(|(f, v)| format!("{f}={v}"))
                .collect::<Vec<_>>()
                .join("|");
            format!(
                "\"{}\",\"{}\",{},{},{},{},{},{},{},{},{},{},{}",
                r.portfolio,
                r.driver_id,
                fmt_f(r.loss),
                fmt_f(r.q),
                fmt_f(r.phi),
                fmt_f(r.psi),
                r.optimal.converged,
                r.optimal.iterations,
                r.tie_broken,
                fmt_f(r.log_density_driver),
                fmt_f(r.optimal.log_density),
                fmt_f(r.optimal.constraint_value),
                optimal
            )
        })
        .collect()
}

const SCORES_HEADER: &str = "portfolio,driver,loss,q,phi,psi,converged,iterations,tie_broken,log_density_driver,log_density_optimal,constraint_value,optimal_scenario";

fn aggregate_rows(aggs: &[ScenarioAggregate]) -> Vec<String> {
    aggs.iter()
        .map(|a| {
            format!(
                "\"{}\",{},{},{},{},{}",
                a.scenario_id,
                a.quantity,
                fmt_f(a.phi_mean),
                fmt_f(a.phi_std),
                fmt_f(a.psi_mean),
                fmt_f(a.psi_std)
            )
        })
        .collect()
}

/// Null-aware variant of the aggregate table: zero-quantity scenarios
/// report `null` statistics instead of conflating "no data" with 0.
fn aggregates_json(aggs: &[ScenarioAggregate]) -> serde_json::Value {
    let rows: Vec<serde_json::Value> = aggs
        .iter()
        .map(|a| {
            let stat = |v: f64| {
                if a.quantity == 0 {
                    serde_json::Value::Null
                } else {
                    serde_json::json!(v)
                }
            };
            serde_json::json!({
                "scenario": a.scenario_id,
                "quantity": a.quantity,
                "phi_mean": stat(a.phi_mean),
                "phi_std": stat(a.phi_std),
                "psi_mean": stat(a.psi_mean),
                "psi_std": stat(a.psi_std),
            })
        })
        .collect();
    serde_json::Value::Array(rows)
}

/// `score`: scores the universe against one scenario set.
pub fn cmd_score(cfg: &RunConfig, set_path: &Path) -> Result<RunStatus> {
    let market = load_market(cfg)?;
    let universe = universe_from(cfg, &market)?;
    let provider = FitProvider::new(cfg.fit.mode, &market.returns, cfg.fit.options())?;
    let set = ScenarioSet::load(cfg.resolve(set_path))?;
    let outcome = score_universe(&universe, &set, &provider, &scoring_options(cfg))?;
    report_failures(&outcome);

    let aggs = aggregate_by_scenario(&outcome.records, &set.align(universe.factors.as_slice())?);
    let out = cfg.out_dir();
    let meta = meta_with_solver(cfg, &market)
        .with("set", &set.name)
        .with("excluded", outcome.failures.len());
    write_csv(
        &out.join("scores.csv"),
        &meta,
        SCORES_HEADER,
        &scores_csv_rows(&outcome.records),
    )?;
    write_csv(
        &out.join("scenario_table.csv"),
        &meta,
        "scenario,quantity,phi_mean,phi_std,psi_mean,psi_std",
        &aggregate_rows(&aggs),
    )?;
    write_json(
        &out.join("scenario_table.json"),
        &meta,
        serde_json::json!({ "set": set.name, "rows": aggregates_json(&aggs) }),
    )?;
    eprintln!(
        "score: {} records ({} excluded) written to {}",
        outcome.records.len(),
        outcome.failures.len(),
        out.display()
    );
    Ok(RunStatus {
        failures: outcome.failures.len(),
        non_converged: outcome.records.iter().filter(|r| !r.optimal.converged).count(),
    })
}

fn report_failures(outcome: &ScoringOutcome) {
    for (name, err) in &outcome.failures {
        eprintln!("warning: portfolio {name} excluded: {err}");
    }
}

/// Union of the aggregate rows of two sets: set-a order first, then
/// set-b extras, Total last. Missing entries report zeros.
fn union_table(a: &[ScenarioAggregate], b: &[ScenarioAggregate]) -> Vec<String> {
    let zero = |id: &str| ScenarioAggregate {
        scenario_id: id.to_string(),
        quantity: 0,
        phi_mean: 0.0,
        phi_std: 0.0,
        psi_mean: 0.0,
        psi_std: 0.0,
    };
    let find = |list: &[ScenarioAggregate], id: &str| {
        list.iter().find(|x| x.scenario_id == id).cloned()
    };
    let mut ids: Vec<String> = a
        .iter()
        .filter(|x| x.scenario_id != "Total")
        .map(|x| x.scenario_id.clone())
        .collect();
    for x in b.iter().filter(|x| x.scenario_id != "Total") {
        if !ids.contains(&x.scenario_id) {
            ids.push(x.scenario_id.clone());
        }
    }
    ids.push("Total".to_string());
    ids.iter()
        .map(|id| {
            let ra = find(a, id).unwrap_or_else(|| zero(id));
            let rb = find(b, id).unwrap_or_else(|| zero(id));
            format!(
                "\"{}\",{},{},{},{},{},{},{},{},{},{}",
                id,
                ra.quantity,
                fmt_f(ra.phi_mean),
                fmt_f(ra.phi_std),
                fmt_f(ra.psi_mean),
                fmt_f(ra.psi_std),
                rb.quantity,
                fmt_f(rb.phi_mean),
                fmt_f(rb.phi_std),
                fmt_f(rb.psi_mean),
                fmt_f(rb.psi_std)
            )
        })
        .collect()
}

/// `compare`: scores the universe under two sets sharing one fit, then
/// writes the side-by-side table, the score curves, and per-portfolio
/// comparison artifacts for every portfolio whose driver changed.
pub fn cmd_compare(cfg: &RunConfig, set_a_path: &Path, set_b_path: &Path) -> Result<RunStatus> {
    let market = load_market(cfg)?;
    let universe = universe_from(cfg, &market)?;
    let provider = FitProvider::new(cfg.fit.mode, &market.returns, cfg.fit.options())?;
    let set_a = ScenarioSet::load(cfg.resolve(set_a_path))?;
    let set_b = ScenarioSet::load(cfg.resolve(set_b_path))?;
    let opts = scoring_options(cfg);

    let out_a = score_universe(&universe, &set_a, &provider, &opts)?;
    let out_b = score_universe(&universe, &set_b, &provider, &opts)?;
    report_failures(&out_a);
    report_failures(&out_b);

    let agg_a = aggregate_by_scenario(&out_a.records, &set_a.align(universe.factors.as_slice())?);
    let agg_b = aggregate_by_scenario(&out_b.records, &set_b.align(universe.factors.as_slice())?);

    let out = cfg.out_dir();
    let meta = meta_with_solver(cfg, &market)
        .with("set_a", &set_a.name)
        .with("set_b", &set_b.name);
    write_csv(
        &out.join("scenario_table.csv"),
        &meta,
        "scenario,quantity_a,phi_mean_a,phi_std_a,psi_mean_a,psi_std_a,quantity_b,phi_mean_b,phi_std_b,psi_mean_b,psi_std_b",
        &union_table(&agg_a, &agg_b),
    )?;
    write_json(
        &out.join("scenario_table.json"),
        &meta,
        serde_json::json!({
            "set_a": { "name": set_a.name, "rows": aggregates_json(&agg_a) },
            "set_b": { "name": set_b.name, "rows": aggregates_json(&agg_b) },
        }),
    )?;

    // Score curves require both record lists over the same universe; a
    // portfolio excluded under either set is left out of the curves.
    let names_b: std::collections::BTreeSet<&str> =
        out_b.records.iter().map(|r| r.portfolio.as_str()).collect();
    let common_a: Vec<ScoreRecord> = out_a
        .records
        .iter()
        .filter(|r| names_b.contains(r.portfolio.as_str()))
        .cloned()
        .collect();
    let names_a: std::collections::BTreeSet<&str> =
        common_a.iter().map(|r| r.portfolio.as_str()).collect();
    let common_b: Vec<ScoreRecord> = out_b
        .records
        .iter()
        .filter(|r| names_a.contains(r.portfolio.as_str()))
        .cloned()
        .collect();
    let curves = portfolio_curves(&common_a, &common_b)?;
    let mut curve_rows = Vec::new();
    for (metric, rows) in [("phi", &curves.phi), ("psi", &curves.psi)] {
        for (rank, row) in rows.iter().enumerate() {
            curve_rows.push(format!(
                "{},{},\"{}\",{},{},{}",
                metric,
                rank,
                row.portfolio,
                fmt_f(row.score_s),
                fmt_f(row.score_t),
                row.same_driver
            ));
        }
    }
    write_csv(
        &out.join("portfolio_curves.csv"),
        &meta,
        "metric,rank,portfolio,score_s,score_t,same_driver",
        &curve_rows,
    )?;

    // Per-portfolio comparison detail for changed drivers.
    let by_name: BTreeMap<&str, &ScoreRecord> =
        common_b.iter().map(|r| (r.portfolio.as_str(), r)).collect();
    let mut class_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut changed = 0usize;
    for rec_a in &common_a {
        let rec_b = by_name[rec_a.portfolio.as_str()];
        let cmp = plausibility_comparison(rec_a, rec_b)?;
        *class_counts
            .entry(format!("{:?}", cmp.classification))
            .or_insert(0) += 1;
        if rec_a.driver_id != rec_b.driver_id {
            changed += 1;
            let value = serde_json::to_value(&cmp)
                .map_err(|e| Error::data(format!("comparison serialization: {e}")))?;
            write_json(
                &out.join("comparisons")
                    .join(format!("comparison_{}.json", sanitize_name(&rec_a.portfolio))),
                &meta,
                value,
            )?;
        }
    }
    let summary = serde_json::json!({
        "set_a": set_a.name,
        "set_b": set_b.name,
        "portfolios": common_a.len(),
        "drivers_changed": changed,
        "classification_counts": class_counts,
        "excluded_a": out_a.failures.len(),
        "excluded_b": out_b.failures.len(),
        "non_converged_a": out_a.records.iter().filter(|r| !r.optimal.converged).count(),
        "non_converged_b": out_b.records.iter().filter(|r| !r.optimal.converged).count(),
    });
    write_json(&out.join("compare_summary.json"), &meta, summary)?;
    eprintln!(
        "compare: {} portfolios, {} drivers changed, outputs in {}",
        common_a.len(),
        changed,
        out.display()
    );
    Ok(RunStatus {
        failures: out_a.failures.len() + out_b.failures.len(),
        non_converged: out_a
            .records
            .iter()
            .chain(&out_b.records)
            .filter(|r| !r.optimal.converged)
            .count(),
    })
}

/// `oracle`: brute-force cross-checks of the exact solver on a spread of
/// universe portfolios, at loss caps between one and three sigma drawn
/// from the configured seed.
pub fn cmd_oracle(cfg: &RunConfig) -> Result<RunStatus> {
    use rand::{Rng, SeedableRng};
    let market = load_market(cfg)?;
    let universe = universe_from(cfg, &market)?;
    let provider = FitProvider::new(cfg.fit.mode, &market.returns, cfg.fit.options())?;
    let n = universe.portfolios.len();
    let take = cfg.oracle.max_portfolios.min(n).max(1);
    let step = (n / take).max(1);
    let settings = cfg.solver.settings();
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(cfg.output.seed);

    let mut rows = Vec::new();
    let mut bad = 0usize;
    for p in universe.portfolios.iter().step_by(step).take(take) {
        let group = p.involved_factors();
        let params = provider.params_for(&group)?;
        let exposure = p.exposure_on(&group)?;
        let d = group.len();
        let mut quad = 0.0;
        for i in 0..d {
            for j in 0..d {
                quad += exposure[i]
                    * exposure[j]
                    * params.marginals()[i].sigma
                    * params.marginals()[j].sigma
                    * params.corr()[(i, j)];
            }
        }
        let depth = rng.random_range(1.0..3.0);
        let q = exposure.dot(&params.mode()) - depth * quad.sqrt();
        let c = LossConstraint::new(exposure, q)?;
        let exact = exact_optimal(&params, &c, &settings)?;
        let brute = brute_force_optimal(
            &params,
            &c,
            cfg.oracle.box_halfwidth_sigmas,
            cfg.oracle.grid_points,
        )?;
        let gap = exact.log_density.exp() - brute.log_density.exp();
        let residual = (exact.constraint_value - q).abs();
        let pass = exact.converged && gap >= -1e-6 && residual < settings.tol_con;
        if !pass {
            bad += 1;
        }
        rows.push(format!(
            "\"{}\",{},{},{},{},{},{}",
            p.name,
            fmt_f(exact.log_density),
            fmt_f(brute.log_density),
            fmt_f(gap),
            fmt_f(residual),
            exact.converged,
            pass
        ));
    }
    let meta = meta_for(cfg, &market).with("checked", rows.len());
    write_csv(
        &cfg.out_dir().join("oracle_report.csv"),
        &meta,
        "portfolio,exact_log_density,brute_log_density,density_gap,constraint_residual,converged,pass",
        &rows,
    )?;
    eprintln!("oracle: {} portfolios checked, {bad} failed", rows.len());
    Ok(RunStatus {
        failures: 0,
        non_converged: bad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agg(id: &str, quantity: usize, v: f64) -> ScenarioAggregate {
        ScenarioAggregate {
            scenario_id: id.to_string(),
            quantity,
            phi_mean: v,
            phi_std: v / 2.0,
            psi_mean: -v,
            psi_std: v / 3.0,
        }
    }

    #[test]
    fn aggregates_json_nulls_zero_quantity_rows() {
        let rows = aggregates_json(&[agg("(+1, +1)", 10, 0.5), agg("(+2, -2)", 0, 0.0)]);
        let rows = rows.as_array().unwrap();
        assert_eq!(rows[0]["quantity"], 10);
        assert!(rows[0]["phi_mean"].is_f64());
        assert_eq!(rows[1]["quantity"], 0);
        assert!(rows[1]["phi_mean"].is_null());
        assert!(rows[1]["psi_std"].is_null());
    }

    #[test]
    fn union_table_zero_fills_missing_scenarios() {
        let a = vec![agg("(+1, +1)", 4, 0.4), agg("Total", 4, 0.4)];
        let b = vec![agg("(+1, +1)", 2, 0.6), agg("(+2, -2)", 2, 0.9), agg("Total", 4, 0.7)];
        let rows = union_table(&a, &b);
        assert_eq!(rows.len(), 3); // union of 2 scenarios + Total
        // Set a has no "(+2, -2)": zeros on the a side.
        assert!(rows[1].starts_with("\"(+2, -2)\",0,0,0,0,0,2,"), "{}", rows[1]);
        assert!(rows[2].starts_with("\"Total\","));
    }
}
