//! Driver selection, the φ and ψ scores, and their aggregations.
//!
//! For a portfolio P and scenario set 𝒮 the stress loss is
//! `l(P) = min_i ᵗP S_i`, driven by the scenario Ŝ(P) attaining it. The
//! most plausible scenario S*(P) producing the same loss comes from the
//! exact solver; the scores compare the two:
//!
//! * `φ = f(Ŝ)/f(S*)` computed in log space, in (0, 1];
//! * `ψ = ⟨Ŝ, S*⟩ / (‖Ŝ‖‖S*‖)` on the portfolio's factor group.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{FitProvider, MetaTParams};
use crate::error::{Error, Result};
use crate::factor::FactorId;
use crate::optimizer::{exact_optimal_with_starts, LossConstraint, OptimalScenarioResult, SolverSettings};
use crate::portfolios::{PortfolioExposure, PortfolioUniverse};
use crate::scenarios::ScenarioSet;

/// Relative tolerance under which two scenario losses count as tied.
const TIE_REL_TOL: f64 = 1e-12;

/// Tie-break criterion among equal-loss drivers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// Highest joint density (the primary rule).
    #[default]
    Density,
    /// Smallest Mahalanobis form ᵗŜ Σ⁻¹ Ŝ on the portfolio's group.
    Mahalanobis,
}

/// Scoring configuration.
#[derive(Debug, Clone, Default)]
pub struct ScoringOptions {
    pub solver: SolverSettings,
    pub tie_break: TieBreak,
}

/// Per-portfolio scoring result.
#[derive(Debug, Clone)]
pub struct ScoreRecord {
    pub portfolio: String,
    pub driver_id: String,
    /// Stress loss l(P) = min_i ᵗP S_i.
    pub loss: f64,
    /// Loss cap of the optimality problem, ᵗP Ŝ of the selected driver.
    pub q: f64,
    /// The portfolio's factor group (solver space).
    pub group: Vec<FactorId>,
    /// Driver restricted to the group.
    pub driver_scenario: DVector<f64>,
    pub log_density_driver: f64,
    pub optimal: OptimalScenarioResult,
    pub phi: f64,
    pub psi: f64,
    pub tie_broken: bool,
}

/// Selects the scenario driving the worst loss; ties within 1e-12
/// relative are broken by the configured criterion, then by lowest
/// scenario index.
pub fn select_driver(
    portfolio: &PortfolioExposure,
    set: &ScenarioSet,
    params: &MetaTParams,
    tie_break: TieBreak,
) -> Result<(usize, f64, bool)> {
    if set.is_empty() {
        return Err(Error::validation("scenario set is empty".to_string()));
    }
    let losses: Vec<f64> = set.scenarios().iter().map(|(_, s)| portfolio.pnl(s)).collect();
    let min_loss = losses.iter().copied().fold(f64::INFINITY, f64::min);
    if !min_loss.is_finite() {
        return Err(Error::data("non-finite scenario loss".to_string()));
    }
    let tol = TIE_REL_TOL * min_loss.abs().max(1.0);
    let tied: Vec<usize> = (0..losses.len()).filter(|&i| losses[i] - min_loss <= tol).collect();
    if tied.len() == 1 {
        return Ok((tied[0], min_loss, false));
    }
    let group = portfolio.involved_factors();
    let mut best: Option<(usize, f64)> = None;
    for &i in &tied {
        let restricted = restrict_to_group(&set.scenarios()[i].1, set.factor_labels(), &group)?;
        let key = match tie_break {
            TieBreak::Density => params.log_density(&restricted)?,
            TieBreak::Mahalanobis => {
                let y = params.cholesky().solve(&restricted);
                -restricted.dot(&y)
            }
        };
        // Strictly-greater keeps the lowest index on residual ties.
        if best.map_or(true, |(_, b)| key > b) {
            best = Some((i, key));
        }
    }
    Ok((best.unwrap().0, min_loss, true))
}

fn restrict_to_group(
    scenario: &DVector<f64>,
    labels: &[FactorId],
    group: &[FactorId],
) -> Result<DVector<f64>> {
    let vals: Vec<f64> = group
        .iter()
        .map(|f| {
            labels
                .iter()
                .position(|g| g == f)
                .map(|i| scenario[i])
                .ok_or_else(|| Error::validation(format!("scenario set does not cover factor {f}")))
        })
        .collect::<Result<_>>()?;
    Ok(DVector::from_vec(vals))
}

/// Scores one portfolio against a scenario set under fitted group
/// parameters (`params.factor_labels()` must equal the portfolio's
/// involved factors).
pub fn score_portfolio(
    portfolio: &PortfolioExposure,
    set: &ScenarioSet,
    params: &MetaTParams,
    opts: &ScoringOptions,
) -> Result<ScoreRecord> {
    let set_aligned;
    let set = if set.factor_labels() == portfolio.factors() {
        set
    } else {
        set_aligned = set.align(portfolio.factors())?;
        &set_aligned
    };
    let group = portfolio.involved_factors();
    if params.factor_labels() != group.as_slice() {
        return Err(Error::validation(format!(
            "parameters cover [{}] but portfolio {} involves [{}]",
            params
                .factor_labels()
                .iter()
                .map(|f| f.to_string())
                .collect::<Vec<_>>()
                .join(", "),
            portfolio.name,
            group.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(", ")
        )));
    }

    let (driver_idx, loss, tie_broken) = select_driver(portfolio, set, params, opts.tie_break)?;
    let (driver_id, driver_full) = &set.scenarios()[driver_idx];
    let driver_scenario = restrict_to_group(driver_full, set.factor_labels(), &group)?;
    let exposure_group = portfolio.exposure_on(&group)?;
    let q = exposure_group.dot(&driver_scenario);

    let constraint = LossConstraint::new(exposure_group, q)?;
    let optimal =
        exact_optimal_with_starts(params, &constraint, &opts.solver, &[driver_scenario.clone()])?;
    let log_density_driver = params.log_density(&driver_scenario)?;
    let phi = (log_density_driver - optimal.log_density).exp();
    let psi = cosine(&driver_scenario, &optimal.scenario);

    Ok(ScoreRecord {
        portfolio: portfolio.name.clone(),
        driver_id: driver_id.clone(),
        loss,
        q,
        group,
        driver_scenario,
        log_density_driver,
        optimal,
        phi,
        psi,
        tie_broken,
    })
}

fn cosine(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na < 1e-300 || nb < 1e-300 {
        return 0.0;
    }
    (a.dot(b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Scoring outcome over a universe: records in universe order plus the
/// portfolios that failed (reported, excluded from aggregates).
#[derive(Debug)]
pub struct ScoringOutcome {
    pub records: Vec<ScoreRecord>,
    pub failures: Vec<(String, String)>,
}

/// Scores every portfolio in the universe, distributing across threads.
/// Group fits come from the provider and are cached, so scoring several
/// sets shares identical distributions.
pub fn score_universe(
    universe: &PortfolioUniverse,
    set: &ScenarioSet,
    provider: &FitProvider<'_>,
    opts: &ScoringOptions,
) -> Result<ScoringOutcome> {
    let aligned = set.align(universe.factors.as_slice())?;
    // Fit each distinct group once, in parallel, before scoring.
    let mut groups: Vec<Vec<FactorId>> =
        universe.portfolios.iter().map(|p| p.involved_factors()).collect();
    groups.sort();
    groups.dedup();
    groups
        .par_iter()
        .map(|g| provider.params_for(g).map(|_| ()))
        .collect::<Result<Vec<()>>>()?;

    let results: Vec<(String, Result<ScoreRecord>)> = universe
        .portfolios
        .par_iter()
        .map(|p| {
            let r = provider
                .params_for(&p.involved_factors())
                .and_then(|params| score_portfolio(p, &aligned, &params, opts));
            (p.name.clone(), r)
        })
        .collect();

    let mut records = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (name, r) in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push((name, e.to_string())),
        }
    }
    Ok(ScoringOutcome { records, failures })
}

/// One scenario row of the aggregate table; undriven scenarios report
/// zeros rather than blanks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioAggregate {
    pub scenario_id: String,
    pub quantity: usize,
    pub phi_mean: f64,
    pub phi_std: f64,
    pub psi_mean: f64,
    pub psi_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates records per driving scenario (set order), appending a
/// `Total` row over all records.
pub fn aggregate_by_scenario(records: &[ScoreRecord], set: &ScenarioSet) -> Vec<ScenarioAggregate> {
    let mut out = Vec::with_capacity(set.len() + 1);
    for (id, _) in set.scenarios() {
        let phis: Vec<f64> = records.iter().filter(|r| &r.driver_id == id).map(|r| r.phi).collect();
        let psis: Vec<f64> = records.iter().filter(|r| &r.driver_id == id).map(|r| r.psi).collect();
        let (phi_mean, phi_std) = mean_std(&phis);
        let (psi_mean, psi_std) = mean_std(&psis);
        out.push(ScenarioAggregate {
            scenario_id: id.clone(),
            quantity: phis.len(),
            phi_mean,
            phi_std,
            psi_mean,
            psi_std,
        });
    }
    let phis: Vec<f64> = records.iter().map(|r| r.phi).collect();
    let psis: Vec<f64> = records.iter().map(|r| r.psi).collect();
    let (phi_mean, phi_std) = mean_std(&phis);
    let (psi_mean, psi_std) = mean_std(&psis);
    out.push(ScenarioAggregate {
        scenario_id: "Total".to_string(),
        quantity: records.len(),
        phi_mean,
        phi_std,
        psi_mean,
        psi_std,
    });
    out
}

/// One row of the score-curve comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub portfolio: String,
    pub score_s: f64,
    pub score_t: f64,
    pub same_driver: bool,
}

/// Portfolio-level score curves, sorted ascending by the 𝒮 score
/// (separately for φ and ψ).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PortfolioCurves {
    pub phi: Vec<CurvePoint>,
    pub psi: Vec<CurvePoint>,
}

pub fn portfolio_curves(records_s: &[ScoreRecord], records_t: &[ScoreRecord]) -> Result<PortfolioCurves> {
    if records_s.len() != records_t.len() {
        return Err(Error::validation(format!(
            "universe mismatch: {} records vs {}",
            records_s.len(),
            records_t.len()
        )));
    }
    let mut by_name: std::collections::BTreeMap<&str, &ScoreRecord> =
        records_t.iter().map(|r| (r.portfolio.as_str(), r)).collect();
    let mut paired = Vec::with_capacity(records_s.len());
    for rs in records_s {
        let rt = by_name.remove(rs.portfolio.as_str()).ok_or_else(|| {
            Error::validation(format!("universe mismatch: portfolio {} missing from second record set", rs.portfolio))
        })?;
        paired.push((rs, rt));
    }
    let build = |metric: fn(&ScoreRecord) -> f64| -> Vec<CurvePoint> {
        let mut rows: Vec<CurvePoint> = paired
            .iter()
            .map(|(rs, rt)| CurvePoint {
                portfolio: rs.portfolio.clone(),
                score_s: metric(rs),
                score_t: metric(rt),
                same_driver: rs.driver_id == rt.driver_id,
            })
            .collect();
        rows.sort_by(|a, b| {
            a.score_s
                .partial_cmp(&b.score_s)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.portfolio.cmp(&b.portfolio))
        });
        rows
    };
    Ok(PortfolioCurves {
        phi: build(|r| r.phi),
        psi: build(|r| r.psi),
    })
}

/// Classification of a driver change between two sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TradeOffClass {
    /// Same driver in both sets.
    Unchanged,
    /// New driver loses more and is more plausible.
    HigherLossHigherPlausibility,
    /// New driver loses more but is less plausible (the trade-off case).
    HigherLossLowerPlausibility,
    /// New driver does not increase the loss.
    LowerLossOrEqual,
    Indeterminate,
}

/// Loss/plausibility detail for one portfolio under two sets, plot-ready
/// for iso-density level lines through the four scenario points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlausibilityComparison {
    pub portfolio: String,
    pub group: Vec<FactorId>,
    pub driver_id_s: String,
    pub driver_id_t: String,
    pub driver_s: Vec<f64>,
    pub driver_t: Vec<f64>,
    pub optimal_s: Vec<f64>,
    pub optimal_t: Vec<f64>,
    pub loss_s: f64,
    pub loss_t: f64,
    /// loss_t / loss_s; above 1 when the new driver loses more.
    pub loss_ratio: f64,
    /// f(driver_t) / f(driver_s).
    pub driver_density_ratio: f64,
    pub log_density_driver_s: f64,
    pub log_density_driver_t: f64,
    pub log_density_optimal_s: f64,
    pub log_density_optimal_t: f64,
    pub phi_s: f64,
    pub phi_t: f64,
    pub psi_s: f64,
    pub psi_t: f64,
    pub classification: TradeOffClass,
}

pub fn plausibility_comparison(rec_s: &ScoreRecord, rec_t: &ScoreRecord) -> Result<PlausibilityComparison> {
    if rec_s.portfolio != rec_t.portfolio {
        return Err(Error::validation(format!(
            "comparison across different portfolios: {} vs {}",
            rec_s.portfolio, rec_t.portfolio
        )));
    }
    if rec_s.group != rec_t.group {
        return Err(Error::validation("comparison across different factor groups".to_string()));
    }
    let density_ratio = (rec_t.log_density_driver - rec_s.log_density_driver).exp();
    let tol = 1e-9 * rec_s.loss.abs().max(1.0);
    let more_loss = rec_t.loss < rec_s.loss - tol;
    let classification = if rec_s.driver_id == rec_t.driver_id {
        TradeOffClass::Unchanged
    } else if more_loss && density_ratio > 1.0 + 1e-9 {
        TradeOffClass::HigherLossHigherPlausibility
    } else if more_loss && density_ratio < 1.0 - 1e-9 {
        TradeOffClass::HigherLossLowerPlausibility
    } else if !more_loss {
        TradeOffClass::LowerLossOrEqual
    } else {
        TradeOffClass::Indeterminate
    };
    Ok(PlausibilityComparison {
        portfolio: rec_s.portfolio.clone(),
        group: rec_s.group.clone(),
        driver_id_s: rec_s.driver_id.clone(),
        driver_id_t: rec_t.driver_id.clone(),
        driver_s: rec_s.driver_scenario.iter().copied().collect(),
        driver_t: rec_t.driver_scenario.iter().copied().collect(),
        optimal_s: rec_s.optimal.scenario.iter().copied().collect(),
        optimal_t: rec_t.optimal.scenario.iter().copied().collect(),
        loss_s: rec_s.loss,
        loss_t: rec_t.loss,
        loss_ratio: rec_t.loss / rec_s.loss,
        driver_density_ratio: density_ratio,
        log_density_driver_s: rec_s.log_density_driver,
        log_density_driver_t: rec_t.log_density_driver,
        log_density_optimal_s: rec_s.optimal.log_density,
        log_density_optimal_t: rec_t.optimal.log_density,
        phi_s: rec_s.phi,
        phi_t: rec_t.phi,
        psi_s: rec_s.psi,
        psi_t: rec_t.psi,
        classification,
    })
}
