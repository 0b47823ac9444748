//! Most plausible scenario at a given loss level.
//!
//! Four routes solve (or approximate, or cross-check)
//! `max f(s)  s.t.  ᵗP s ≤ q`:
//!
//! * [`elliptical_optimal`] — the closed form `q ΣP / ᵗPΣP` valid for
//!   standardized elliptical distributions;
//! * [`approximate_optimal`] — the elliptical solution of the normalized
//!   problem mapped componentwise through `T_ν⁻¹ ∘ T_ν̄`; cheap, but the
//!   constraint may be violated when marginal and copula dof differ;
//! * [`exact_optimal`] — projected-gradient ascent on the active
//!   constraint with backtracking line search and a Newton polish,
//!   multi-started;
//! * [`brute_force_optimal`] — feasible grid search, the test oracle.

use nalgebra::{DMatrix, DVector};

use crate::distributions::{special, MetaTParams};
use crate::error::{Error, Result};

/// Tolerances and iteration limits for the exact solver.
#[derive(Debug, Clone)]
pub struct SolverSettings {
    /// Projected-gradient norm declaring convergence.
    pub tol_grad: f64,
    /// Permitted residual |ᵗPs − q| on the active constraint.
    pub tol_con: f64,
    /// Iteration cap per start.
    pub max_iters: usize,
    /// Armijo sufficient-decrease factor.
    pub armijo: f64,
    /// Line-search shrink factor.
    pub shrink: f64,
    /// Maximum line-search halvings.
    pub max_backtracks: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol_grad: 1e-8,
            tol_con: 1e-10,
            max_iters: 500,
            armijo: 1e-4,
            shrink: 0.5,
            max_backtracks: 60,
        }
    }
}

/// Linear loss cap `ᵗP s ≤ q` on the fitting group's factors.
#[derive(Debug, Clone)]
pub struct LossConstraint {
    pub exposure: DVector<f64>,
    pub q: f64,
}

impl LossConstraint {
    pub fn new(exposure: DVector<f64>, q: f64) -> Result<Self> {
        if exposure.iter().all(|v| *v == 0.0) {
            return Err(Error::validation("loss constraint exposure is zero".to_string()));
        }
        if exposure.iter().any(|v| !v.is_finite()) || !q.is_finite() {
            return Err(Error::validation("loss constraint has non-finite entries".to_string()));
        }
        Ok(LossConstraint { exposure, q })
    }
}

/// Which route produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    EllipticalClosedForm,
    MetaTApproximate,
    ExactNumerical,
    BruteForce,
}

impl std::fmt::Display for SolveMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveMethod::EllipticalClosedForm => "elliptical_closed_form",
            SolveMethod::MetaTApproximate => "meta_t_approximate",
            SolveMethod::ExactNumerical => "exact_numerical",
            SolveMethod::BruteForce => "brute_force",
        };
        write!(f, "{s}")
    }
}

/// A candidate optimal scenario with solve diagnostics. `converged`
/// implies the constraint holds within tolerance; the approximate route
/// reports its (possibly violated) constraint value honestly.
#[derive(Debug, Clone)]
pub struct OptimalScenarioResult {
    pub scenario: DVector<f64>,
    pub log_density: f64,
    pub constraint_value: f64,
    pub method: SolveMethod,
    pub converged: bool,
    pub iterations: usize,
}

/// Closed form `S* = q ΣP / ᵗPΣP` for a standardized elliptical
/// distribution with correlation `corr`.
pub fn elliptical_optimal(exposure: &DVector<f64>, q: f64, corr: &DMatrix<f64>) -> Result<DVector<f64>> {
    if corr.nrows() != exposure.len() || corr.ncols() != exposure.len() {
        return Err(Error::validation(format!(
            "correlation is {}x{} but exposure has {} entries",
            corr.nrows(),
            corr.ncols(),
            exposure.len()
        )));
    }
    if exposure.iter().all(|v| *v == 0.0) {
        return Err(Error::validation("exposure is zero".to_string()));
    }
    let sp = corr * exposure;
    let denom = exposure.dot(&sp);
    if !(denom > 0.0) {
        return Err(Error::solver(format!(
            "quadratic form ᵗPΣP = {denom} is not positive; correlation matrix corrupt"
        )));
    }
    Ok(sp * (q / denom))
}

/// Normalized elliptical direction of the constrained problem:
/// `q̃ Σ P̃ / ᵗP̃ΣP̃` with `P̃ = σ∘P` and `q̃ = q − ᵗPμ`.
fn normalized_elliptical(params: &MetaTParams, c: &LossConstraint) -> Result<DVector<f64>> {
    let scales = params.scales();
    let p_tilde = c.exposure.component_mul(&scales);
    let q_tilde = c.q - c.exposure.dot(&params.mode());
    elliptical_optimal(&p_tilde, q_tilde, params.corr())
}

/// Approximate meta-t solution: the normalized elliptical optimum mapped
/// through `T_ν⁻¹ ∘ T_ν̄` per component, then de-normalized. The
/// constraint value is reported as computed; it may differ from `q`.
pub fn approximate_optimal(params: &MetaTParams, c: &LossConstraint) -> Result<OptimalScenarioResult> {
    check_dims(params, c)?;
    let base = normalized_elliptical(params, c)?;
    let d = params.dim();
    let mut scenario = DVector::zeros(d);
    for j in 0..d {
        let m = &params.marginals()[j];
        let u = special::t_cdf(base[j], params.nu_bar())?;
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::solver(format!(
                "quantile composition overflow at component {j} (factor {}): T_nubar({}) rounded to {u}",
                params.factor_labels()[j],
                base[j]
            )));
        }
        scenario[j] = m.mu + m.sigma * special::t_quantile(u, m.nu)?;
    }
    let constraint_value = c.exposure.dot(&scenario);
    let log_density = params.log_density(&scenario)?;
    let tol = 1e-10 * (1.0 + c.q.abs());
    Ok(OptimalScenarioResult {
        scenario,
        log_density,
        constraint_value,
        method: SolveMethod::MetaTApproximate,
        converged: constraint_value <= c.q + tol,
        iterations: 0,
    })
}

fn check_dims(params: &MetaTParams, c: &LossConstraint) -> Result<()> {
    if c.exposure.len() != params.dim() {
        return Err(Error::validation(format!(
            "exposure has {} entries but parameters cover {} factors",
            c.exposure.len(),
            params.dim()
        )));
    }
    if c.exposure.iter().all(|v| *v == 0.0) {
        return Err(Error::validation("exposure is zero".to_string()));
    }
    Ok(())
}

/// Orthogonal projection onto the hyperplane ᵗPs = q.
fn project_onto_constraint(s: &DVector<f64>, c: &LossConstraint) -> DVector<f64> {
    let pp = c.exposure.dot(&c.exposure);
    s + &c.exposure * ((c.q - c.exposure.dot(s)) / pp)
}

/// Orthonormal basis of the tangent space { v : ᵗPv = 0 }.
fn tangent_basis(exposure: &DVector<f64>) -> Vec<DVector<f64>> {
    let d = exposure.len();
    let unit = exposure / exposure.norm();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(d - 1);
    for k in 0..d {
        let mut v = DVector::zeros(d);
        v[k] = 1.0;
        v -= &unit * unit.dot(&v);
        for b in &basis {
            let dot = b.dot(&v);
            v -= b * dot;
        }
        let n = v.norm();
        if n > 1e-10 {
            basis.push(v / n);
        }
        if basis.len() == d - 1 {
            break;
        }
    }
    basis
}

struct AscentOutcome {
    scenario: DVector<f64>,
    log_density: f64,
    grad_norm: f64,
    iterations: usize,
}

/// Projected-gradient ascent with Barzilai-Borwein steps and Armijo
/// backtracking, followed by a Newton polish on the constraint manifold
/// (the line search cannot resolve log-density differences below f64
/// noise, the polish drives the projected gradient the rest of the way).
fn ascend_on_constraint(
    params: &MetaTParams,
    c: &LossConstraint,
    start: &DVector<f64>,
    settings: &SolverSettings,
) -> Result<AscentOutcome> {
    let mut s = project_onto_constraint(start, c);
    let mut eval = params.evaluate(&s, true)?;
    if !eval.log_density.is_finite() {
        return Ok(AscentOutcome {
            scenario: s,
            log_density: eval.log_density,
            grad_norm: f64::INFINITY,
            iterations: 0,
        });
    }
    let pp = c.exposure.dot(&c.exposure);
    let project_grad = |g: &DVector<f64>| -> DVector<f64> { g - &c.exposure * (c.exposure.dot(g) / pp) };

    let mut g_proj = project_grad(eval.gradient.as_ref().unwrap());
    let mut alpha = 1.0 / (1.0 + g_proj.norm());
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut iterations = 0usize;

    while iterations < settings.max_iters {
        if g_proj.norm() < settings.tol_grad {
            break;
        }
        iterations += 1;
        // Barzilai-Borwein step length from the previous move.
        if let Some((ref s_old, ref g_old)) = prev {
            let ds = &s - s_old;
            let dg = &g_proj - g_old;
            let denom = ds.dot(&dg);
            if denom < 0.0 {
                alpha = (ds.dot(&ds) / -denom).clamp(1e-14, 1e14);
            }
        }
        let mut step = alpha;
        let mut accepted = false;
        for _ in 0..=settings.max_backtracks {
            let cand = project_onto_constraint(&(&s + &g_proj * step), c);
            let f_cand = params.log_density(&cand)?;
            if f_cand.is_finite()
                && f_cand >= eval.log_density + settings.armijo * step * g_proj.norm_squared()
            {
                prev = Some((s.clone(), g_proj.clone()));
                s = cand;
                eval = params.evaluate(&s, true)?;
                g_proj = project_grad(eval.gradient.as_ref().unwrap());
                accepted = true;
                break;
            }
            step *= settings.shrink;
        }
        if !accepted {
            break;
        }
    }

    // Newton polish in tangent coordinates.
    let basis = tangent_basis(&c.exposure);
    let k = basis.len();
    if k > 0 {
        for _ in 0..12 {
            if g_proj.norm() < settings.tol_grad * 1e-3 {
                break;
            }
            iterations += 1;
            let g_red = DVector::from_iterator(k, basis.iter().map(|b| b.dot(&g_proj)));
            // Finite-difference Hessian of the gradient along the basis.
            let delta = 1e-6 * (1.0 + s.norm());
            let mut h_red = DMatrix::zeros(k, k);
            let mut ok = true;
            for col in 0..k {
                let sp = &s + &basis[col] * delta;
                let sm = &s - &basis[col] * delta;
                let gp = match params.evaluate(&sp, true) {
                    Ok(e) => e.gradient.unwrap(),
                    Err(_) => {
                        ok = false;
                        break;
                    }
                };
                let gm = match params.evaluate(&sm, true) {
                    Ok(e) => e.gradient.unwrap(),
                    Err(_) => {
                        ok = false;
                        break;
                    }
                };
                for row in 0..k {
                    h_red[(row, col)] = basis[row].dot(&((&gp - &gm) / (2.0 * delta)));
                }
            }
            if !ok {
                break;
            }
            let h_sym = 0.5 * (&h_red + h_red.transpose());
            let dir = match h_sym.lu().solve(&(-&g_red)) {
                Some(dy) => dy,
                None => break,
            };
            // Ensure it is an ascent-compatible stationarity step.
            let mut lambda = 1.0;
            let mut improved = false;
            for _ in 0..10 {
                let mut cand = s.clone();
                for (b, &dyk) in basis.iter().zip(dir.iter()) {
                    cand += b * (dyk * lambda);
                }
                let cand = project_onto_constraint(&cand, c);
                if let Ok(e) = params.evaluate(&cand, true) {
                    let g_new = project_grad(e.gradient.as_ref().unwrap());
                    if e.log_density.is_finite() && g_new.norm() < g_proj.norm() {
                        s = cand;
                        eval = e;
                        g_proj = g_new;
                        improved = true;
                        break;
                    }
                }
                lambda *= 0.5;
            }
            if !improved {
                break;
            }
        }
    }

    Ok(AscentOutcome {
        scenario: s,
        log_density: eval.log_density,
        grad_norm: g_proj.norm(),
        iterations,
    })
}

/// Exact numerical solution of `max f(s) s.t. ᵗP s ≤ q`.
///
/// If the unconstrained mode μ is feasible it is returned directly;
/// otherwise the solver ascends on the active constraint from three
/// documented starts (approximate solution, scaled elliptical driver
/// direction, projected mode) plus any `extra_starts` (the scoring layer
/// passes the driving scenario so the optimum can never fall below it).
pub fn exact_optimal_with_starts(
    params: &MetaTParams,
    c: &LossConstraint,
    settings: &SolverSettings,
    extra_starts: &[DVector<f64>],
) -> Result<OptimalScenarioResult> {
    check_dims(params, c)?;
    let mode = params.mode();
    let mode_value = c.exposure.dot(&mode);
    if mode_value <= c.q {
        let log_density = params.log_density(&mode)?;
        return Ok(OptimalScenarioResult {
            scenario: mode,
            log_density,
            constraint_value: mode_value,
            method: SolveMethod::ExactNumerical,
            converged: true,
            iterations: 0,
        });
    }

    let mut starts: Vec<DVector<f64>> = Vec::new();
    if let Ok(approx) = approximate_optimal(params, c) {
        starts.push(approx.scenario);
    }
    if let Ok(base) = normalized_elliptical(params, c) {
        starts.push(&mode + params.scales().component_mul(&base));
    }
    starts.push(project_onto_constraint(&mode, c));
    starts.extend(extra_starts.iter().cloned());

    let mut best: Option<AscentOutcome> = None;
    for start in &starts {
        let outcome = ascend_on_constraint(params, c, start, settings)?;
        if !outcome.log_density.is_finite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => outcome.log_density > b.log_density,
        };
        if better {
            best = Some(outcome);
        }
    }
    let best = best.ok_or_else(|| {
        Error::solver("non-finite meta-t density at every solver start".to_string())
    })?;
    let constraint_value = c.exposure.dot(&best.scenario);
    let converged =
        best.grad_norm < settings.tol_grad && (constraint_value - c.q).abs() < settings.tol_con;
    Ok(OptimalScenarioResult {
        scenario: best.scenario,
        log_density: best.log_density,
        constraint_value,
        method: SolveMethod::ExactNumerical,
        converged,
        iterations: best.iterations,
    })
}

/// [`exact_optimal_with_starts`] with only the documented starts.
pub fn exact_optimal(
    params: &MetaTParams,
    c: &LossConstraint,
    settings: &SolverSettings,
) -> Result<OptimalScenarioResult> {
    exact_optimal_with_starts(params, c, settings, &[])
}

/// Exhaustive feasible grid search over μ ± k·σ per axis with one local
/// refinement pass. Dimension is capped at 3.
pub fn brute_force_optimal(
    params: &MetaTParams,
    c: &LossConstraint,
    box_halfwidth_sigmas: f64,
    grid_points: usize,
) -> Result<OptimalScenarioResult> {
    check_dims(params, c)?;
    let d = params.dim();
    if d > 3 {
        return Err(Error::validation(format!(
            "brute force limited to dimension 3, got {d}"
        )));
    }
    if grid_points < 3 {
        return Err(Error::validation("grid needs at least 3 points per axis".to_string()));
    }
    if !(box_halfwidth_sigmas > 0.0) {
        return Err(Error::validation("box halfwidth must be positive".to_string()));
    }
    let mode = params.mode();
    let scales = params.scales();
    let halfwidths: DVector<f64> = &scales * box_halfwidth_sigmas;

    let mut evaluations = 0usize;
    let mut best: Option<(DVector<f64>, f64)> = None;
    search_box(params, c, &mode, &halfwidths, grid_points, &mut best, &mut evaluations)?;
    let (center, _) = best
        .clone()
        .ok_or_else(|| Error::solver("no feasible grid point in the search box; enlarge box".to_string()))?;
    // Refinement: one grid halving around the best cell.
    let steps: DVector<f64> =
        DVector::from_iterator(d, halfwidths.iter().map(|h| 2.0 * h / (grid_points as f64 - 1.0)));
    search_box(params, c, &center, &steps, grid_points, &mut best, &mut evaluations)?;
    let (scenario, log_density) = best.unwrap();
    let constraint_value = c.exposure.dot(&scenario);
    Ok(OptimalScenarioResult {
        scenario,
        log_density,
        constraint_value,
        method: SolveMethod::BruteForce,
        converged: true,
        iterations: evaluations,
    })
}

fn search_box(
    params: &MetaTParams,
    c: &LossConstraint,
    center: &DVector<f64>,
    halfwidths: &DVector<f64>,
    grid_points: usize,
    best: &mut Option<(DVector<f64>, f64)>,
    evaluations: &mut usize,
) -> Result<()> {
    let d = params.dim();
    let mut idx = vec![0usize; d];
    let mut s = DVector::zeros(d);
    loop {
        for j in 0..d {
            let frac = idx[j] as f64 / (grid_points as f64 - 1.0);
            s[j] = center[j] - halfwidths[j] + 2.0 * halfwidths[j] * frac;
        }
        if c.exposure.dot(&s) <= c.q {
            *evaluations += 1;
            let ld = params.log_density(&s)?;
            if ld.is_finite() && best.as_ref().map_or(true, |(_, b)| ld > *b) {
                *best = Some((s.clone(), ld));
            }
        }
        // Odometer increment.
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < grid_points {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == d {
                return Ok(());
            }
        }
    }
}
