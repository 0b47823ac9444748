//! Maximum-likelihood fitting of the meta-t distribution.
//!
//! Marginals: profile likelihood over the dof on a log-spaced grid
//! refined by golden section, with (μ, σ) inner-optimized by safeguarded
//! Newton steps (EM fallback) from a median / scaled-MAD start.
//!
//! Copula: correlation from Kendall's tau inversion Σᵢⱼ = sin(π τᵢⱼ / 2)
//! (projected to the nearest positive-definite correlation when needed),
//! copula dof by 1-D profile likelihood on the CDF-transformed
//! pseudo-observations.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::distributions::corr::{kendall_correlation, nearest_correlation};
use crate::distributions::{special, MetaTParams, StudentMarginal};
use crate::error::{Error, Result};
use crate::factor::FactorId;
use crate::marketdata::{IsoDate, ReturnMatrix};

/// Fitting configuration; defaults follow the documented conventions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    /// Minimum observations required per factor column.
    pub min_observations: usize,
    /// Marginal dof search range.
    pub nu_min: f64,
    pub nu_max: f64,
    /// Copula dof search range; estimates at the upper bound are flagged
    /// as a near-Gaussian copula.
    pub nu_bar_min: f64,
    pub nu_bar_max: f64,
    /// Eigenvalue clip floor for correlation repair.
    pub corr_clip_floor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            min_observations: 250,
            nu_min: 0.5,
            nu_max: 50.0,
            nu_bar_min: 1.0,
            nu_bar_max: 100.0,
            corr_clip_floor: 1e-8,
        }
    }
}

/// Marginal fit with convergence diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedMarginal {
    pub params: StudentMarginal,
    pub log_likelihood: f64,
    /// Likelihood of the median / scaled-MAD starting point, maximized
    /// over the dof grid.
    pub start_log_likelihood: f64,
    pub inner_iterations: usize,
    pub profile_evaluations: usize,
    pub converged: bool,
    pub nu_at_bound: bool,
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Log-likelihood of a t(μ, σ, ν) sample.
fn t_sample_loglik(sample: &[f64], mu: f64, sigma: f64, nu: f64) -> f64 {
    let constant = special::ln_gamma(0.5 * (nu + 1.0))
        - special::ln_gamma(0.5 * nu)
        - 0.5 * (nu * std::f64::consts::PI).ln()
        - sigma.ln();
    let mut acc = 0.0;
    for &x in sample {
        let z = (x - mu) / sigma;
        acc += (z * z / nu).ln_1p();
    }
    sample.len() as f64 * constant - 0.5 * (nu + 1.0) * acc
}

/// Inner (μ, σ) maximization at fixed ν: Newton on (μ, ln σ) with step
/// halving, falling back to an EM step whenever the Hessian is not
/// usable. Returns (μ, σ, loglik, iterations, converged).
fn fit_location_scale(
    sample: &[f64],
    nu: f64,
    mut mu: f64,
    mut sigma: f64,
) -> (f64, f64, f64, usize, bool) {
    let n = sample.len() as f64;
    let mut loglik = t_sample_loglik(sample, mu, sigma, nu);
    let mut converged = false;
    let mut iters = 0;
    for _ in 0..100 {
        iters += 1;
        // Score and Hessian in (μ, t = ln σ).
        let (mut s_g, mut s_gz, mut s_dg, mut s_dgz, mut s_dgz2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &x in sample {
            let z = (x - mu) / sigma;
            let den = nu + z * z;
            let g = -(nu + 1.0) * z / den;
            let dg = -(nu + 1.0) * (nu - z * z) / (den * den);
            s_g += g;
            s_gz += g * z;
            s_dg += dg;
            s_dgz += dg * z;
            s_dgz2 += dg * z * z;
        }
        let grad_mu = -s_g / sigma;
        let grad_t = -s_gz - n;
        // Dimensionless convergence measure.
        if (s_g.abs() / n).max(grad_t.abs() / n) < 1e-12 {
            converged = true;
            break;
        }
        let h_mm = s_dg / (sigma * sigma);
        let h_mt = (s_dgz + s_g) / sigma;
        let h_tt = s_dgz2 + s_gz;
        let det = h_mm * h_tt - h_mt * h_mt;

        let (mut d_mu, mut d_t);
        if h_mm < 0.0 && det > 0.0 {
            d_mu = -(h_tt * grad_mu - h_mt * grad_t) / det;
            d_t = -(-h_mt * grad_mu + h_mm * grad_t) / det;
        } else {
            // EM step: reweighted location/scale update.
            let mut sw = 0.0;
            let mut swx = 0.0;
            for &x in sample {
                let z = (x - mu) / sigma;
                let w = (nu + 1.0) / (nu + z * z);
                sw += w;
                swx += w * x;
            }
            let mu_new = swx / sw;
            let mut s2 = 0.0;
            for &x in sample {
                let z = (x - mu) / sigma;
                let w = (nu + 1.0) / (nu + z * z);
                s2 += w * (x - mu_new) * (x - mu_new);
            }
            let sigma_new = (s2 / n).sqrt().max(1e-300);
            d_mu = mu_new - mu;
            d_t = (sigma_new / sigma).ln();
        }

        // Backtrack until the likelihood does not decrease.
        let mut improved = false;
        for _ in 0..40 {
            let mu_try = mu + d_mu;
            let sigma_try = sigma * d_t.exp();
            let ll_try = t_sample_loglik(sample, mu_try, sigma_try, nu);
            if ll_try >= loglik - 1e-12 {
                let step = d_mu.abs() / sigma + d_t.abs();
                mu = mu_try;
                sigma = sigma_try;
                loglik = ll_try;
                improved = true;
                if step < 1e-13 {
                    converged = true;
                }
                break;
            }
            d_mu *= 0.5;
            d_t *= 0.5;
        }
        if !improved || converged {
            converged = converged || !improved;
            break;
        }
    }
    (mu, sigma, loglik, iters, converged)
}

/// Fits a univariate Student-t to a sample by profile MLE over the dof.
pub fn fit_marginal(sample: &[f64], opts: &FitOptions) -> Result<FittedMarginal> {
    if sample.len() < opts.min_observations {
        return Err(Error::data(format!(
            "marginal fit needs at least {} observations, got {}",
            opts.min_observations,
            sample.len()
        )));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("marginal sample contains non-finite values".to_string()));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    if max - min == 0.0 {
        return Err(Error::data("degenerate sample: zero variance".to_string()));
    }
    let median = sorted[sorted.len() / 2];
    let mut devs: Vec<f64> = sample.iter().map(|x| (x - median).abs()).collect();
    devs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mad = devs[devs.len() / 2];
    // 1.4826 · MAD matches the normal scale; fall back to the standard
    // deviation when more than half the sample ties at the median.
    let sigma0 = if mad > 0.0 {
        1.4826 * mad
    } else {
        let n = sample.len() as f64;
        let mean = sample.iter().sum::<f64>() / n;
        (sample.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
    };
    let mu0 = median;

    let grid_size = 25;
    let ln_lo = opts.nu_min.ln();
    let ln_hi = opts.nu_max.ln();
    let mut evals = 0usize;
    let mut total_inner = 0usize;
    let mut any_inner_converged = false;

    // Warm-started profile evaluation.
    let mut warm = (mu0, sigma0);
    let mut profile = |nu: f64, warm: &mut (f64, f64)| -> (f64, f64, f64) {
        let (mu, sigma, ll, iters, conv) = fit_location_scale(sample, nu, warm.0, warm.1);
        evals += 1;
        total_inner += iters;
        any_inner_converged |= conv;
        *warm = (mu, sigma);
        (mu, sigma, ll)
    };

    let mut best = (f64::NEG_INFINITY, 0usize, mu0, sigma0);
    let mut grid_ll = vec![0.0; grid_size];
    for k in 0..grid_size {
        let nu = (ln_lo + (ln_hi - ln_lo) * k as f64 / (grid_size - 1) as f64).exp();
        let (mu, sigma, ll) = profile(nu, &mut warm);
        grid_ll[k] = ll;
        if ll > best.0 {
            best = (ll, k, mu, sigma);
        }
    }
    let k = best.1;
    let mut lo = if k == 0 { ln_lo } else { ln_lo + (ln_hi - ln_lo) * (k - 1) as f64 / (grid_size - 1) as f64 };
    let mut hi = if k == grid_size - 1 {
        ln_hi
    } else {
        ln_lo + (ln_hi - ln_lo) * (k + 1) as f64 / (grid_size - 1) as f64
    };

    // Golden-section refinement on ln ν.
    let mut warm_gs = (best.2, best.3);
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let mut f1 = profile(x1.exp(), &mut warm_gs).2;
    let mut f2 = profile(x2.exp(), &mut warm_gs).2;
    for _ in 0..60 {
        if hi - lo < 1e-7 {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = profile(x2.exp(), &mut warm_gs).2;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = profile(x1.exp(), &mut warm_gs).2;
        }
    }
    let nu_hat = (0.5 * (lo + hi)).exp();
    let (mu_hat, sigma_hat, ll_hat, _, final_conv) =
        fit_location_scale(sample, nu_hat, warm_gs.0, warm_gs.1);

    // Use the refined optimum unless the grid already did better.
    let (mu_final, sigma_final, nu_final, ll_final) = if ll_hat >= best.0 {
        (mu_hat, sigma_hat, nu_hat, ll_hat)
    } else {
        let nu_grid = (ln_lo + (ln_hi - ln_lo) * best.1 as f64 / (grid_size - 1) as f64).exp();
        (best.2, best.3, nu_grid, best.0)
    };

    // Likelihood of the moment-based start, maximized over the dof grid.
    let start_ll = (0..grid_size)
        .map(|k| {
            let nu = (ln_lo + (ln_hi - ln_lo) * k as f64 / (grid_size - 1) as f64).exp();
            t_sample_loglik(sample, mu0, sigma0, nu)
        })
        .fold(f64::NEG_INFINITY, f64::max);

    if ll_final < start_ll {
        return Err(Error::solver(format!(
            "marginal fit did not improve on the starting point ({ll_final} < {start_ll})"
        )));
    }
    let nu_at_bound = nu_final > 0.99 * opts.nu_max || nu_final < 1.01 * opts.nu_min;
    Ok(FittedMarginal {
        params: StudentMarginal::new(mu_final, sigma_final, nu_final)?,
        log_likelihood: ll_final,
        start_log_likelihood: start_ll,
        inner_iterations: total_inner,
        profile_evaluations: evals,
        converged: final_conv || any_inner_converged,
        nu_at_bound,
    })
}

/// Copula fit with diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CopulaFit {
    /// Row-major is used in the JSON document; in memory this is the
    /// correlation matrix itself.
    #[serde(skip)]
    pub corr: DMatrix<f64>,
    pub nu_bar: f64,
    /// Single-factor group: no copula to estimate.
    pub trivial: bool,
    /// Kendall estimate required positive-definite projection.
    pub projected: bool,
    /// ν̄ landed at the top of the search range (near-Gaussian copula).
    pub nu_bar_at_upper_bound: bool,
    pub log_likelihood: f64,
    pub profile_evaluations: usize,
}

/// t-copula log-likelihood of pseudo-observations at (Σ via `chol`, ν̄).
fn copula_loglik(u: &DMatrix<f64>, chol: &Cholesky<f64, nalgebra::Dyn>, log_det: f64, nu_bar: f64) -> Result<f64> {
    let n = u.nrows();
    let d = u.ncols();
    let df = d as f64;
    let constant = special::ln_gamma(0.5 * (nu_bar + df))
        - special::ln_gamma(0.5 * nu_bar)
        - 0.5 * df * (nu_bar * std::f64::consts::PI).ln()
        - 0.5 * log_det;
    let mut x = nalgebra::DVector::zeros(d);
    let mut total = 0.0;
    for i in 0..n {
        let mut marg = 0.0;
        for j in 0..d {
            x[j] = special::t_quantile(u[(i, j)], nu_bar)?;
            marg += special::t_log_pdf(x[j], nu_bar);
        }
        let y = chol.solve(&x);
        let m = x.dot(&y);
        total += constant - 0.5 * (nu_bar + df) * (m / nu_bar).ln_1p() - marg;
    }
    Ok(total)
}

/// Fits the t-copula of a multivariate sample whose marginals are
/// already fitted: Σ by Kendall inversion, ν̄ by 1-D profile likelihood.
pub fn fit_copula(
    data: &DMatrix<f64>,
    marginals: &[StudentMarginal],
    opts: &FitOptions,
) -> Result<CopulaFit> {
    let n = data.nrows();
    let d = data.ncols();
    if marginals.len() != d {
        return Err(Error::validation(format!(
            "{d} data columns but {} marginals",
            marginals.len()
        )));
    }
    if d == 1 {
        return Ok(CopulaFit {
            corr: DMatrix::identity(1, 1),
            nu_bar: marginals[0].nu,
            trivial: true,
            projected: false,
            nu_bar_at_upper_bound: false,
            log_likelihood: 0.0,
            profile_evaluations: 0,
        });
    }
    if n < d + 2 {
        return Err(Error::data(format!(
            "copula fit needs at least {} observations for {d} factors, got {n}",
            d + 2
        )));
    }

    let raw = kendall_correlation(data)?;
    let repair = nearest_correlation(&raw, opts.corr_clip_floor)?;
    let corr = repair.corr;
    let chol = Cholesky::new(corr.clone())
        .ok_or_else(|| Error::solver("repaired correlation is not positive definite".to_string()))?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();

    // Parametric pseudo-observations through the fitted marginal CDFs.
    let mut u = DMatrix::zeros(n, d);
    for j in 0..d {
        let m = &marginals[j];
        for i in 0..n {
            u[(i, j)] = m.cdf(data[(i, j)])?.clamp(1e-10, 1.0 - 1e-10);
        }
    }

    let mut evals = 0usize;
    let mut eval = |nu_bar: f64| -> Result<f64> {
        evals += 1;
        copula_loglik(&u, &chol, log_det, nu_bar)
    };

    // Coarse grid on ln ν̄, then golden section.
    let grid_size = 13;
    let ln_lo = opts.nu_bar_min.ln();
    let ln_hi = opts.nu_bar_max.ln();
    let mut best = (f64::NEG_INFINITY, 0usize);
    for k in 0..grid_size {
        let nu = (ln_lo + (ln_hi - ln_lo) * k as f64 / (grid_size - 1) as f64).exp();
        let ll = eval(nu)?;
        if ll > best.0 {
            best = (ll, k);
        }
    }
    let k = best.1;
    let mut lo = if k == 0 { ln_lo } else { ln_lo + (ln_hi - ln_lo) * (k - 1) as f64 / (grid_size - 1) as f64 };
    let mut hi = if k == grid_size - 1 {
        ln_hi
    } else {
        ln_lo + (ln_hi - ln_lo) * (k + 1) as f64 / (grid_size - 1) as f64
    };
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let mut f1 = eval(x1.exp())?;
    let mut f2 = eval(x2.exp())?;
    for _ in 0..40 {
        if hi - lo < 1e-4 {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = eval(x2.exp())?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = eval(x1.exp())?;
        }
    }
    let nu_bar = (0.5 * (lo + hi)).exp();
    let log_likelihood = eval(nu_bar)?;
    let at_bound = nu_bar > 0.99 * opts.nu_bar_max;

    Ok(CopulaFit {
        corr,
        nu_bar,
        trivial: false,
        projected: repair.projected,
        nu_bar_at_upper_bound: at_bound,
        log_likelihood,
        profile_evaluations: evals,
    })
}

/// Write-once cache of per-factor marginal fits.
#[derive(Default)]
pub struct MarginalCache {
    inner: Mutex<BTreeMap<FactorId, Arc<FittedMarginal>>>,
}

impl MarginalCache {
    pub fn get_or_fit(
        &self,
        returns: &ReturnMatrix,
        factor: &FactorId,
        opts: &FitOptions,
    ) -> Result<Arc<FittedMarginal>> {
        if let Some(hit) = self.inner.lock().unwrap().get(factor) {
            return Ok(hit.clone());
        }
        let sample = returns.column(factor)?;
        let fitted = Arc::new(
            fit_marginal(&sample, opts)
                .map_err(|e| e.with_stage(&format!("marginal fit for {factor}")))?,
        );
        let mut guard = self.inner.lock().unwrap();
        // First insert wins; fits are deterministic so racers agree.
        Ok(guard.entry(factor.clone()).or_insert(fitted).clone())
    }
}

/// A fitted factor group: parameters plus diagnostics for the document.
#[derive(Debug, Clone)]
pub struct GroupFit {
    pub params: MetaTParams,
    pub marginals: Vec<Arc<FittedMarginal>>,
    pub copula: CopulaFit,
}

/// Fits the meta-t on a factor subset, reusing cached marginal fits.
pub fn fit_group(
    returns: &ReturnMatrix,
    factor_subset: &[FactorId],
    opts: &FitOptions,
    cache: &MarginalCache,
) -> Result<GroupFit> {
    if factor_subset.is_empty() {
        return Err(Error::validation("factor subset must not be empty".to_string()));
    }
    let marginals: Vec<Arc<FittedMarginal>> = factor_subset
        .iter()
        .map(|f| cache.get_or_fit(returns, f, opts))
        .collect::<Result<_>>()?;
    let data = returns.submatrix(factor_subset)?;
    let marginal_params: Vec<StudentMarginal> =
        marginals.iter().map(|m| m.params.clone()).collect();
    let group_desc = factor_subset
        .iter()
        .map(|f| f.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    let copula = fit_copula(&data, &marginal_params, opts)
        .map_err(|e| e.with_stage(&format!("copula fit for group [{group_desc}]")))?;
    let params = MetaTParams::new(
        factor_subset.to_vec(),
        marginal_params,
        copula.corr.clone(),
        copula.nu_bar,
    )?;
    Ok(GroupFit {
        params,
        marginals,
        copula,
    })
}

/// Fit mode: one copula per factor group, or a single full-dimension fit
/// restricted per group at scoring time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMode {
    PerGroup,
    Full,
}

impl std::fmt::Display for FitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FitMode::PerGroup => write!(f, "per-group"),
            FitMode::Full => write!(f, "full"),
        }
    }
}

/// Serves fitted parameters per factor group, caching so that scoring
/// several scenario sets shares identical distributions.
pub struct FitProvider<'a> {
    mode: FitMode,
    returns: &'a ReturnMatrix,
    opts: FitOptions,
    marginal_cache: MarginalCache,
    fits: Mutex<BTreeMap<Vec<FactorId>, Arc<GroupFit>>>,
    restricted: Mutex<BTreeMap<Vec<FactorId>, Arc<MetaTParams>>>,
}

impl<'a> FitProvider<'a> {
    pub fn new(mode: FitMode, returns: &'a ReturnMatrix, opts: FitOptions) -> Result<Self> {
        returns.validate_min_observations(opts.min_observations)?;
        Ok(FitProvider {
            mode,
            returns,
            opts,
            marginal_cache: MarginalCache::default(),
            fits: Mutex::new(BTreeMap::new()),
            restricted: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn mode(&self) -> FitMode {
        self.mode
    }

    pub fn options(&self) -> &FitOptions {
        &self.opts
    }

    fn fit_cached(&self, group: &[FactorId]) -> Result<Arc<GroupFit>> {
        if let Some(hit) = self.fits.lock().unwrap().get(group) {
            return Ok(hit.clone());
        }
        let fit = Arc::new(fit_group(self.returns, group, &self.opts, &self.marginal_cache)?);
        let mut guard = self.fits.lock().unwrap();
        Ok(guard.entry(group.to_vec()).or_insert(fit).clone())
    }

    /// Parameters covering exactly `group`, in the given factor order.
    pub fn params_for(&self, group: &[FactorId]) -> Result<Arc<MetaTParams>> {
        if let Some(hit) = self.restricted.lock().unwrap().get(group) {
            return Ok(hit.clone());
        }
        let params = match self.mode {
            FitMode::PerGroup => Arc::new(self.fit_cached(group)?.params.clone()),
            FitMode::Full => {
                let full = self.fit_cached(&self.returns.factors().to_vec())?;
                Arc::new(full.params.restrict(group)?)
            }
        };
        let mut guard = self.restricted.lock().unwrap();
        Ok(guard.entry(group.to_vec()).or_insert(params).clone())
    }

    /// All groups fitted so far, in deterministic key order.
    pub fn fitted_groups(&self) -> Vec<(Vec<FactorId>, Arc<GroupFit>)> {
        self.fits
            .lock()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

/// Versioned JSON document holding fitted parameters and diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsDocument {
    pub format_version: u32,
    pub library_version: String,
    pub fit_mode: FitMode,
    /// Historical window of the returns the fit was computed on.
    pub window_start: Option<IsoDate>,
    pub window_end: Option<IsoDate>,
    pub observations: usize,
    pub groups: Vec<GroupDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupDocument {
    pub factors: Vec<FactorId>,
    pub marginals: Vec<MarginalDocument>,
    /// Correlation matrix, row-major.
    pub corr: Vec<f64>,
    pub nu_bar: f64,
    pub copula_trivial: bool,
    pub corr_projected: bool,
    pub nu_bar_at_upper_bound: bool,
    pub copula_log_likelihood: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginalDocument {
    pub factor: FactorId,
    pub mu: f64,
    pub sigma: f64,
    pub nu: f64,
    pub log_likelihood: f64,
    pub converged: bool,
    pub nu_at_bound: bool,
}

impl ParamsDocument {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn from_provider(provider: &FitProvider<'_>, returns: &ReturnMatrix) -> Self {
        let groups = provider
            .fitted_groups()
            .into_iter()
            .map(|(factors, fit)| GroupDocument {
                marginals: factors
                    .iter()
                    .zip(&fit.marginals)
                    .map(|(f, m)| MarginalDocument {
                        factor: f.clone(),
                        mu: m.params.mu,
                        sigma: m.params.sigma,
                        nu: m.params.nu,
                        log_likelihood: m.log_likelihood,
                        converged: m.converged,
                        nu_at_bound: m.nu_at_bound,
                    })
                    .collect(),
                corr: fit.params.corr().iter().copied().collect::<Vec<f64>>(),
                nu_bar: fit.params.nu_bar(),
                copula_trivial: fit.copula.trivial,
                corr_projected: fit.copula.projected,
                nu_bar_at_upper_bound: fit.copula.nu_bar_at_upper_bound,
                copula_log_likelihood: fit.copula.log_likelihood,
                factors,
            })
            .collect();
        let window = returns.window();
        ParamsDocument {
            format_version: Self::FORMAT_VERSION,
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            fit_mode: provider.mode(),
            window_start: window.map(|w| w.0),
            window_end: window.map(|w| w.1),
            observations: returns.n_obs(),
            groups,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::data(format!("parameter document serialization: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ParamsDocument = serde_json::from_str(text)
            .map_err(|e| Error::data(format!("parameter document parse: {e}")))?;
        if doc.format_version != Self::FORMAT_VERSION {
            return Err(Error::validation(format!(
                "unsupported parameter document version {}",
                doc.format_version
            )));
        }
        Ok(doc)
    }

    /// Reconstructs the fitted parameters per group.
    pub fn group_params(&self) -> Result<Vec<(Vec<FactorId>, MetaTParams)>> {
        self.groups
            .iter()
            .map(|g| {
                let d = g.factors.len();
                if g.corr.len() != d * d {
                    return Err(Error::data(format!(
                        "group corr has {} entries for dimension {d}",
                        g.corr.len()
                    )));
                }
                let corr = DMatrix::from_row_slice(d, d, &g.corr);
                let marginals = g
                    .marginals
                    .iter()
                    .map(|m| StudentMarginal::new(m.mu, m.sigma, m.nu))
                    .collect::<Result<Vec<_>>>()?;
                let params = MetaTParams::new(g.factors.clone(), marginals, corr, g.nu_bar)?;
                Ok((g.factors.clone(), params))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::sample_meta_t;
    use nalgebra::DVector;

    fn loose_opts() -> FitOptions {
        FitOptions {
            min_observations: 50,
            ..FitOptions::default()
        }
    }

    fn labels(d: usize) -> Vec<FactorId> {
        (0..d).map(|i| FactorId::new("T", format!("F{i}"))).collect()
    }

    #[test]
    fn constant_sample_is_degenerate() {
        let sample = vec![0.25; 300];
        let err = fit_marginal(&sample, &FitOptions::default()).unwrap_err();
        assert!(err.to_string().contains("degenerate sample"), "{err}");
    }

    #[test]
    fn too_few_observations_rejected() {
        let sample: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        assert!(fit_marginal(&sample, &FitOptions::default()).is_err());
        assert!(fit_marginal(&sample, &loose_opts()).is_ok());
    }

    #[test]
    fn t_fit_beats_gaussian_on_heavy_tails() {
        let p = MetaTParams::new(
            labels(1),
            vec![StudentMarginal::new(0.0, 1.0, 3.0).unwrap()],
            DMatrix::identity(1, 1),
            3.0,
        )
        .unwrap();
        let sample: Vec<f64> = sample_meta_t(&p, 3000, 21)
            .unwrap()
            .data()
            .column(0)
            .iter()
            .copied()
            .collect();
        let fitted = fit_marginal(&sample, &loose_opts()).unwrap();
        let n = sample.len() as f64;
        let mean = sample.iter().sum::<f64>() / n;
        let var = sample.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let gaussian_ll = -0.5 * n * ((2.0 * std::f64::consts::PI * var).ln() + 1.0);
        assert!(
            fitted.log_likelihood > gaussian_ll,
            "t loglik {} vs gaussian {gaussian_ll}",
            fitted.log_likelihood
        );
        assert!(fitted.log_likelihood >= fitted.start_log_likelihood);
    }

    #[test]
    fn copula_trivial_for_single_factor() {
        let data = DMatrix::from_column_slice(10, 1, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let marg = vec![StudentMarginal::new(0.0, 1.0, 5.0).unwrap()];
        let fit = fit_copula(&data, &marg, &FitOptions::default()).unwrap();
        assert!(fit.trivial);
        assert_eq!(fit.corr.nrows(), 1);
        assert_eq!(fit.nu_bar, 5.0);
    }

    #[test]
    fn copula_needs_enough_rows() {
        let data = DMatrix::zeros(3, 2);
        let marg = vec![StudentMarginal::new(0.0, 1.0, 5.0).unwrap(); 2];
        let err = fit_copula(&data, &marg, &FitOptions::default()).unwrap_err();
        assert!(err.to_string().contains("at least"), "{err}");
    }

    #[test]
    fn independent_columns_give_small_correlation() {
        let p = MetaTParams::elliptical(labels(2), DMatrix::identity(2, 2), 8.0).unwrap();
        let sample = sample_meta_t(&p, 10_000, 5).unwrap();
        let marginals: Vec<StudentMarginal> = (0..2)
            .map(|j| {
                let col: Vec<f64> = sample.data().column(j).iter().copied().collect();
                fit_marginal(&col, &loose_opts()).unwrap().params
            })
            .collect();
        let fit = fit_copula(&sample.data().clone(), &marginals, &loose_opts()).unwrap();
        assert!(fit.corr[(0, 1)].abs() < 0.05, "rho = {}", fit.corr[(0, 1)]);
    }

    #[test]
    fn fit_group_is_deterministic() {
        let corr = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]);
        let p = MetaTParams::new(
            labels(2),
            vec![
                StudentMarginal::new(0.0, 1.0, 5.0).unwrap(),
                StudentMarginal::new(0.1, 0.8, 7.0).unwrap(),
            ],
            corr,
            6.0,
        )
        .unwrap();
        let sample = sample_meta_t(&p, 600, 17).unwrap();
        let cache = MarginalCache::default();
        let f1 = fit_group(&sample, sample.factors(), &loose_opts(), &cache).unwrap();
        let f2 = fit_group(&sample, sample.factors(), &loose_opts(), &cache).unwrap();
        assert_eq!(f1.params.nu_bar(), f2.params.nu_bar());
        assert_eq!(f1.params.corr(), f2.params.corr());
        assert_eq!(f1.params.marginals(), f2.params.marginals());
    }

    #[test]
    fn provider_full_mode_restricts_the_single_fit() {
        let corr = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.5, 0.2, 0.5, 1.0, 0.1, 0.2, 0.1, 1.0],
        );
        let p = MetaTParams::elliptical(labels(3), corr, 6.0).unwrap();
        let sample = sample_meta_t(&p, 700, 3).unwrap();
        let provider = FitProvider::new(FitMode::Full, &sample, loose_opts()).unwrap();
        let pair = vec![sample.factors()[0].clone(), sample.factors()[2].clone()];
        let sub = provider.params_for(&pair).unwrap();
        assert_eq!(sub.dim(), 2);
        // Exactly one underlying fit happened, on the full factor list.
        let fits = provider.fitted_groups();
        assert_eq!(fits.len(), 1);
        assert_eq!(fits[0].0.len(), 3);
        // The restricted correlation is the submatrix of the full fit.
        let full = provider.params_for(&sample.factors().to_vec()).unwrap();
        assert!((sub.corr()[(0, 1)] - full.corr()[(0, 2)]).abs() < 1e-15);
    }

    #[test]
    fn params_document_round_trip_is_bit_exact() {
        let corr = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]);
        let p = MetaTParams::elliptical(labels(2), corr, 4.0).unwrap();
        let sample = sample_meta_t(&p, 400, 9).unwrap();
        let provider = FitProvider::new(FitMode::PerGroup, &sample, loose_opts()).unwrap();
        let _ = provider.params_for(&sample.factors().to_vec()).unwrap();
        let doc = ParamsDocument::from_provider(&provider, &sample);
        let json = doc.to_json().unwrap();
        let back = ParamsDocument::from_json(&json).unwrap();
        let json2 = back.to_json().unwrap();
        assert_eq!(json, json2);
        let groups = back.group_params().unwrap();
        assert_eq!(groups.len(), 1);
        let (_, params) = &groups[0];
        let orig = provider.params_for(&sample.factors().to_vec()).unwrap();
        // Bit-exact on the decimal representations written.
        assert_eq!(params.nu_bar().to_bits(), orig.nu_bar().to_bits());
        for (a, b) in params.corr().iter().zip(orig.corr().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in params.marginals().iter().zip(orig.marginals().iter()) {
            assert_eq!(a.mu.to_bits(), b.mu.to_bits());
            assert_eq!(a.sigma.to_bits(), b.sigma.to_bits());
            assert_eq!(a.nu.to_bits(), b.nu.to_bits());
        }
    }

    #[test]
    fn profile_likelihood_is_evaluated_and_mode_recovered_roughly() {
        // Small smoke recovery; the tight-tolerance recovery lives in the
        // integration suite.
        let p = MetaTParams::new(
            labels(1),
            vec![StudentMarginal::new(0.5, 2.0, 6.0).unwrap()],
            DMatrix::identity(1, 1),
            6.0,
        )
        .unwrap();
        let sample: Vec<f64> = sample_meta_t(&p, 4000, 31)
            .unwrap()
            .data()
            .column(0)
            .iter()
            .copied()
            .collect();
        let fitted = fit_marginal(&sample, &loose_opts()).unwrap();
        assert!((fitted.params.mu - 0.5).abs() < 0.15);
        assert!((fitted.params.sigma - 2.0).abs() < 0.15);
        assert!(fitted.params.nu > 3.0 && fitted.params.nu < 12.0);
        assert!(fitted.profile_evaluations > 20);
    }

    #[test]
    fn copula_loglik_finite_at_center() {
        let corr = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let chol = Cholesky::new(corr.clone()).unwrap();
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v: &f64| v.ln()).sum::<f64>();
        let u = DMatrix::from_element(1, 2, 0.5);
        let ll = copula_loglik(&u, &chol, log_det, 7.0).unwrap();
        assert!(ll.is_finite());
        // Copula density at the center: x = 0, quadratic form 0.
        let x = DVector::zeros(2);
        let expect = special::ln_gamma(0.5 * (7.0 + 2.0))
            - special::ln_gamma(0.5 * 7.0)
            - (7.0 * std::f64::consts::PI).ln()
            - 0.5 * log_det
            - 2.0 * special::t_log_pdf(x[0], 7.0);
        assert!((ll - expect).abs() < 1e-12);
    }
}
