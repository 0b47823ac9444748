//! Meta-t distribution machinery: Student-t marginals, t-copula,
//! joint log-density with analytic gradient, fitting, and sampling.
//!
//! The joint density of the meta-t is the t-copula density evaluated at
//! the marginal-CDF transforms of the observation times the product of
//! the marginal densities:
//!
//! ```text
//! log f(s) = log c_{ν̄,Σ}(u) + Σ_i [ log t_{ν_i}(z_i) − log σ_i ]
//! z_i = (s_i − μ_i)/σ_i,   u_i = T_{ν_i}(z_i),   x_i = T_{ν̄}⁻¹(u_i)
//! ```
//!
//! with `c` written through the multivariate-t density at `x`. When all
//! degrees of freedom agree the construction collapses to the elliptical
//! multivariate t.

pub mod corr;
pub mod fit;
pub mod special;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::FactorId;
use crate::marketdata::ReturnMatrix;

pub use fit::{fit_copula, fit_group, fit_marginal, FitOptions, FitProvider, FittedMarginal, GroupFit, ParamsDocument};

/// Smallest admissible eigenvalue of the copula correlation.
pub const MIN_CORR_EIGENVALUE: f64 = 1e-10;

/// CDF transforms are clamped into this open interval before the copula
/// quantile; beyond it the marginal CDF is within f64 rounding of 0 or 1
/// and the evaluation saturates.
const U_LO: f64 = 1e-16;
const U_HI: f64 = 1.0 - 1.1e-16;

/// Univariate Student-t marginal with location, scale and dof.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentMarginal {
    pub mu: f64,
    pub sigma: f64,
    pub nu: f64,
}

impl StudentMarginal {
    pub fn new(mu: f64, sigma: f64, nu: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::validation(format!("marginal scale must be > 0, got {sigma}")));
        }
        if !(nu > 0.0) {
            return Err(Error::validation(format!("marginal dof must be > 0, got {nu}")));
        }
        if !mu.is_finite() || !sigma.is_finite() || !nu.is_finite() {
            return Err(Error::validation("marginal parameters must be finite".to_string()));
        }
        Ok(StudentMarginal { mu, sigma, nu })
    }

    pub fn standardize(&self, x: f64) -> f64 {
        (x - self.mu) / self.sigma
    }

    /// Log density at `x` in data units.
    pub fn log_pdf(&self, x: f64) -> f64 {
        special::t_log_pdf(self.standardize(x), self.nu) - self.sigma.ln()
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        special::t_cdf(self.standardize(x), self.nu)
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        Ok(self.mu + self.sigma * special::t_quantile(p, self.nu)?)
    }
}

/// Fitted meta-t parameters for a group of risk factors: per-factor t
/// marginals plus a t-copula (correlation Σ and dof ν̄).
#[derive(Debug, Clone)]
pub struct MetaTParams {
    factor_labels: Vec<FactorId>,
    marginals: Vec<StudentMarginal>,
    corr: DMatrix<f64>,
    nu_bar: f64,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl MetaTParams {
    pub fn new(
        factor_labels: Vec<FactorId>,
        marginals: Vec<StudentMarginal>,
        corr: DMatrix<f64>,
        nu_bar: f64,
    ) -> Result<Self> {
        let d = factor_labels.len();
        if d == 0 {
            return Err(Error::validation("meta-t needs at least one factor".to_string()));
        }
        if marginals.len() != d || corr.nrows() != d || corr.ncols() != d {
            return Err(Error::validation(format!(
                "meta-t dimension mismatch: {} labels, {} marginals, {}x{} corr",
                d,
                marginals.len(),
                corr.nrows(),
                corr.ncols()
            )));
        }
        {
            let mut sorted = factor_labels.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != d {
                return Err(Error::validation("duplicate factor labels in meta-t parameters".to_string()));
            }
        }
        if !(nu_bar > 0.0) {
            return Err(Error::validation(format!("copula dof must be > 0, got {nu_bar}")));
        }
        for m in &marginals {
            StudentMarginal::new(m.mu, m.sigma, m.nu)?;
        }
        for i in 0..d {
            if (corr[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::validation(format!(
                    "correlation diagonal entry {i} is {} (must be 1)",
                    corr[(i, i)]
                )));
            }
            for j in 0..i {
                if (corr[(i, j)] - corr[(j, i)]).abs() > 1e-12 {
                    return Err(Error::validation(format!(
                        "correlation matrix not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let min_eig = corr
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig <= MIN_CORR_EIGENVALUE {
            return Err(Error::validation(format!(
                "correlation matrix not positive definite (min eigenvalue {min_eig:.3e})"
            )));
        }
        let chol = Cholesky::new(corr.clone()).ok_or_else(|| {
            Error::validation("correlation matrix Cholesky factorization failed".to_string())
        })?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(MetaTParams {
            factor_labels,
            marginals,
            corr,
            nu_bar,
            chol,
            log_det,
        })
    }

    /// Elliptical special case: all marginals standard t with the copula
    /// dof, so the joint is the multivariate t with correlation `corr`.
    pub fn elliptical(factor_labels: Vec<FactorId>, corr: DMatrix<f64>, nu: f64) -> Result<Self> {
        let marginals = vec![StudentMarginal::new(0.0, 1.0, nu)?; factor_labels.len()];
        MetaTParams::new(factor_labels, marginals, corr, nu)
    }

    pub fn dim(&self) -> usize {
        self.factor_labels.len()
    }

    pub fn factor_labels(&self) -> &[FactorId] {
        &self.factor_labels
    }

    pub fn marginals(&self) -> &[StudentMarginal] {
        &self.marginals
    }

    pub fn corr(&self) -> &DMatrix<f64> {
        &self.corr
    }

    pub fn nu_bar(&self) -> f64 {
        self.nu_bar
    }

    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    /// Location vector μ (the unconstrained density mode).
    pub fn mode(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.marginals.iter().map(|m| m.mu))
    }

    pub fn scales(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.marginals.iter().map(|m| m.sigma))
    }

    /// Restriction to a factor subset; the meta-t family is closed under
    /// taking sub-vectors (sub-correlation, same copula dof).
    pub fn restrict(&self, subset: &[FactorId]) -> Result<MetaTParams> {
        let idx: Vec<usize> = subset
            .iter()
            .map(|f| {
                self.factor_labels
                    .iter()
                    .position(|g| g == f)
                    .ok_or_else(|| Error::validation(format!("factor {f} not covered by fitted parameters")))
            })
            .collect::<Result<_>>()?;
        let d = idx.len();
        let mut corr = DMatrix::identity(d, d);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                corr[(a, b)] = self.corr[(i, j)];
            }
        }
        MetaTParams::new(
            subset.to_vec(),
            idx.iter().map(|&i| self.marginals[i].clone()).collect(),
            corr,
            self.nu_bar,
        )
    }

    /// Standardized coordinates, CDF transforms, and copula t-scores for
    /// an observation.
    fn transforms(&self, s: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let d = self.dim();
        let mut z = DVector::zeros(d);
        let mut x = DVector::zeros(d);
        for j in 0..d {
            let m = &self.marginals[j];
            z[j] = m.standardize(s[j]);
            let u = special::t_cdf(z[j], m.nu)?.clamp(U_LO, U_HI);
            x[j] = special::t_quantile(u, self.nu_bar)?;
        }
        Ok((z, x))
    }

    /// Joint log-density, optionally with its analytic gradient.
    pub fn evaluate(&self, s: &DVector<f64>, want_gradient: bool) -> Result<DensityEvaluation> {
        let d = self.dim();
        if s.len() != d {
            return Err(Error::validation(format!(
                "density argument has dimension {} but parameters cover {d} factors",
                s.len()
            )));
        }
        let (z, x) = self.transforms(s)?;
        let y = self.chol.solve(&x);
        let m = x.dot(&y);
        let nu_bar = self.nu_bar;
        let df = d as f64;

        let mut log_density = special::ln_gamma(0.5 * (nu_bar + df))
            - special::ln_gamma(0.5 * nu_bar)
            - 0.5 * df * (nu_bar * std::f64::consts::PI).ln()
            - 0.5 * self.log_det
            - 0.5 * (nu_bar + df) * (m / nu_bar).ln_1p();
        for j in 0..d {
            log_density -= special::t_log_pdf(x[j], nu_bar);
            log_density += special::t_log_pdf(z[j], self.marginals[j].nu) - self.marginals[j].sigma.ln();
        }

        let gradient = if want_gradient {
            let mut g = DVector::zeros(d);
            for j in 0..d {
                let mj = &self.marginals[j];
                let copula_term = -(nu_bar + df) * y[j] / (nu_bar + m)
                    + (nu_bar + 1.0) * x[j] / (nu_bar + x[j] * x[j]);
                let dxds = special::t_pdf(z[j], mj.nu) / (mj.sigma * special::t_pdf(x[j], nu_bar));
                let marginal_term = -(mj.nu + 1.0) * z[j] / (mj.nu + z[j] * z[j]) / mj.sigma;
                g[j] = copula_term * dxds + marginal_term;
            }
            Some(g)
        } else {
            None
        };

        Ok(DensityEvaluation {
            log_density,
            gradient,
        })
    }

    /// Joint log-density only.
    pub fn log_density(&self, s: &DVector<f64>) -> Result<f64> {
        Ok(self.evaluate(s, false)?.log_density)
    }
}

/// Result of a density evaluation.
#[derive(Debug, Clone)]
pub struct DensityEvaluation {
    pub log_density: f64,
    pub gradient: Option<DVector<f64>>,
}

/// Joint meta-t log-density of `s`, with gradient when requested.
pub fn meta_t_log_density(
    params: &MetaTParams,
    s: &DVector<f64>,
    want_gradient: bool,
) -> Result<DensityEvaluation> {
    params.evaluate(s, want_gradient)
}

/// Draws `n` observations from the meta-t distribution. Deterministic for
/// a given seed. The returned matrix carries fabricated weekday dates so
/// it can flow through the same fitting pipeline as ingested data.
pub fn sample_meta_t(params: &MetaTParams, n: usize, seed: u64) -> Result<ReturnMatrix> {
    if n == 0 {
        return Err(Error::validation("sample size must be at least 1".to_string()));
    }
    let d = params.dim();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let chi = ChiSquared::new(params.nu_bar)
        .map_err(|e| Error::validation(format!("chi-squared sampler: {e}")))?;
    let l = params.chol.l();
    let mut data = DMatrix::zeros(n, d);
    let mut eps = DVector::zeros(d);
    for row in 0..n {
        for j in 0..d {
            eps[j] = StandardNormal.sample(&mut rng);
        }
        let corr_normal = &l * &eps;
        let w: f64 = chi.sample(&mut rng);
        let scale = (params.nu_bar / w).sqrt();
        for j in 0..d {
            let x = corr_normal[j] * scale;
            let u = special::t_cdf(x, params.nu_bar)?.clamp(U_LO, U_HI);
            let mj = &params.marginals[j];
            data[(row, j)] = mj.mu + mj.sigma * special::t_quantile(u, mj.nu)?;
        }
    }
    ReturnMatrix::from_parts(
        params.factor_labels.to_vec(),
        crate::marketdata::synthetic_dates(n),
        data,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::special::{t_log_pdf, t_quantile};

    fn labels(d: usize) -> Vec<FactorId> {
        (0..d).map(|i| FactorId::new("T", format!("F{i}"))).collect()
    }

    /// Multivariate-t log density written directly; oracle for the
    /// equal-dof reduction.
    fn mvt_log_pdf_oracle(x: &DVector<f64>, corr: &DMatrix<f64>, nu: f64) -> f64 {
        let d = x.len() as f64;
        let inv = corr.clone().try_inverse().unwrap();
        let m = (x.transpose() * inv * x)[(0, 0)];
        let det = corr.determinant();
        special::ln_gamma(0.5 * (nu + d))
            - special::ln_gamma(0.5 * nu)
            - 0.5 * d * (nu * std::f64::consts::PI).ln()
            - 0.5 * det.ln()
            - 0.5 * (nu + d) * (1.0 + m / nu).ln()
    }

    fn params_2d(nu1: f64, nu2: f64, nu_bar: f64, rho: f64) -> MetaTParams {
        MetaTParams::new(
            labels(2),
            vec![
                StudentMarginal::new(0.1, 0.8, nu1).unwrap(),
                StudentMarginal::new(-0.3, 1.4, nu2).unwrap(),
            ],
            DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]),
            nu_bar,
        )
        .unwrap()
    }

    #[test]
    fn one_factor_density_equals_univariate_t() {
        for (mu, sigma, nu, nu_bar) in [(0.0, 1.0, 4.0, 4.0), (0.4, 0.3, 2.5, 17.0), (-1.0, 2.0, 9.0, 1.2)] {
            let p = MetaTParams::new(
                labels(1),
                vec![StudentMarginal::new(mu, sigma, nu).unwrap()],
                DMatrix::identity(1, 1),
                nu_bar,
            )
            .unwrap();
            for &s in &[-2.0, -0.5, 0.0, 0.7, 3.0] {
                let got = p.log_density(&DVector::from_element(1, s)).unwrap();
                let want = t_log_pdf((s - mu) / sigma, nu) - sigma.ln();
                assert!((got - want).abs() < 1e-11, "s={s}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn equal_dof_reduces_to_multivariate_t() {
        let nu = 5.0;
        let corr = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.2, 0.5, 1.0, -0.3, 0.2, -0.3, 1.0]);
        let p = MetaTParams::elliptical(labels(3), corr.clone(), nu).unwrap();
        let pts = [
            DVector::from_row_slice(&[0.0, 0.0, 0.0]),
            DVector::from_row_slice(&[1.0, -0.5, 0.25]),
            DVector::from_row_slice(&[-2.0, 1.5, 3.0]),
            DVector::from_row_slice(&[4.0, -3.5, 0.1]),
        ];
        for s in &pts {
            let got = p.log_density(s).unwrap();
            let want = mvt_log_pdf_oracle(s, &corr, nu);
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn density_integrates_to_one_2d() {
        // Quadrature oracle: Simpson over μ ± 20σ. Marginal dof ≥ 5 keep
        // the truncated tail mass far below the tolerance.
        let p = params_2d(5.0, 7.0, 6.0, 0.55);
        let n = 400;
        let half = 20.0;
        let (mu1, s1) = (p.marginals()[0].mu, p.marginals()[0].sigma);
        let (mu2, s2) = (p.marginals()[1].mu, p.marginals()[1].sigma);
        let h1 = 2.0 * half * s1 / n as f64;
        let h2 = 2.0 * half * s2 / n as f64;
        let simpson_w = |k: usize| -> f64 {
            if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            }
        };
        let mut total = 0.0;
        for i in 0..=n {
            let x = mu1 - half * s1 + i as f64 * h1;
            let mut inner = 0.0;
            for j in 0..=n {
                let y = mu2 - half * s2 + j as f64 * h2;
                let ld = p.log_density(&DVector::from_row_slice(&[x, y])).unwrap();
                inner += simpson_w(j) * ld.exp();
            }
            total += simpson_w(i) * inner * h2 / 3.0;
        }
        total *= h1 / 3.0;
        assert!((total - 1.0).abs() < 1e-3, "integral = {total}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // 100 seeded random (params, point) pairs in 2-D and 3-D.
        let mut rng = ChaCha12Rng::seed_from_u64(987);
        use rand::Rng;
        for trial in 0..100 {
            let d = if trial % 2 == 0 { 2 } else { 3 };
            // Random PD correlation: normalize A·Aᵀ + d·I.
            let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let s = &a * a.transpose() + DMatrix::identity(d, d) * d as f64 * 0.5;
            let mut corr = DMatrix::identity(d, d);
            for i in 0..d {
                for j in 0..d {
                    corr[(i, j)] = s[(i, j)] / (s[(i, i)] * s[(j, j)]).sqrt();
                }
            }
            for i in 0..d {
                corr[(i, i)] = 1.0;
            }
            let marginals: Vec<StudentMarginal> = (0..d)
                .map(|_| {
                    StudentMarginal::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(0.4..2.0),
                        rng.random_range(2.5..12.0),
                    )
                    .unwrap()
                })
                .collect();
            let nu_bar = rng.random_range(2.0..20.0);
            let p = MetaTParams::new(labels(d), marginals, corr, nu_bar).unwrap();
            let draw = sample_meta_t(&p, 1, 1000 + trial as u64).unwrap();
            let s = DVector::from_iterator(d, draw.data().row(0).iter().copied());

            let eval = p.evaluate(&s, true).unwrap();
            let grad = eval.gradient.unwrap();
            for j in 0..d {
                let h = 1e-6 * s[j].abs().max(1.0);
                let mut sp = s.clone();
                let mut sm = s.clone();
                sp[j] += h;
                sm[j] -= h;
                let fd = (p.log_density(&sp).unwrap() - p.log_density(&sm).unwrap()) / (2.0 * h);
                let denom = grad[j].abs().max(1.0);
                assert!(
                    (grad[j] - fd).abs() / denom < 1e-5,
                    "trial {trial} dim {j}: analytic {} vs fd {fd}",
                    grad[j]
                );
            }
        }
    }

    #[test]
    fn marginal_density_integrates_to_one() {
        // Simpson over μ ± 60σ; ν ≥ 4 keeps the truncated tails far
        // below the tolerance.
        for (mu, sigma, nu) in [(0.0, 1.0, 4.0), (0.3, 0.02, 9.0), (-2.0, 5.0, 6.5)] {
            let m = StudentMarginal::new(mu, sigma, nu).unwrap();
            let n = 4000;
            let lo = mu - 60.0 * sigma;
            let h = 120.0 * sigma / n as f64;
            let mut total = 0.0;
            for k in 0..=n {
                let w = if k == 0 || k == n {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                total += w * m.log_pdf(lo + k as f64 * h).exp();
            }
            total *= h / 3.0;
            assert!((total - 1.0).abs() < 1e-6, "nu={nu}: integral {total}");
        }
    }

    #[test]
    fn density_finite_at_mode_and_copula_center() {
        let p = params_2d(3.0, 11.0, 5.0, -0.4);
        let at_mode = p.log_density(&p.mode()).unwrap();
        assert!(at_mode.is_finite());
        // u = (0.5, 0.5) maps to copula scores x = 0; density positive and finite.
        let s = DVector::from_iterator(2, p.marginals().iter().map(|m| m.mu));
        let eval = p.evaluate(&s, false).unwrap();
        assert!(eval.log_density.is_finite());
        assert!(eval.log_density.exp() > 0.0);
    }

    #[test]
    fn sampling_is_deterministic_and_recovers_location() {
        let p = params_2d(6.0, 6.0, 6.0, 0.3);
        let a = sample_meta_t(&p, 500, 7).unwrap();
        let b = sample_meta_t(&p, 500, 7).unwrap();
        assert_eq!(a.data(), b.data());
        let big = sample_meta_t(&p, 100_000, 11).unwrap();
        for j in 0..2 {
            let col = big.data().column(j);
            let mean = col.sum() / col.len() as f64;
            let mj = &p.marginals()[j];
            // ±3·sd(mean) heuristic band with sd ≈ σ·sqrt(ν/(ν−2)/n).
            let band = 3.0 * mj.sigma * (mj.nu / (mj.nu - 2.0) / col.len() as f64).sqrt();
            assert!((mean - mj.mu).abs() < band, "factor {j}: mean {mean} vs {}", mj.mu);
        }
    }

    #[test]
    fn sampled_kendall_tau_recovers_correlation() {
        let rho = 0.6;
        let p = params_2d(5.0, 5.0, 5.0, rho);
        let sample = sample_meta_t(&p, 20_000, 99).unwrap();
        let x: Vec<f64> = sample.data().column(0).iter().copied().collect();
        let y: Vec<f64> = sample.data().column(1).iter().copied().collect();
        let tau = super::corr::kendall_tau(&x, &y).unwrap();
        let rho_hat = (std::f64::consts::FRAC_PI_2 * tau).sin();
        assert!((rho_hat - rho).abs() < 0.03, "rho_hat = {rho_hat}");
    }

    #[test]
    fn restrict_preserves_marginals_and_subcorrelation() {
        let corr = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.2, 0.5, 1.0, -0.3, 0.2, -0.3, 1.0]);
        let marginals = vec![
            StudentMarginal::new(0.0, 1.0, 3.0).unwrap(),
            StudentMarginal::new(1.0, 2.0, 4.0).unwrap(),
            StudentMarginal::new(-1.0, 0.5, 5.0).unwrap(),
        ];
        let p = MetaTParams::new(labels(3), marginals, corr, 6.0).unwrap();
        let sub = p.restrict(&[labels(3)[2].clone(), labels(3)[0].clone()]).unwrap();
        assert_eq!(sub.dim(), 2);
        assert_eq!(sub.marginals()[0].nu, 5.0);
        assert_eq!(sub.marginals()[1].nu, 3.0);
        assert!((sub.corr()[(0, 1)] - 0.2).abs() < 1e-15);
        assert!(p.restrict(&[FactorId::new("X", "Y")]).is_err());
    }

    #[test]
    fn rejects_invalid_parameters() {
        let bad_diag = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.9]);
        assert!(MetaTParams::elliptical(labels(2), bad_diag, 4.0).is_err());
        let not_pd = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(MetaTParams::elliptical(labels(2), not_pd, 4.0).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.1, 1.0]);
        assert!(MetaTParams::elliptical(labels(2), asym, 4.0).is_err());
        assert!(StudentMarginal::new(0.0, 0.0, 4.0).is_err());
        assert!(StudentMarginal::new(0.0, 1.0, -4.0).is_err());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = params_2d(4.0, 4.0, 4.0, 0.0);
        assert!(p.log_density(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn copula_transform_consistency() {
        // With ν = ν̄ the copula scores equal the standardized data.
        let p = params_2d(6.0, 6.0, 6.0, 0.2);
        let s = DVector::from_row_slice(&[1.3, -2.1]);
        let (z, x) = p.transforms(&s).unwrap();
        assert!((z[0] - x[0]).abs() < 1e-11);
        assert!((z[1] - x[1]).abs() < 1e-11);
        // And for ν ≠ ν̄ the transform matches the explicit composition.
        let p2 = params_2d(3.0, 8.0, 12.0, 0.2);
        let (z2, x2) = p2.transforms(&s).unwrap();
        let u0 = special::t_cdf(z2[0], 3.0).unwrap();
        assert!((x2[0] - t_quantile(u0, 12.0).unwrap()).abs() < 1e-10);
    }
}
