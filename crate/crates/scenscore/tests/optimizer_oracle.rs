//! Optimizer cross-checks against the closed form and the grid oracle
//! on randomized instances.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use scenscore::distributions::{MetaTParams, StudentMarginal};
use scenscore::factor::FactorId;
use scenscore::optimizer::{
    approximate_optimal, brute_force_optimal, elliptical_optimal, exact_optimal, LossConstraint,
    SolverSettings,
};

fn labels(d: usize) -> Vec<FactorId> {
    (0..d).map(|i| FactorId::new("RND", format!("F{i}"))).collect()
}

fn random_correlation(rng: &mut ChaCha12Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let s = &a * a.transpose() + DMatrix::identity(d, d) * (0.3 * d as f64);
    let mut corr = DMatrix::identity(d, d);
    for i in 0..d {
        for j in 0..d {
            corr[(i, j)] = s[(i, j)] / (s[(i, i)] * s[(j, j)]).sqrt();
        }
    }
    for i in 0..d {
        corr[(i, i)] = 1.0;
    }
    corr
}

fn nonzero_exposure(rng: &mut ChaCha12Rng, d: usize) -> DVector<f64> {
    loop {
        let p = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        if p.norm() > 0.3 {
            return p;
        }
    }
}

/// Exact solver matches the elliptical closed form on random equal-dof
/// instances in 2-D and 3-D.
#[test]
fn exact_matches_elliptical_closed_form_randomized() {
    let mut rng = ChaCha12Rng::seed_from_u64(31_337);
    let settings = SolverSettings::default();
    let start = std::time::Instant::now();
    for trial in 0..100 {
        let d = if trial % 2 == 0 { 2 } else { 3 };
        let corr = random_correlation(&mut rng, d);
        let nu = rng.random_range(2.5..25.0);
        let mu = DVector::from_fn(d, |_, _| rng.random_range(-0.5..0.5));
        let sigma = DVector::from_fn(d, |_, _| rng.random_range(0.2..2.0));
        let marginals: Vec<StudentMarginal> = (0..d)
            .map(|j| StudentMarginal::new(mu[j], sigma[j], nu).unwrap())
            .collect();
        let params = MetaTParams::new(labels(d), marginals, corr.clone(), nu).unwrap();
        let p = nonzero_exposure(&mut rng, d);
        // Active constraint: cap strictly below the mode value.
        let q = p.dot(&mu) - rng.random_range(0.5..4.0);

        // Oracle: normalized closed form transported back.
        let p_tilde = p.component_mul(&sigma);
        let q_tilde = q - p.dot(&mu);
        let base = elliptical_optimal(&p_tilde, q_tilde, &corr).unwrap();
        let oracle = &mu + sigma.component_mul(&base);

        let res = exact_optimal(&params, &LossConstraint::new(p, q).unwrap(), &settings).unwrap();
        assert!(res.converged, "trial {trial} did not converge");
        for j in 0..d {
            assert!(
                (res.scenario[j] - oracle[j]).abs() < 1e-6,
                "trial {trial} coord {j}: {} vs {}",
                res.scenario[j],
                oracle[j]
            );
        }
    }
    assert!(
        start.elapsed() < std::time::Duration::from_secs(10),
        "took {:?}",
        start.elapsed()
    );
}

/// Exact solver dominates the grid oracle on random 2-D meta-t
/// instances with distinct dof, with a tight active constraint.
#[test]
fn exact_dominates_brute_force_randomized() {
    let mut rng = ChaCha12Rng::seed_from_u64(271_828);
    let settings = SolverSettings::default();
    for trial in 0..50 {
        let corr = random_correlation(&mut rng, 2);
        let nu1 = rng.random_range(2.5..6.0);
        let nu2 = rng.random_range(6.0..15.0);
        let nu_bar = rng.random_range(2.0..20.0);
        let params = MetaTParams::new(
            labels(2),
            vec![
                StudentMarginal::new(rng.random_range(-0.3..0.3), rng.random_range(0.5..1.5), nu1)
                    .unwrap(),
                StudentMarginal::new(rng.random_range(-0.3..0.3), rng.random_range(0.5..1.5), nu2)
                    .unwrap(),
            ],
            corr,
            nu_bar,
        )
        .unwrap();
        let p = nonzero_exposure(&mut rng, 2);
        let mode_value = p.dot(&params.mode());
        let q = mode_value - rng.random_range(0.5..3.0);
        let c = LossConstraint::new(p, q).unwrap();

        let exact = exact_optimal(&params, &c, &settings).unwrap();
        let brute = brute_force_optimal(&params, &c, 7.0, 151).unwrap();
        assert!(
            exact.log_density.exp() >= brute.log_density.exp() - 1e-6,
            "trial {trial}: exact {} < brute {} - 1e-6",
            exact.log_density.exp(),
            brute.log_density.exp()
        );
        // ᵗPμ > q here, so the optimum is on the boundary.
        assert!(
            (exact.constraint_value - q).abs() < settings.tol_con,
            "trial {trial}: residual {}",
            (exact.constraint_value - q).abs()
        );
        assert!(exact.converged, "trial {trial}");
    }
}

/// The approximation-quality warning: constraint violation of the
/// approximate route grows with the dof mismatch between marginals and
/// copula.
#[test]
fn approximate_violation_grows_with_dof_mismatch() {
    let corr = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
    let build = |nu_bar: f64| {
        MetaTParams::new(
            labels(2),
            vec![
                StudentMarginal::new(0.0, 1.0, 3.0).unwrap(),
                StudentMarginal::new(0.0, 1.0, 3.0).unwrap(),
            ],
            corr.clone(),
            nu_bar,
        )
        .unwrap()
    };
    let p = DVector::from_row_slice(&[1.0, -1.0]);
    let q = -3.0;

    let far = build(30.0);
    let near = build(3.5);
    let c = LossConstraint::new(p, q).unwrap();
    let res_far = approximate_optimal(&far, &c).unwrap();
    let res_near = approximate_optimal(&near, &c).unwrap();
    let viol_far = (res_far.constraint_value - q).abs();
    let viol_near = (res_near.constraint_value - q).abs();
    assert!(viol_far > 0.0, "no violation for mismatched dof");
    assert!(
        viol_far > viol_near,
        "violation ordering: far {viol_far} vs near {viol_near}"
    );

    // The exact solver closes the gap the approximation leaves.
    let settings = SolverSettings::default();
    let exact_far = exact_optimal(&far, &c, &settings).unwrap();
    assert!((exact_far.constraint_value - q).abs() < settings.tol_con);
    if res_far.constraint_value <= q {
        assert!(exact_far.log_density >= res_far.log_density - 1e-9);
    }
}

/// Feasible-mode short circuit and boundary tightness on random
/// instances.
#[test]
fn mode_feasibility_and_tightness() {
    let mut rng = ChaCha12Rng::seed_from_u64(1_618);
    let settings = SolverSettings::default();
    for _ in 0..30 {
        let corr = random_correlation(&mut rng, 2);
        let params = MetaTParams::new(
            labels(2),
            vec![
                StudentMarginal::new(rng.random_range(-1.0..1.0), 1.0, 4.0).unwrap(),
                StudentMarginal::new(rng.random_range(-1.0..1.0), 1.0, 7.0).unwrap(),
            ],
            corr,
            5.0,
        )
        .unwrap();
        let p = nonzero_exposure(&mut rng, 2);
        let mode_value = p.dot(&params.mode());
        // Slack constraint: mode feasible.
        let res = exact_optimal(
            &params,
            &LossConstraint::new(p.clone(), mode_value + 1.0).unwrap(),
            &settings,
        )
        .unwrap();
        assert_eq!(res.iterations, 0);
        assert_eq!(res.scenario, params.mode());
        // Tight constraint: optimum on the boundary.
        let res = exact_optimal(
            &params,
            &LossConstraint::new(p, mode_value - 1.0).unwrap(),
            &settings,
        )
        .unwrap();
        assert!((res.constraint_value - (mode_value - 1.0)).abs() < settings.tol_con);
    }
}
