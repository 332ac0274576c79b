//! Independent checks of the estimators against textbook computations done
//! with nalgebra: normal equations for OLS, a stacked regression for the MSM,
//! and the logistic score equations.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use qgcomp::mcharness::{run_replications, HarnessConfig, Method};
use qgcomp::qgc::{self, exposure_positions, ExposureTerm, ModelSpec, QgcompOptions};
use qgcomp::regress::{self, ColumnRole, DesignMatrix, FitResult, Link};
use qgcomp::rng::stream;
use qgcomp::simgen::{generate_dataset, ScenarioSpec};
use qgcomp::wqs::{self, WqsConfig};
use qgcomp::MixtureData;
use rand::Rng;
use rand_distr::StandardNormal;

fn random_design(n: usize, p: usize, seed: u64) -> (DesignMatrix, Vec<f64>) {
    let mut rng = stream(seed);
    let mut cols = vec![(ColumnRole::Intercept, "(Intercept)".to_string(), vec![1.0; n])];
    for j in 1..p {
        let x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * (j as f64)).collect();
        cols.push((ColumnRole::Covariate(j - 1), format!("z{j}"), x));
    }
    let y = (0..n)
        .map(|i| cols.iter().skip(1).map(|c| 0.3 * c.2[i]).sum::<f64>() + rng.sample::<f64, _>(StandardNormal))
        .collect();
    (DesignMatrix::from_columns(cols).unwrap(), y)
}

fn to_nalgebra(design: &DesignMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(design.nrows(), design.ncols(), |i, j| design.get(i, j))
}

fn normal_equations(x: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let xtx = x.transpose() * x;
    let inv = xtx.clone().try_inverse().expect("full rank");
    (&inv * x.transpose() * y, inv)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn ols_matches_normal_equations() {
    for (n, p, seed) in [(50, 3, 1), (200, 8, 2), (500, 16, 3)] {
        let (design, y) = random_design(n, p, seed);
        let fit = regress::fit_linear(&design, &y).unwrap();
        let x = to_nalgebra(&design);
        let yv = DVector::from_vec(y.clone());
        let (beta, inv) = normal_equations(&x, &yv);
        assert!(max_abs_diff(&fit.beta, beta.as_slice()) < 1e-8);

        let resid = &yv - &x * &beta;
        let sigma2 = resid.norm_squared() / (n - p) as f64;
        assert!((fit.residual_variance.unwrap() - sigma2).abs() < 1e-8);
        for i in 0..p {
            for j in 0..p {
                assert!((fit.cov(i, j) - sigma2 * inv[(i, j)]).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn covariance_is_symmetric_psd() {
    let (design, y) = random_design(120, 6, 9);
    let fit = regress::fit_linear(&design, &y).unwrap();
    let p = fit.p();
    let cov = DMatrix::from_fn(p, p, |i, j| fit.cov(i, j));
    assert!((&cov - cov.transpose()).amax() < 1e-14);
    let eig = SymmetricEigen::new(cov);
    assert!(eig.eigenvalues.iter().all(|&l| l > 0.0));
}

fn logistic_score(design: &DesignMatrix, y: &[f64], fit: &FitResult) -> Vec<f64> {
    let x = to_nalgebra(design);
    let eta = &x * DVector::from_column_slice(&fit.beta);
    let resid = DVector::from_iterator(
        y.len(),
        eta.iter().zip(y).map(|(e, yi)| yi - 1.0 / (1.0 + (-e).exp())),
    );
    (x.transpose() * resid).as_slice().to_vec()
}

#[test]
fn logistic_solves_score_equations_and_matches_fisher_information() {
    let (design, z) = random_design(400, 4, 21);
    let mut rng = stream(22);
    let y: Vec<f64> = z
        .iter()
        .map(|&v| if rng.random::<f64>() < 1.0 / (1.0 + (-0.5 * v).exp()) { 1.0 } else { 0.0 })
        .collect();
    let fit = regress::fit_logistic(&design, &y).unwrap();
    assert!(fit.converged);
    assert!(logistic_score(&design, &y, &fit).iter().all(|s| s.abs() < 1e-8));

    let x = to_nalgebra(&design);
    let eta = &x * DVector::from_column_slice(&fit.beta);
    let w = DMatrix::from_diagonal(&eta.map(|e| {
        let m = 1.0 / (1.0 + (-e).exp());
        m * (1.0 - m)
    }));
    let info_inv = (x.transpose() * w * &x).try_inverse().unwrap();
    for i in 0..fit.p() {
        for j in 0..fit.p() {
            assert!((fit.cov(i, j) - info_inv[(i, j)]).abs() < 1e-8);
        }
    }
}

fn scenario_data(id: u8, n: usize, d: usize, seed: u64) -> MixtureData {
    let spec = ScenarioSpec::preset(id, n, d).unwrap();
    generate_dataset(&spec, &mut stream(seed)).unwrap().analysis_data()
}

/// ψ from the literal algorithm: stack q copies of the data with every
/// exposure set to the level, predict, then regress the predictions on a
/// polynomial in the level.
fn stacked_msm(data: &MixtureData, spec: &ModelSpec) -> Vec<f64> {
    let fit = regress::fit(&spec.design(data, None).unwrap(), &data.outcome, spec.link).unwrap();
    let n = data.nrows();
    let deg = spec.msm_degree;
    let rows = n * spec.q;
    let mut basis = DMatrix::zeros(rows, deg + 1);
    let mut target = DVector::zeros(rows);
    for l in 0..spec.q {
        let pred = regress::predict(&fit, &spec.design(data, Some(l as f64)).unwrap()).unwrap();
        for (i, &p) in pred.iter().enumerate() {
            let r = l * n + i;
            for k in 0..=deg {
                basis[(r, k)] = (l as f64).powi(k as i32);
            }
            target[r] = p;
        }
    }
    let (theta, _) = normal_equations(&basis, &target);
    theta.as_slice()[1..].to_vec()
}

#[test]
fn msm_path_matches_stacked_regression() {
    let data = scenario_data(7, 300, 4, 5);
    let interaction = ModelSpec::linear(4, 4)
        .with_term(ExposureTerm::Product(0, 1))
        .with_msm_degree(2);
    let est = qgc::msm_psi(&data, &interaction).unwrap();
    assert!(max_abs_diff(&est.psi, &stacked_msm(&data, &interaction)) < 1e-10);

    let data = scenario_data(8, 300, 6, 6);
    let square = ModelSpec::linear(6, 4)
        .with_term(ExposureTerm::Square(0))
        .with_msm_degree(2);
    let est = qgc::msm_psi(&data, &square).unwrap();
    assert!(max_abs_diff(&est.psi, &stacked_msm(&data, &square)) < 1e-10);
}

#[test]
fn linear_and_msm_paths_agree() {
    for (id, d, seed) in [(1, 4, 1), (3, 9, 2), (4, 14, 3), (2, 4, 4)] {
        let data = scenario_data(id, 500, d, seed);
        let spec = ModelSpec::linear(d, 4);
        let lin = qgc::linear_estimate(&data, &spec).unwrap();
        let msm = qgc::msm_psi(&data, &spec).unwrap();
        assert!((lin.psi[0] - msm.psi[0]).abs() < 1e-10);
        assert!((lin.psi[0] - stacked_msm(&data, &spec)[0]).abs() < 1e-10);
    }
}

#[test]
fn partial_effects_sum_to_psi_and_weights_normalize() {
    let data = scenario_data(2, 500, 9, 77);
    let est = qgc::linear_estimate(&data, &ModelSpec::linear(9, 4)).unwrap();
    let w = est.weights.unwrap();
    assert!((w.partial_effect_positive + w.partial_effect_negative - est.psi[0]).abs() < 1e-12);
    for group in [&w.positive, &w.negative] {
        if !group.is_empty() {
            assert!((group.iter().map(|e| e.weight).sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(group.iter().all(|e| e.weight >= 0.0));
        }
    }
    assert_eq!(w.positive.len() + w.negative.len(), 9);
}

#[test]
fn replications_identical_serial_and_parallel() {
    let spec = ScenarioSpec::preset(7, 200, 4).unwrap();
    let cfg = HarnessConfig {
        methods: vec![Method::Qgcomp, Method::Wqs, Method::WqsNosplit],
        reps: 4,
        base_seed: 2024,
        qgcomp_bootstraps: 20,
        wqs_bootstraps: 10,
        ..HarnessConfig::default()
    };
    let par = run_replications(&spec, &cfg).unwrap();
    let ser = run_replications(&spec, &HarnessConfig { parallel: false, ..cfg.clone() }).unwrap();
    assert_eq!(par, ser);
    assert_eq!(par.len(), 3 * 4 * 2);
}

#[test]
fn bootstrap_se_close_to_analytic_in_linear_model() {
    let data = scenario_data(3, 500, 4, 31);
    let spec = ModelSpec::linear(4, 4);
    let analytic = qgc::linear_estimate(&data, &spec).unwrap();
    let boot = qgc::qgcomp(
        &data,
        &spec,
        QgcompOptions {
            bootstraps: 400,
            seed: 3,
            force_bootstrap: true,
        },
    )
    .unwrap();
    assert!((analytic.psi[0] - boot.psi[0]).abs() < 1e-10);
    // Sampling error of a 400-draw SD is about 3.5%.
    assert!((boot.se[0] / analytic.se[0] - 1.0).abs() < 0.15);
}

#[test]
fn wqs_effect_is_ols_slope_of_validation_index() {
    let data = scenario_data(3, 400, 2, 12);
    let cfg = WqsConfig {
        n_bootstrap: 20,
        seed: 8,
        ..WqsConfig::default()
    };
    let est = wqs::wqs_fit(&data, &cfg).unwrap();
    let (_, valid) = wqs::split_sample(data.nrows(), cfg.train_fraction, cfg.seed).unwrap();
    let x = DMatrix::from_fn(valid.len(), 2, |i, j| if j == 0 { 1.0 } else { est.index[valid[i]] });
    let y = DVector::from_iterator(valid.len(), valid.iter().map(|&i| data.outcome[i]));
    let (beta, _) = normal_equations(&x, &y);
    assert!((est.psi - beta[1]).abs() < 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ols_is_equivariant_in_the_outcome(seed in 0u64..1000, a in -5.0f64..5.0, c in -3.0f64..3.0) {
        let (design, y) = random_design(60, 4, seed);
        let base = regress::fit_linear(&design, &y).unwrap();
        let shifted: Vec<f64> = y.iter().map(|v| a * v + c).collect();
        let fit = regress::fit_linear(&design, &shifted).unwrap();
        prop_assert!((fit.beta[0] - (a * base.beta[0] + c)).abs() < 1e-8);
        for j in 1..4 {
            prop_assert!((fit.beta[j] - a * base.beta[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn psi_shifts_with_added_exposure_effect(seed in 0u64..1000, delta in -1.0f64..1.0) {
        let data = scenario_data(1, 150, 4, seed);
        let spec = ModelSpec::linear(4, 4);
        let base = qgc::linear_estimate(&data, &spec).unwrap();
        let mut shifted = data.clone();
        for (y, x) in shifted.outcome.iter_mut().zip(&data.exposures[2]) {
            *y += delta * x;
        }
        let est = qgc::linear_estimate(&shifted, &spec).unwrap();
        prop_assert!((est.psi[0] - base.psi[0] - delta).abs() < 1e-9);
        prop_assert!((est.se[0] - base.se[0]).abs() < 1e-9);
        let fit = &est.underlying_fit;
        prop_assert_eq!(exposure_positions(fit).len(), 4);
    }

    #[test]
    fn logit_fit_matches_score_equations(seed in 0u64..1000) {
        let (design, z) = random_design(200, 3, seed);
        let mut rng = stream(seed + 1);
        let y: Vec<f64> = z.iter()
            .map(|&v| if rng.random::<f64>() < 1.0 / (1.0 + (-0.3 * v).exp()) { 1.0 } else { 0.0 })
            .collect();
        let fit = regress::fit(&design, &y, Link::Logit).unwrap();
        // The stopping rule may end on the deviance criterion with a score just
        // above 1e-8, so check the remaining Newton step instead.
        let score = DVector::from_vec(logistic_score(&design, &y, &fit));
        let p = fit.beta.len();
        let cov = DMatrix::from_fn(p, p, |i, j| fit.covariance[i * p + j]);
        prop_assert!((cov * score).amax() < 1e-8);
    }
}

