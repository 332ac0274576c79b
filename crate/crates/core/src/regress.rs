//! Linear and logistic GLM fits with full coefficient covariance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Qr;

/// What a design column represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColumnRole {
    Intercept,
    /// Main term for exposure `j`.
    Exposure(usize),
    /// Product of exposures `j` and `k`; `j == k` is a square term.
    ExposureProduct(usize, usize),
    /// Non-exposure regressor.
    Covariate(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Logit,
}

/// Column-major design matrix with tagged columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    n: usize,
    values: Vec<f64>,
    roles: Vec<ColumnRole>,
    names: Vec<String>,
}

impl DesignMatrix {
    /// Builds a design from named, tagged columns. Exactly one column must be
    /// the intercept.
    pub fn from_columns(columns: Vec<(ColumnRole, String, Vec<f64>)>) -> Result<Self> {
        let n = columns.first().map_or(0, |c| c.2.len());
        let intercepts = columns
            .iter()
            .filter(|c| c.0 == ColumnRole::Intercept)
            .count();
        if intercepts != 1 {
            return Err(Error::InvalidModel(format!(
                "design needs exactly one intercept column, found {intercepts}"
            )));
        }
        let mut values = Vec::with_capacity(n * columns.len());
        let mut roles = Vec::with_capacity(columns.len());
        let mut names = Vec::with_capacity(columns.len());
        for (role, name, col) in columns {
            if col.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "column `{name}` has {} rows, expected {n}",
                    col.len()
                )));
            }
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { column: name, row });
            }
            values.extend_from_slice(&col);
            roles.push(role);
            names.push(name);
        }
        Ok(DesignMatrix {
            n,
            values,
            roles,
            names,
        })
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.roles.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.n..(j + 1) * self.n]
    }

    pub fn roles(&self) -> &[ColumnRole] {
        &self.roles
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.n + i]
    }

    /// Position of the first column with `role`.
    pub fn position(&self, role: ColumnRole) -> Option<usize> {
        self.roles.iter().position(|&r| r == role)
    }

    fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        let mut eta = vec![0.0; self.n];
        for (j, b) in beta.iter().enumerate() {
            if *b == 0.0 {
                continue;
            }
            for (e, x) in eta.iter_mut().zip(self.column(j)) {
                *e += b * x;
            }
        }
        eta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub beta: Vec<f64>,
    /// Row-major `p x p` coefficient covariance.
    pub covariance: Vec<f64>,
    /// `RSS / (n - p)` for the identity link; `None` for the logit link.
    pub residual_variance: Option<f64>,
    pub link: Link,
    pub n: usize,
    pub converged: bool,
    pub iterations: usize,
    pub roles: Vec<ColumnRole>,
    pub names: Vec<String>,
}

impl FitResult {
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn cov(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.p() + j]
    }

    pub fn std_error(&self, j: usize) -> f64 {
        self.cov(j, j).sqrt()
    }

    pub fn position(&self, role: ColumnRole) -> Option<usize> {
        self.roles.iter().position(|&r| r == role)
    }
}

fn check_shape(design: &DesignMatrix, y: &[f64]) -> Result<()> {
    let (n, p) = (design.nrows(), design.ncols());
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "outcome has {} rows, design has {n}",
            y.len()
        )));
    }
    if let Some(row) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            column: "outcome".into(),
            row,
        });
    }
    if n <= p {
        return Err(Error::NotEnoughRows { n, p });
    }
    Ok(())
}

fn factor_checked(values: Vec<f64>, design: &DesignMatrix) -> Result<Qr> {
    let qr = Qr::factor(values, design.nrows(), design.ncols());
    if let Some(index) = qr.deficient_column() {
        return Err(Error::RankDeficient {
            column: design.names[index].clone(),
            index,
        });
    }
    Ok(qr)
}

/// Ordinary least squares via Householder QR.
pub fn fit_linear(design: &DesignMatrix, y: &[f64]) -> Result<FitResult> {
    check_shape(design, y)?;
    let (n, p) = (design.nrows(), design.ncols());
    let qr = factor_checked(design.values.clone(), design)?;
    let beta = qr.solve(y);
    let fitted = design.linear_predictor(&beta);
    let rss: f64 = y.iter().zip(&fitted).map(|(a, b)| (a - b) * (a - b)).sum();
    let sigma2 = rss / (n - p) as f64;
    let covariance = qr
        .unscaled_covariance()
        .into_iter()
        .map(|c| c * sigma2)
        .collect();
    Ok(FitResult {
        beta,
        covariance,
        residual_variance: Some(sigma2),
        link: Link::Identity,
        n,
        converged: true,
        iterations: 1,
        roles: design.roles.clone(),
        names: design.names.clone(),
    })
}

/// OLS coefficients only, skipping covariance and residuals.
pub(crate) fn ols_coefficients(design: &DesignMatrix, y: &[f64]) -> Result<Vec<f64>> {
    check_shape(design, y)?;
    let qr = factor_checked(design.values.clone(), design)?;
    Ok(qr.solve(y))
}

#[inline]
pub(crate) fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Binomial deviance, tolerant of fractional responses in `[0, 1]`.
fn deviance(y: &[f64], eta: &[f64]) -> f64 {
    // -2 * sum[y*eta - log(1 + e^eta)] plus the saturated term, which is 0
    // for 0/1 data.
    let mut d = 0.0;
    for (&yi, &e) in y.iter().zip(eta) {
        let log1pexp = if e > 0.0 {
            e + (-e).exp().ln_1p()
        } else {
            e.exp().ln_1p()
        };
        d += log1pexp - yi * e;
        if yi > 0.0 && yi < 1.0 {
            d += yi * yi.ln() + (1.0 - yi) * (1.0 - yi).ln();
        }
    }
    2.0 * d
}

/// Options for the logistic IRLS solver.
#[derive(Debug, Clone, Copy)]
pub struct LogisticOptions {
    pub max_iterations: usize,
    pub score_tolerance: f64,
    pub deviance_tolerance: f64,
    /// Coefficients past this magnitude before convergence signal separation.
    pub separation_limit: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            max_iterations: 50,
            score_tolerance: 1e-8,
            deviance_tolerance: 1e-10,
            separation_limit: 30.0,
        }
    }
}

/// Logistic regression by iteratively reweighted least squares.
pub fn fit_logistic(design: &DesignMatrix, y: &[f64]) -> Result<FitResult> {
    fit_logistic_with(design, y, LogisticOptions::default())
}

pub fn fit_logistic_with(
    design: &DesignMatrix,
    y: &[f64],
    opts: LogisticOptions,
) -> Result<FitResult> {
    check_shape(design, y)?;
    if let Some(row) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::NonBinaryOutcome { row, value: y[row] });
    }
    irls(design, y, opts)
}

fn weighted_copy(design: &DesignMatrix, sqrt_w: &[f64]) -> Vec<f64> {
    let mut values = design.values.clone();
    for col in values.chunks_exact_mut(design.n) {
        for (x, s) in col.iter_mut().zip(sqrt_w) {
            *x *= s;
        }
    }
    values
}

fn max_abs_score(design: &DesignMatrix, y: &[f64], mu: &[f64]) -> f64 {
    (0..design.ncols())
        .map(|j| {
            design
                .column(j)
                .iter()
                .zip(y.iter().zip(mu))
                .map(|(x, (yi, m))| x * (yi - m))
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max)
}

fn irls(design: &DesignMatrix, y: &[f64], opts: LogisticOptions) -> Result<FitResult> {
    let (n, p) = (design.nrows(), design.ncols());
    let mut beta = vec![0.0; p];
    let mut eta = vec![0.0; n];
    let mut dev = deviance(y, &eta);
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=opts.max_iterations {
        iterations = iter;
        let mu: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
        if max_abs_score(design, y, &mu) < opts.score_tolerance {
            converged = true;
            break;
        }
        let w: Vec<f64> = mu.iter().map(|m| (m * (1.0 - m)).max(1e-300)).collect();
        let sqrt_w: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
        let z: Vec<f64> = (0..n)
            .map(|i| sqrt_w[i] * (eta[i] + (y[i] - mu[i]) / w[i]))
            .collect();
        let qr = factor_checked(weighted_copy(design, &sqrt_w), design)?;
        let target = qr.solve(&z);

        // Step halving while the deviance goes up.
        let mut step = 1.0;
        let (mut new_beta, mut new_eta, mut new_dev);
        loop {
            new_beta = beta
                .iter()
                .zip(&target)
                .map(|(b, t)| b + step * (t - b))
                .collect::<Vec<_>>();
            new_eta = design.linear_predictor(&new_beta);
            new_dev = deviance(y, &new_eta);
            if new_dev <= dev * (1.0 + 1e-12) || step < 1e-6 {
                break;
            }
            step *= 0.5;
        }
        let rel_change = (dev - new_dev).abs() / (new_dev.abs() + 0.1);
        beta = new_beta;
        eta = new_eta;
        dev = new_dev;

        if rel_change < opts.deviance_tolerance {
            converged = true;
            break;
        }
        if let Some(j) = beta.iter().position(|b| b.abs() > opts.separation_limit) {
            return Err(Error::QuasiSeparation {
                column: design.names[j].clone(),
                limit: opts.separation_limit,
            });
        }
    }
    if !converged {
        return Err(Error::NotConverged { iterations });
    }
    if let Some(j) = beta.iter().position(|b| b.abs() > opts.separation_limit) {
        return Err(Error::QuasiSeparation {
            column: design.names[j].clone(),
            limit: opts.separation_limit,
        });
    }

    let mu: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
    let sqrt_w: Vec<f64> = mu.iter().map(|m| (m * (1.0 - m)).sqrt()).collect();
    let qr = factor_checked(weighted_copy(design, &sqrt_w), design)?;
    Ok(FitResult {
        beta,
        covariance: qr.unscaled_covariance(),
        residual_variance: None,
        link: Link::Logit,
        n,
        converged,
        iterations,
        roles: design.roles.clone(),
        names: design.names.clone(),
    })
}

/// Fits with the estimator matching `link`.
pub fn fit(design: &DesignMatrix, y: &[f64], link: Link) -> Result<FitResult> {
    match link {
        Link::Identity => fit_linear(design, y),
        Link::Logit => fit_logistic(design, y),
    }
}

/// Mean response at each design row: the linear predictor for the identity
/// link, its expit for the logit link.
pub fn predict(fit: &FitResult, design: &DesignMatrix) -> Result<Vec<f64>> {
    if design.ncols() != fit.p() || design.roles() != fit.roles.as_slice() {
        return Err(Error::DimensionMismatch(format!(
            "fit has {} coefficients with roles {:?}, design has {} columns with roles {:?}",
            fit.p(),
            fit.roles,
            design.ncols(),
            design.roles()
        )));
    }
    let eta = design.linear_predictor(&fit.beta);
    Ok(match fit.link {
        Link::Identity => eta,
        Link::Logit => eta.into_iter().map(expit).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(cols: &[&[f64]]) -> DesignMatrix {
        let mut v = Vec::new();
        for (j, c) in cols.iter().enumerate() {
            let role = if j == 0 {
                ColumnRole::Intercept
            } else {
                ColumnRole::Exposure(j - 1)
            };
            v.push((role, format!("c{j}"), c.to_vec()));
        }
        DesignMatrix::from_columns(v).unwrap()
    }

    #[test]
    fn constant_outcome_fits_exactly() {
        let d = design(&[&[1.0, 1.0, 1.0]]);
        let f = fit_linear(&d, &[2.0, 2.0, 2.0]).unwrap();
        assert!((f.beta[0] - 2.0).abs() < 1e-14);
        assert!(f.residual_variance.unwrap().abs() < 1e-28);
    }

    #[test]
    fn perfect_line() {
        let d = design(&[&[1.0; 4], &[0.0, 1.0, 2.0, 3.0]]);
        let f = fit_linear(&d, &[1.0, 3.0, 5.0, 7.0]).unwrap();
        assert!((f.beta[0] - 1.0).abs() < 1e-13);
        assert!((f.beta[1] - 2.0).abs() < 1e-13);
    }

    #[test]
    fn reports_collinear_column_by_name() {
        let d = DesignMatrix::from_columns(vec![
            (ColumnRole::Intercept, "(Intercept)".into(), vec![1.0; 5]),
            (ColumnRole::Exposure(0), "lead".into(), vec![0.0, 1.0, 2.0, 3.0, 1.0]),
            (ColumnRole::Exposure(1), "zinc".into(), vec![2.0; 5]),
        ])
        .unwrap();
        let err = fit_linear(&d, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap_err();
        assert_eq!(
            err,
            Error::RankDeficient {
                column: "zinc".into(),
                index: 2
            }
        );
    }

    #[test]
    fn too_few_rows() {
        let d = design(&[&[1.0, 1.0], &[0.0, 1.0]]);
        assert_eq!(
            fit_linear(&d, &[1.0, 2.0]).unwrap_err(),
            Error::NotEnoughRows { n: 2, p: 2 }
        );
    }

    #[test]
    fn design_requires_single_intercept() {
        let r = DesignMatrix::from_columns(vec![(ColumnRole::Covariate(0), "z".into(), vec![1.0])]);
        assert!(matches!(r, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn logistic_intercept_is_logit_of_mean() {
        let d = design(&[&[1.0; 8]]);
        let y = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let f = fit_logistic(&d, &y).unwrap();
        assert!((f.beta[0] - (1.0f64 / 3.0).ln()).abs() < 1e-9);
        // var = 1 / (n p (1-p))
        assert!((f.cov(0, 0) - 1.0 / (8.0 * 0.25 * 0.75)).abs() < 1e-9);
    }

    #[test]
    fn logistic_slope_is_log_odds_ratio() {
        // a=30 exposed cases, b=10 exposed controls, c=15 unexposed cases, d=45
        let (a, b, c, dd) = (30, 10, 15, 45);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (xv, yv, count) in [(1.0, 1.0, a), (1.0, 0.0, b), (0.0, 1.0, c), (0.0, 0.0, dd)] {
            for _ in 0..count {
                x.push(xv);
                y.push(yv);
            }
        }
        let d = design(&[&vec![1.0; x.len()], &x]);
        let f = fit_logistic(&d, &y).unwrap();
        let want = ((a * dd) as f64 / (b * c) as f64).ln();
        assert!((f.beta[1] - want).abs() < 1e-9, "{} vs {want}", f.beta[1]);
        let se_want = (1.0 / a as f64 + 1.0 / b as f64 + 1.0 / c as f64 + 1.0 / dd as f64).sqrt();
        assert!((f.std_error(1) - se_want).abs() < 1e-8);
    }

    #[test]
    fn separated_data_is_flagged() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let d = design(&[&[1.0; 6], &x]);
        assert!(matches!(
            fit_logistic(&d, &y),
            Err(Error::QuasiSeparation { .. })
        ));
    }

    #[test]
    fn logistic_rejects_non_binary() {
        let d = design(&[&[1.0; 3]]);
        assert!(matches!(
            fit_logistic(&d, &[0.0, 0.5, 1.0]),
            Err(Error::NonBinaryOutcome { row: 1, .. })
        ));
    }

    #[test]
    fn predictions_for_zero_coefficients() {
        let d = design(&[&[1.0; 3], &[-5.0, 0.0, 7.0]]);
        let mut f = fit_linear(&d, &[1.0, 2.0, 4.0]).unwrap();
        f.beta = vec![0.0, 0.0];
        assert_eq!(predict(&f, &d).unwrap(), vec![0.0; 3]);
        f.link = Link::Logit;
        assert_eq!(predict(&f, &d).unwrap(), vec![0.5; 3]);
    }

    #[test]
    fn fitted_residuals_sum_to_zero() {
        let x = [0.0, 3.0, 1.0, 2.0, 2.0, 0.0];
        let y = [1.2, 3.3, 0.7, 2.9, 2.0, -0.4];
        let d = design(&[&[1.0; 6], &x]);
        let f = fit_linear(&d, &y).unwrap();
        let yhat = predict(&f, &d).unwrap();
        let s: f64 = y.iter().zip(&yhat).map(|(a, b)| a - b).sum();
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn logit_predictions_stay_in_unit_interval() {
        let d = design(&[&[1.0; 3], &[-800.0, 0.0, 800.0]]);
        let f = FitResult {
            beta: vec![0.3, 1.0],
            covariance: vec![0.0; 4],
            residual_variance: None,
            link: Link::Logit,
            n: 3,
            converged: true,
            iterations: 1,
            roles: d.roles().to_vec(),
            names: d.names().to_vec(),
        };
        let p = predict(&f, &d).unwrap();
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(p[1] > 0.0 && p[1] < 1.0);
    }

    #[test]
    fn predict_rejects_mismatched_design() {
        let d2 = design(&[&[1.0; 3], &[0.0, 1.0, 2.0]]);
        let d1 = design(&[&[1.0; 3]]);
        let f = fit_linear(&d2, &[0.0, 1.0, 2.5]).unwrap();
        assert!(matches!(predict(&f, &d1), Err(Error::DimensionMismatch(_))));
    }
}
