//! Quantile g-computation.
//!
//! The mixture effect is the change in the expected outcome when every
//! exposure is raised by one quantile at once. For a linear, additive
//! outcome model this is the sum of the exposure coefficients and its
//! variance follows from the coefficient covariance. Otherwise the
//! estimate comes from a marginal structural model (MSM) fitted to
//! predictions made with all exposures set to each quantile level in turn,
//! with bootstrap standard errors.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::MixtureData;
use crate::error::{Error, Result};
use crate::linalg;
use crate::regress::{self, expit, ColumnRole, DesignMatrix, FitResult, Link};
use crate::rng::{stream_for, tag};
use crate::Z_95;

pub const DEFAULT_BOOTSTRAPS: usize = 200;

/// One exposure term of the underlying outcome model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExposureTerm {
    Main(usize),
    Product(usize, usize),
    Square(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub exposure_terms: Vec<ExposureTerm>,
    /// Indices into the data's covariate columns.
    pub covariate_terms: Vec<usize>,
    pub msm_degree: usize,
    pub q: usize,
    pub link: Link,
}

impl ModelSpec {
    /// Main effects for `d` exposures, all covariates excluded, linear MSM.
    pub fn linear(d: usize, q: usize) -> Self {
        ModelSpec {
            exposure_terms: (0..d).map(ExposureTerm::Main).collect(),
            covariate_terms: Vec::new(),
            msm_degree: 1,
            q,
            link: Link::Identity,
        }
    }

    pub fn with_covariates(mut self, covariates: impl IntoIterator<Item = usize>) -> Self {
        self.covariate_terms = covariates.into_iter().collect();
        self
    }

    pub fn with_term(mut self, term: ExposureTerm) -> Self {
        self.exposure_terms.push(term);
        self
    }

    pub fn with_msm_degree(mut self, degree: usize) -> Self {
        self.msm_degree = degree;
        self
    }

    pub fn with_link(mut self, link: Link) -> Self {
        self.link = link;
        self
    }

    /// True when the model has only main exposure terms.
    pub fn is_additive(&self) -> bool {
        self.exposure_terms
            .iter()
            .all(|t| matches!(t, ExposureTerm::Main(_)))
    }

    /// Settings under which the closed-form sum of coefficients is the
    /// estimate and analytic variance applies.
    pub fn has_closed_form(&self) -> bool {
        self.is_additive() && self.msm_degree == 1 && self.link == Link::Identity
    }

    pub fn validate(&self, d: usize, n_covariates: usize) -> Result<()> {
        if self.q < 2 {
            return Err(Error::InvalidQuantiles(self.q));
        }
        if self.msm_degree == 0 {
            return Err(Error::InvalidModel("MSM degree must be at least 1".into()));
        }
        if self.msm_degree >= self.q {
            return Err(Error::InvalidModel(format!(
                "MSM degree {} is not identifiable from {} quantile levels",
                self.msm_degree, self.q
            )));
        }
        let mut seen = vec![0usize; d];
        for term in &self.exposure_terms {
            let refs = match *term {
                ExposureTerm::Main(j) | ExposureTerm::Square(j) => vec![j],
                ExposureTerm::Product(j, k) => vec![j, k],
            };
            if let Some(&bad) = refs.iter().find(|&&j| j >= d) {
                return Err(Error::InvalidModel(format!(
                    "term {term:?} references exposure {bad} but only {d} exist"
                )));
            }
            if let ExposureTerm::Main(j) = term {
                seen[*j] += 1;
            }
        }
        if let Some(j) = seen.iter().position(|&c| c != 1) {
            return Err(Error::InvalidModel(format!(
                "exposure {j} must have exactly one main term, found {}",
                seen[j]
            )));
        }
        if let Some(&c) = self.covariate_terms.iter().find(|&&c| c >= n_covariates) {
            return Err(Error::InvalidModel(format!(
                "covariate {c} requested but only {n_covariates} exist"
            )));
        }
        Ok(())
    }

    /// Underlying-model design. With `level = Some(l)` every exposure is set
    /// to score `l` for every row; covariates keep their observed values.
    pub fn design(&self, data: &MixtureData, level: Option<f64>) -> Result<DesignMatrix> {
        let n = data.nrows();
        let exposure = |j: usize| -> Vec<f64> {
            match level {
                Some(l) => vec![l; n],
                None => data.exposures[j].clone(),
            }
        };
        let mut cols = Vec::with_capacity(1 + self.exposure_terms.len() + self.covariate_terms.len());
        cols.push((ColumnRole::Intercept, "(Intercept)".to_string(), vec![1.0; n]));
        for term in &self.exposure_terms {
            let col = match *term {
                ExposureTerm::Main(j) => (
                    ColumnRole::Exposure(j),
                    data.exposure_names[j].clone(),
                    exposure(j),
                ),
                ExposureTerm::Product(j, k) => {
                    let (a, b) = (exposure(j), exposure(k));
                    (
                        ColumnRole::ExposureProduct(j, k),
                        format!("{}*{}", data.exposure_names[j], data.exposure_names[k]),
                        a.iter().zip(&b).map(|(x, y)| x * y).collect(),
                    )
                }
                ExposureTerm::Square(j) => (
                    ColumnRole::ExposureProduct(j, j),
                    format!("{}^2", data.exposure_names[j]),
                    exposure(j).iter().map(|x| x * x).collect(),
                ),
            };
            cols.push(col);
        }
        for &c in &self.covariate_terms {
            cols.push((
                ColumnRole::Covariate(c),
                data.covariate_names[c].clone(),
                data.covariates[c].clone(),
            ));
        }
        DesignMatrix::from_columns(cols)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VarianceMethod {
    Analytic,
    Bootstrap {
        iterations: usize,
        failed_resamples: usize,
    },
    /// Point estimate only.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureWeight {
    pub exposure: usize,
    pub name: String,
    pub weight: f64,
}

/// Exposure weights split by the sign of their coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightPartition {
    pub positive: Vec<ExposureWeight>,
    pub negative: Vec<ExposureWeight>,
    pub partial_effect_positive: f64,
    pub partial_effect_negative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureEstimate {
    /// `psi[0]` is the linear mixture effect, `psi[1]` the quadratic, ...
    pub psi: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    /// Present for linear, additive, identity-link models.
    pub weights: Option<WeightPartition>,
    pub underlying_fit: FitResult,
    pub variance_method: VarianceMethod,
}

impl MixtureEstimate {
    fn with_se(mut self, se: Vec<f64>, method: VarianceMethod) -> Self {
        self.ci_lower = self.psi.iter().zip(&se).map(|(p, s)| p - Z_95 * s).collect();
        self.ci_upper = self.psi.iter().zip(&se).map(|(p, s)| p + Z_95 * s).collect();
        self.se = se;
        self.variance_method = method;
        self
    }
}

/// Coefficient positions of the main exposure terms, in exposure order.
pub fn exposure_positions(fit: &FitResult) -> Vec<usize> {
    let mut pos: Vec<(usize, usize)> = fit
        .roles
        .iter()
        .enumerate()
        .filter_map(|(i, r)| match r {
            ColumnRole::Exposure(j) => Some((*j, i)),
            _ => None,
        })
        .collect();
    pos.sort_unstable();
    pos.into_iter().map(|(_, i)| i).collect()
}

/// Sum of the selected coefficients and the variance of that sum,
/// `1' S 1` over the selected block of the covariance.
pub fn psi_linear(fit: &FitResult, exposure_columns: &[usize]) -> Result<(f64, f64)> {
    let p = fit.p();
    if let Some(&index) = exposure_columns.iter().find(|&&i| i >= p) {
        return Err(Error::IndexOutOfRange { index, len: p });
    }
    let psi = exposure_columns.iter().map(|&i| fit.beta[i]).sum();
    let variance = exposure_columns
        .iter()
        .flat_map(|&i| exposure_columns.iter().map(move |&j| (i, j)))
        .map(|(i, j)| fit.cov(i, j))
        .sum();
    Ok((psi, variance))
}

/// Positive and negative weights: each coefficient's share of the partial
/// effect of its sign. Zero coefficients belong to neither group.
pub fn weights_partition(fit: &FitResult, exposure_columns: &[usize]) -> Result<WeightPartition> {
    if fit
        .roles
        .iter()
        .any(|r| matches!(r, ColumnRole::ExposureProduct(..)))
    {
        return Err(Error::WeightsUndefined);
    }
    let p = fit.p();
    if let Some(&index) = exposure_columns.iter().find(|&&i| i >= p) {
        return Err(Error::IndexOutOfRange { index, len: p });
    }
    let exposure_of = |i: usize| match fit.roles[i] {
        ColumnRole::Exposure(j) => j,
        _ => i,
    };
    let partial_pos: f64 = exposure_columns
        .iter()
        .map(|&i| fit.beta[i])
        .filter(|b| *b > 0.0)
        .sum();
    let partial_neg: f64 = exposure_columns
        .iter()
        .map(|&i| fit.beta[i])
        .filter(|b| *b < 0.0)
        .sum();
    let group = |keep: fn(f64) -> bool, total: f64| -> Vec<ExposureWeight> {
        exposure_columns
            .iter()
            .filter(|&&i| keep(fit.beta[i]))
            .map(|&i| ExposureWeight {
                exposure: exposure_of(i),
                name: fit.names[i].clone(),
                weight: fit.beta[i] / total,
            })
            .collect()
    };
    Ok(WeightPartition {
        positive: group(|b| b > 0.0, partial_pos),
        negative: group(|b| b < 0.0, partial_neg),
        partial_effect_positive: partial_pos,
        partial_effect_negative: partial_neg,
    })
}

fn check_inputs(data: &MixtureData, spec: &ModelSpec) -> Result<()> {
    spec.validate(data.n_exposures(), data.n_covariates())?;
    data.check_quantized(spec.q)
}

/// Polynomial MSM basis `(1, l, ..., l^degree)` for levels `0..q`, column-major.
fn msm_basis(q: usize, degree: usize) -> Vec<f64> {
    (0..=degree)
        .flat_map(|k| (0..q).map(move |l| (l as f64).powi(k as i32)))
        .collect()
}

/// Logistic MSM on level means. Stacking `n` identical pseudo-rows per level
/// gives the same score equations, so the means suffice.
fn logistic_msm(means: &[f64], degree: usize) -> Result<Vec<f64>> {
    let q = means.len();
    let p = degree + 1;
    let basis = msm_basis(q, degree);
    let mut theta = vec![0.0; p];
    for _ in 0..100 {
        let eta: Vec<f64> = (0..q)
            .map(|l| (0..p).map(|k| basis[k * q + l] * theta[k]).sum())
            .collect();
        let mu: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
        let grad = (0..p)
            .map(|k| (0..q).map(|l| basis[k * q + l] * (means[l] - mu[l])).sum::<f64>().abs())
            .fold(0.0, f64::max);
        if grad < 1e-12 {
            return Ok(theta);
        }
        let sw: Vec<f64> = mu.iter().map(|m| (m * (1.0 - m)).max(1e-300).sqrt()).collect();
        let mut wb = basis.clone();
        for col in wb.chunks_exact_mut(q) {
            col.iter_mut().zip(&sw).for_each(|(x, s)| *x *= s);
        }
        let z: Vec<f64> = (0..q)
            .map(|l| sw[l] * eta[l] + (means[l] - mu[l]) / sw[l])
            .collect();
        theta = linalg::lstsq(wb, q, p, &z).ok_or(Error::NotConverged { iterations: 0 })?;
        if theta.iter().any(|t| !t.is_finite() || t.abs() > 1e6) {
            return Err(Error::NotConverged { iterations: 0 });
        }
    }
    Err(Error::NotConverged { iterations: 100 })
}

/// Mean prediction under each joint intervention level `0..q`.
pub fn level_means(data: &MixtureData, spec: &ModelSpec, fit: &FitResult) -> Result<Vec<f64>> {
    (0..spec.q)
        .map(|l| {
            let design = spec.design(data, Some(l as f64))?;
            let pred = regress::predict(fit, &design)?;
            Ok(pred.iter().sum::<f64>() / pred.len() as f64)
        })
        .collect()
}

/// Point estimates of the MSM coefficients plus the underlying fit.
fn msm_point(data: &MixtureData, spec: &ModelSpec) -> Result<(Vec<f64>, FitResult)> {
    let design = spec.design(data, None)?;
    let fit = regress::fit(&design, &data.outcome, spec.link)?;
    let means = level_means(data, spec, &fit)?;
    let theta = match spec.link {
        Link::Identity => {
            linalg::lstsq(msm_basis(spec.q, spec.msm_degree), spec.q, spec.msm_degree + 1, &means)
                .ok_or_else(|| Error::InvalidModel("MSM basis is singular".into()))?
        }
        Link::Logit => logistic_msm(&means, spec.msm_degree)?,
    };
    Ok((theta[1..].to_vec(), fit))
}

fn attach_weights(spec: &ModelSpec, fit: &FitResult) -> Option<WeightPartition> {
    if spec.is_additive() && spec.link == Link::Identity {
        weights_partition(fit, &exposure_positions(fit)).ok()
    } else {
        None
    }
}

/// Runs the three-step g-computation: fit the underlying model, predict at
/// each joint quantile level, fit the polynomial MSM to those predictions.
///
/// For linear, additive, identity-link models with a linear MSM the analytic
/// standard error is attached; otherwise only point estimates are filled and
/// `variance_method` is `None` (see [`bootstrap_ci`]).
pub fn msm_psi(data: &MixtureData, spec: &ModelSpec) -> Result<MixtureEstimate> {
    check_inputs(data, spec)?;
    let (psi, fit) = msm_point(data, spec)?;
    let weights = attach_weights(spec, &fit);
    let k = psi.len();
    let est = MixtureEstimate {
        psi,
        se: vec![f64::NAN; k],
        ci_lower: vec![f64::NAN; k],
        ci_upper: vec![f64::NAN; k],
        weights,
        underlying_fit: fit,
        variance_method: VarianceMethod::None,
    };
    if spec.has_closed_form() {
        let (_, var) = psi_linear(&est.underlying_fit, &exposure_positions(&est.underlying_fit))?;
        Ok(est.with_se(vec![var.sqrt()], VarianceMethod::Analytic))
    } else {
        Ok(est)
    }
}

/// Closed-form estimate for linear, additive, identity-link models.
pub fn linear_estimate(data: &MixtureData, spec: &ModelSpec) -> Result<MixtureEstimate> {
    check_inputs(data, spec)?;
    if !spec.has_closed_form() {
        return Err(Error::InvalidModel(
            "closed-form estimate needs a linear, additive, identity-link model with a linear MSM"
                .into(),
        ));
    }
    let design = spec.design(data, None)?;
    let fit = regress::fit_linear(&design, &data.outcome)?;
    let (psi, var) = psi_linear(&fit, &exposure_positions(&fit))?;
    let weights = attach_weights(spec, &fit);
    Ok(MixtureEstimate {
        psi: vec![psi],
        se: Vec::new(),
        ci_lower: Vec::new(),
        ci_upper: Vec::new(),
        weights,
        underlying_fit: fit,
        variance_method: VarianceMethod::None,
    }
    .with_se(vec![var.sqrt()], VarianceMethod::Analytic))
}

/// Bootstrap samples of the MSM coefficients. Iteration `b` uses streams
/// derived from `(seed, b, attempt)` only, so results do not depend on
/// scheduling.
pub fn bootstrap_draws(
    data: &MixtureData,
    spec: &ModelSpec,
    iterations: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, usize)> {
    let n = data.nrows();
    let budget = iterations.div_ceil(10);
    let outcomes: Vec<(Option<Vec<f64>>, usize, Option<Error>)> = (0..iterations)
        .into_par_iter()
        .map(|b| {
            let mut last = None;
            for attempt in 0..=budget {
                let mut rng = stream_for(&[seed, tag::BOOTSTRAP, b as u64, attempt as u64]);
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                match msm_point(&data.select_rows(&rows), spec) {
                    Ok((psi, _)) => return (Some(psi), attempt, None),
                    Err(e) => last = Some(e),
                }
            }
            (None, budget + 1, last)
        })
        .collect();
    let failed: usize = outcomes.iter().map(|o| o.1).sum();
    let mut draws = Vec::with_capacity(iterations);
    let mut last_err = None;
    for (psi, _, err) in outcomes {
        match psi {
            Some(p) => draws.push(p),
            None => last_err = err,
        }
    }
    if failed > budget || draws.len() < iterations {
        let last = last_err.unwrap_or(Error::EmptyCell);
        return Err(Error::BootstrapFailures {
            failed,
            budget,
            last: Box::new(last),
        });
    }
    Ok((draws, failed))
}

/// Sample standard deviation (denominator `len - 1`).
pub(crate) fn sample_sd(values: &[f64]) -> f64 {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0)).sqrt()
}

/// Point estimate from the full data with nonparametric bootstrap standard
/// errors and Wald intervals.
pub fn bootstrap_ci(
    data: &MixtureData,
    spec: &ModelSpec,
    iterations: usize,
    seed: u64,
) -> Result<MixtureEstimate> {
    if iterations < 2 {
        return Err(Error::InvalidConfig(format!(
            "bootstrap needs at least 2 iterations, got {iterations}"
        )));
    }
    let point = msm_psi(data, spec)?;
    let (draws, failed) = bootstrap_draws(data, spec, iterations, seed)?;
    let se = (0..point.psi.len())
        .map(|k| sample_sd(&draws.iter().map(|d| d[k]).collect::<Vec<_>>()))
        .collect();
    Ok(point.with_se(
        se,
        VarianceMethod::Bootstrap {
            iterations,
            failed_resamples: failed,
        },
    ))
}

#[derive(Debug, Clone, Copy)]
pub struct QgcompOptions {
    pub bootstraps: usize,
    pub seed: u64,
    /// Use the bootstrap even when the analytic variance applies.
    pub force_bootstrap: bool,
}

impl Default for QgcompOptions {
    fn default() -> Self {
        QgcompOptions {
            bootstraps: DEFAULT_BOOTSTRAPS,
            seed: 0,
            force_bootstrap: false,
        }
    }
}

/// Quantile g-computation with the variance method picked from the model:
/// analytic for linear, additive, identity-link models, bootstrap otherwise.
pub fn qgcomp(data: &MixtureData, spec: &ModelSpec, opts: QgcompOptions) -> Result<MixtureEstimate> {
    if spec.has_closed_form() && !opts.force_bootstrap {
        linear_estimate(data, spec)
    } else {
        bootstrap_ci(data, spec, opts.bootstraps, opts.seed)
    }
}
