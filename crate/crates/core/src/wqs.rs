//! Weighted quantile sum (WQS) regression.
//!
//! Weights are estimated on a training split as the mean over bootstrap
//! resamples of the same-sign coefficients of an unconstrained linear fit,
//! normalized to sum to one. The index `S = sum_j w_j X_j` is then regressed
//! against the outcome on the validation split.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::MixtureData;
use crate::error::{Error, Result};
use crate::regress::{self, ColumnRole, DesignMatrix, FitResult};
use crate::rng::{mix_seed, stream, stream_for, tag};
use crate::Z_95;

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.4;
pub const DEFAULT_BOOTSTRAPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WqsConfig {
    /// Share of rows used to estimate weights; `0` estimates weights and the
    /// effect on the full data.
    pub train_fraction: f64,
    pub n_bootstrap: usize,
    pub direction: Direction,
    pub quadratic_index: bool,
    pub q: usize,
    pub seed: u64,
}

impl Default for WqsConfig {
    fn default() -> Self {
        WqsConfig {
            train_fraction: DEFAULT_TRAIN_FRACTION,
            n_bootstrap: DEFAULT_BOOTSTRAPS,
            direction: Direction::Positive,
            quadratic_index: false,
            q: 4,
            seed: 0,
        }
    }
}

impl WqsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.train_fraction) {
            return Err(Error::InvalidConfig(format!(
                "train fraction must be in [0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.n_bootstrap == 0 {
            return Err(Error::InvalidConfig("WQS needs at least one bootstrap".into()));
        }
        if self.q < 2 {
            return Err(Error::InvalidQuantiles(self.q));
        }
        Ok(())
    }
}

/// Bootstrap-averaged weights with resampling diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapWeights {
    pub weights: Vec<f64>,
    /// Resamples in which no coefficient had the allowed sign; each
    /// contributed the uniform vector.
    pub uniform_fallbacks: usize,
    pub failed_resamples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WqsEstimate {
    pub psi: f64,
    pub se: f64,
    /// Coefficient on `S^2` when the quadratic index is requested.
    pub psi2: Option<f64>,
    pub se2: Option<f64>,
    pub t_statistic: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub weights: Vec<f64>,
    /// Index value for every input row.
    pub index: Vec<f64>,
    pub train_rows: usize,
    pub validation_rows: usize,
    pub uniform_fallbacks: usize,
    pub failed_resamples: usize,
    pub validation_fit: FitResult,
}

/// Splits `0..n` into training and validation rows by simple random sampling
/// without replacement. A fraction of zero puts every row in both sets.
pub fn split_sample(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&train_fraction) {
        return Err(Error::InvalidConfig(format!(
            "train fraction must be in [0, 1), got {train_fraction}"
        )));
    }
    if train_fraction == 0.0 {
        let all: Vec<usize> = (0..n).collect();
        return Ok((all.clone(), all));
    }
    let n_train = (n as f64 * train_fraction).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(mix_seed(&[seed, tag::SPLIT])));
    let mut train = idx[..n_train].to_vec();
    let mut valid = idx[n_train..].to_vec();
    train.sort_unstable();
    valid.sort_unstable();
    Ok((train, valid))
}

fn exposure_design(data: &MixtureData) -> Result<DesignMatrix> {
    let n = data.nrows();
    let mut cols = vec![(ColumnRole::Intercept, "(Intercept)".to_string(), vec![1.0; n])];
    for (j, (name, col)) in data.exposure_names.iter().zip(&data.exposures).enumerate() {
        cols.push((ColumnRole::Exposure(j), name.clone(), col.clone()));
    }
    for (c, (name, col)) in data.covariate_names.iter().zip(&data.covariates).enumerate() {
        cols.push((ColumnRole::Covariate(c), name.clone(), col.clone()));
    }
    DesignMatrix::from_columns(cols)
}

/// Keeps coefficients of the allowed sign and scales them to sum to one.
/// Returns `None` when no coefficient qualifies.
pub fn signed_weights(coefs: &[f64], direction: Direction) -> Option<Vec<f64>> {
    let kept: Vec<f64> = coefs
        .iter()
        .map(|&b| match direction {
            Direction::Positive if b > 0.0 => b,
            Direction::Negative if b < 0.0 => -b,
            _ => 0.0,
        })
        .collect();
    let total: f64 = kept.iter().sum();
    (total > 0.0).then(|| kept.into_iter().map(|k| k / total).collect())
}

fn resample_weights(data: &MixtureData, direction: Direction) -> Result<Option<Vec<f64>>> {
    let design = exposure_design(data)?;
    let beta = regress::ols_coefficients(&design, &data.outcome)?;
    Ok(signed_weights(&beta[1..=data.n_exposures()], direction))
}

/// Mean of per-resample signed weights over `config.n_bootstrap` row
/// resamples of `train`, renormalized to the simplex.
pub fn bootstrap_weights(train: &MixtureData, config: &WqsConfig) -> Result<BootstrapWeights> {
    config.validate()?;
    let n = train.nrows();
    let d = train.n_exposures();
    let needed = d + train.n_covariates() + 1;
    if n <= needed {
        return Err(Error::NotEnoughRows { n, p: needed });
    }
    let iterations = config.n_bootstrap;
    let budget = iterations.div_ceil(10);
    // (weights, or None for a uniform fallback; retries used; last error)
    type Outcome = (Option<Option<Vec<f64>>>, usize, Option<Error>);
    let outcomes: Vec<Outcome> = (0..iterations)
        .into_par_iter()
        .map(|b| {
            let mut last = None;
            for attempt in 0..=budget {
                let mut rng =
                    stream_for(&[config.seed, tag::BOOTSTRAP, b as u64, attempt as u64]);
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                match resample_weights(&train.select_rows(&rows), config.direction) {
                    Ok(w) => return (Some(w), attempt, None),
                    Err(e) => last = Some(e),
                }
            }
            (None, budget + 1, last)
        })
        .collect();

    let failed: usize = outcomes.iter().map(|o| o.1).sum();
    let mut sum = vec![0.0; d];
    let mut fallbacks = 0;
    let mut last_err = None;
    let mut completed = 0;
    for (w, _, err) in outcomes {
        match w {
            Some(Some(w)) => {
                sum.iter_mut().zip(&w).for_each(|(s, v)| *s += v);
                completed += 1;
            }
            Some(None) => {
                sum.iter_mut().for_each(|s| *s += 1.0 / d as f64);
                fallbacks += 1;
                completed += 1;
            }
            None => last_err = err,
        }
    }
    if failed > budget || completed < iterations {
        return Err(Error::BootstrapFailures {
            failed,
            budget,
            last: Box::new(last_err.unwrap_or(Error::EmptyCell)),
        });
    }
    let total: f64 = sum.iter().sum();
    Ok(BootstrapWeights {
        weights: sum.into_iter().map(|s| s / total).collect(),
        uniform_fallbacks: fallbacks,
        failed_resamples: failed,
    })
}

/// Index `S_i = sum_j w_j X_ji` for every row.
pub fn wqs_index(data: &MixtureData, weights: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; data.nrows()];
    for (col, w) in data.exposures.iter().zip(weights) {
        for (si, x) in s.iter_mut().zip(col) {
            *si += w * x;
        }
    }
    s
}

/// Full WQS fit: split, bootstrap weights on the training rows, then the
/// outcome regression on the index over the validation rows.
pub fn wqs_fit(data: &MixtureData, config: &WqsConfig) -> Result<WqsEstimate> {
    config.validate()?;
    data.check_quantized(config.q)?;
    let (train_idx, valid_idx) = split_sample(data.nrows(), config.train_fraction, config.seed)?;
    let train = data.select_rows(&train_idx);
    let boot = bootstrap_weights(&train, config)?;

    let index = wqs_index(data, &boot.weights);
    let s_valid: Vec<f64> = valid_idx.iter().map(|&i| index[i]).collect();
    let first = s_valid[0];
    if s_valid.iter().all(|&v| (v - first).abs() <= 1e-12 * (1.0 + first.abs())) {
        return Err(Error::DegenerateIndex);
    }
    let valid = data.select_rows(&valid_idx);
    let m = valid.nrows();
    let mut cols = vec![
        (ColumnRole::Intercept, "(Intercept)".to_string(), vec![1.0; m]),
        (ColumnRole::Exposure(0), "wqs".to_string(), s_valid.clone()),
    ];
    if config.quadratic_index {
        cols.push((
            ColumnRole::ExposureProduct(0, 0),
            "wqs^2".to_string(),
            s_valid.iter().map(|s| s * s).collect(),
        ));
    }
    for (c, (name, col)) in valid.covariate_names.iter().zip(&valid.covariates).enumerate() {
        cols.push((ColumnRole::Covariate(c), name.clone(), col.clone()));
    }
    let fit = regress::fit_linear(&DesignMatrix::from_columns(cols)?, &valid.outcome)?;
    let psi = fit.beta[1];
    let se = fit.std_error(1);
    let (psi2, se2) = if config.quadratic_index {
        (Some(fit.beta[2]), Some(fit.std_error(2)))
    } else {
        (None, None)
    };
    Ok(WqsEstimate {
        psi,
        se,
        psi2,
        se2,
        t_statistic: psi / se,
        ci_lower: psi - Z_95 * se,
        ci_upper: psi + Z_95 * se,
        weights: boot.weights,
        index,
        train_rows: train_idx.len(),
        validation_rows: valid_idx.len(),
        uniform_fallbacks: boot.uniform_fallbacks,
        failed_resamples: boot.failed_resamples,
        validation_fit: fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qgc::{psi_linear, ModelSpec};

    fn grid(betas: &[f64], reps: usize, noise: impl Fn(usize) -> f64) -> MixtureData {
        let d = betas.len();
        let total = 4usize.pow(d as u32);
        let mut cols = vec![Vec::new(); d];
        let mut y = Vec::new();
        for r in 0..total * reps {
            let mut code = r % total;
            let mut lin = 1.0;
            for j in 0..d {
                let x = (code % 4) as f64;
                code /= 4;
                cols[j].push(x);
                lin += betas[j] * x;
            }
            y.push(lin + noise(r));
        }
        MixtureData::from_exposures(cols, y).unwrap()
    }

    #[test]
    fn default_split_sizes() {
        let (train, valid) = split_sample(500, 0.4, 3).unwrap();
        assert_eq!(train.len(), 200);
        assert_eq!(valid.len(), 300);
        let mut all: Vec<usize> = train.iter().chain(&valid).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..500).collect::<Vec<_>>());
        assert_eq!(split_sample(500, 0.4, 3).unwrap(), (train, valid));
        assert_ne!(split_sample(500, 0.4, 4).unwrap().0, split_sample(500, 0.4, 3).unwrap().0);
    }

    #[test]
    fn zero_fraction_uses_all_rows_twice() {
        let (train, valid) = split_sample(500, 0.0, 1).unwrap();
        assert_eq!(train.len(), 500);
        assert_eq!(train, valid);
        assert!(split_sample(10, 1.0, 1).is_err());
    }

    #[test]
    fn signed_weight_normalization() {
        let w = signed_weights(&[2.5, 1.25, 0.75, 0.5], Direction::Positive).unwrap();
        for (g, want) in w.iter().zip([0.5, 0.25, 0.15, 0.1]) {
            assert!((g - want).abs() < 1e-15);
        }
        assert_eq!(signed_weights(&[0.25, -0.25], Direction::Positive).unwrap(), vec![1.0, 0.0]);
        assert_eq!(signed_weights(&[0.25, -0.25], Direction::Negative).unwrap(), vec![0.0, 1.0]);
        assert_eq!(signed_weights(&[-1.0, -2.0], Direction::Positive), None);
    }

    #[test]
    fn single_noise_free_bootstrap_recovers_coefficient_shares() {
        let data = grid(&[2.5, 1.25, 0.75, 0.5], 2, |_| 0.0);
        let cfg = WqsConfig {
            n_bootstrap: 1,
            train_fraction: 0.0,
            seed: 9,
            ..WqsConfig::default()
        };
        let w = bootstrap_weights(&data, &cfg).unwrap();
        for (g, want) in w.weights.iter().zip([0.5, 0.25, 0.15, 0.1]) {
            assert!((g - want).abs() < 1e-12, "{:?}", w.weights);
        }
    }

    #[test]
    fn all_negative_resamples_fall_back_to_uniform() {
        let data = grid(&[-0.5, -0.25], 4, |r| 0.01 * ((r * 31 % 17) as f64 - 8.0));
        let cfg = WqsConfig {
            n_bootstrap: 5,
            ..WqsConfig::default()
        };
        let w = bootstrap_weights(&data, &cfg).unwrap();
        assert_eq!(w.uniform_fallbacks, 5);
        assert_eq!(w.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn no_split_single_bootstrap_matches_coefficient_sum() {
        let betas = [0.9, 0.4, 0.2];
        let data = grid(&betas, 3, |_| 0.0);
        let cfg = WqsConfig {
            n_bootstrap: 1,
            train_fraction: 0.0,
            ..WqsConfig::default()
        };
        let est = wqs_fit(&data, &cfg).unwrap();
        let spec = ModelSpec::linear(3, 4);
        let fit = regress::fit_linear(&spec.design(&data, None).unwrap(), &data.outcome).unwrap();
        let (psi, _) = psi_linear(&fit, &[1, 2, 3]).unwrap();
        assert!((est.psi - psi).abs() < 1e-10, "{} vs {psi}", est.psi);
        assert!((est.psi - 1.5).abs() < 1e-10);
    }

    #[test]
    fn single_exposure_gets_full_weight_and_ols_slope() {
        let data = grid(&[0.3], 30, |r| ((r * 7919) % 23) as f64 / 23.0 - 0.5);
        let cfg = WqsConfig {
            n_bootstrap: 10,
            seed: 2,
            ..WqsConfig::default()
        };
        let est = wqs_fit(&data, &cfg).unwrap();
        assert_eq!(est.weights, vec![1.0]);
        let (_, valid) = split_sample(data.nrows(), 0.4, 2).unwrap();
        let v = data.select_rows(&valid);
        let spec = ModelSpec::linear(1, 4);
        let fit = regress::fit_linear(&spec.design(&v, None).unwrap(), &v.outcome).unwrap();
        assert!((est.psi - fit.beta[1]).abs() < 1e-12);
        assert_eq!(est.validation_rows, valid.len());
    }

    #[test]
    fn weights_stay_on_simplex_and_index_in_range() {
        let data = grid(&[0.3, -0.2, 0.05], 6, |r| (r as f64 * 0.37).sin());
        let est = wqs_fit(&data, &WqsConfig::default()).unwrap();
        assert!(est.weights.iter().all(|&w| w >= 0.0));
        assert!((est.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(est.index.iter().all(|&s| (0.0..=3.0 + 1e-12).contains(&s)));
    }

    #[test]
    fn flipping_outcome_and_direction_negates_psi() {
        let data = grid(&[0.3, -0.2, 0.05], 6, |r| (r as f64 * 0.37).sin());
        let pos = wqs_fit(&data, &WqsConfig { seed: 8, ..WqsConfig::default() }).unwrap();
        let neg = wqs_fit(
            &data.negated_outcome(),
            &WqsConfig {
                seed: 8,
                direction: Direction::Negative,
                ..WqsConfig::default()
            },
        )
        .unwrap();
        assert_eq!(pos.weights, neg.weights);
        assert!((pos.psi + neg.psi).abs() < 1e-12);
    }

    #[test]
    fn quadratic_index_reports_second_coefficient() {
        let data = grid(&[0.3, 0.2], 20, |r| (r as f64 * 1.7).cos());
        let cfg = WqsConfig {
            quadratic_index: true,
            ..WqsConfig::default()
        };
        let est = wqs_fit(&data, &cfg).unwrap();
        assert!(est.psi2.is_some() && est.se2.unwrap() > 0.0);
    }

    #[test]
    fn constant_exposures_are_rejected() {
        let n = 40;
        let data = MixtureData::from_exposures(
            vec![vec![2.0; n]],
            (0..n).map(|i| i as f64).collect(),
        )
        .unwrap();
        let err = wqs_fit(&data, &WqsConfig::default()).unwrap_err();
        assert!(matches!(err, Error::BootstrapFailures { .. } | Error::DegenerateIndex));
    }
}
