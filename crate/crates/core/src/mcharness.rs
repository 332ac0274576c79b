//! Monte Carlo replication engine and summary metrics.
//!
//! Replication `r` of a scenario draws everything from seeds derived from
//! `(base_seed, scenario id, r)`, so serial and parallel runs agree exactly.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qgc::{self, exposure_positions, QgcompOptions};
use crate::regress::ColumnRole;
use crate::rng::{mix_seed, stream, tag};
use crate::simgen::{generate_dataset, ScenarioSpec};
use crate::wqs::{self, WqsConfig};
use crate::Z_95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Qgcomp,
    Wqs,
    WqsNosplit,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Qgcomp => "qgcomp",
            Method::Wqs => "wqs",
            Method::WqsNosplit => "wqs_nosplit",
        }
    }

    fn stream_tag(self) -> u64 {
        match self {
            Method::Qgcomp => tag::QGCOMP,
            Method::Wqs => tag::WQS,
            Method::WqsNosplit => tag::WQS_NOSPLIT,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "qgcomp" | "q-gcomp" => Ok(Method::Qgcomp),
            "wqs" => Ok(Method::Wqs),
            "wqs_nosplit" | "wqs-nosplit" => Ok(Method::WqsNosplit),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub methods: Vec<Method>,
    pub reps: usize,
    pub base_seed: u64,
    pub qgcomp_bootstraps: usize,
    pub wqs_bootstraps: usize,
    /// Training share for [`Method::Wqs`]; the no-split method always uses 0.
    pub train_fraction: f64,
    /// Overrides the scenario's MSM degree.
    pub msm_degree: Option<usize>,
    /// Overrides whether WQS includes a squared index (default: only for
    /// non-linear scenarios).
    pub quadratic_index: Option<bool>,
    pub parallel: bool,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            methods: vec![Method::Qgcomp, Method::Wqs],
            reps: 1000,
            base_seed: 1,
            qgcomp_bootstraps: qgc::DEFAULT_BOOTSTRAPS,
            wqs_bootstraps: wqs::DEFAULT_BOOTSTRAPS,
            train_fraction: wqs::DEFAULT_TRAIN_FRACTION,
            msm_degree: None,
            quadratic_index: None,
            parallel: true,
        }
    }
}

/// One estimate of one mixture-effect component from one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub scenario: u8,
    pub method: Method,
    pub d: usize,
    pub n: usize,
    pub replication: usize,
    /// 1 for the linear mixture effect, 2 for the quadratic term.
    pub component: usize,
    pub truth: f64,
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub reject: bool,
    pub failed: bool,
    /// Realized Pearson correlation of X1 and X2 in this dataset.
    pub corr_x1x2: f64,
    /// Realized correlation of X1 and the hidden confounder, if any.
    pub corr_x1c: Option<f64>,
    pub error: String,
}

/// Seed for replication `r` of scenario `id`.
pub fn replication_seed(base_seed: u64, scenario_id: u8, r: usize) -> u64 {
    mix_seed(&[base_seed, scenario_id as u64, r as u64])
}

/// Wald decision at the 5% level.
pub fn wald_reject(estimate: f64, se: f64) -> bool {
    (estimate / se).abs() > Z_95
}

struct Components {
    estimates: Vec<(f64, f64)>,
}

fn run_method(
    method: Method,
    spec: &ScenarioSpec,
    data: &crate::data::MixtureData,
    config: &HarnessConfig,
    seed: u64,
) -> Result<Components> {
    match method {
        Method::Qgcomp => {
            let mut model = spec.qgcomp_model();
            if let Some(deg) = config.msm_degree {
                model = model.with_msm_degree(deg);
            }
            let est = qgc::qgcomp(
                data,
                &model,
                QgcompOptions {
                    bootstraps: config.qgcomp_bootstraps,
                    seed,
                    force_bootstrap: false,
                },
            )?;
            Ok(Components {
                estimates: est.psi.into_iter().zip(est.se).collect(),
            })
        }
        Method::Wqs | Method::WqsNosplit => {
            let cfg = WqsConfig {
                train_fraction: if method == Method::Wqs {
                    config.train_fraction
                } else {
                    0.0
                },
                n_bootstrap: config.wqs_bootstraps,
                quadratic_index: config.quadratic_index.unwrap_or(spec.is_nonlinear()),
                q: spec.q,
                seed,
                ..WqsConfig::default()
            };
            let est = wqs::wqs_fit(data, &cfg)?;
            let mut estimates = vec![(est.psi, est.se)];
            if let (Some(p2), Some(s2)) = (est.psi2, est.se2) {
                estimates.push((p2, s2));
            }
            Ok(Components { estimates })
        }
    }
}

fn components_expected(spec: &ScenarioSpec, method: Method, config: &HarnessConfig) -> usize {
    match method {
        Method::Qgcomp => config.msm_degree.unwrap_or(spec.qgcomp_model().msm_degree),
        _ => {
            if config.quadratic_index.unwrap_or(spec.is_nonlinear()) {
                2
            } else {
                1
            }
        }
    }
}

fn replicate(spec: &ScenarioSpec, config: &HarnessConfig, r: usize) -> Result<Vec<ReplicationResult>> {
    let seed_r = replication_seed(config.base_seed, spec.id, r);
    let ds = generate_dataset(spec, &mut stream(mix_seed(&[seed_r, tag::DATASET])))?;
    let data = ds.analysis_data();
    let corr = ds.corr_x1x2();
    let corr_c = ds.corr_x1c();
    let truths = [ds.truth.0, ds.truth.1];
    let mut rows = Vec::new();
    for &method in &config.methods {
        let seed = mix_seed(&[seed_r, method.stream_tag()]);
        let base = |component: usize| ReplicationResult {
            scenario: spec.id,
            method,
            d: spec.d,
            n: spec.n,
            replication: r,
            component,
            truth: truths.get(component - 1).copied().unwrap_or(0.0),
            estimate: f64::NAN,
            se: f64::NAN,
            ci_lower: f64::NAN,
            ci_upper: f64::NAN,
            reject: false,
            failed: true,
            corr_x1x2: corr,
            corr_x1c: corr_c,
            error: String::new(),
        };
        match run_method(method, spec, &data, config, seed) {
            Ok(c) => {
                for (k, (est, se)) in c.estimates.into_iter().enumerate() {
                    rows.push(ReplicationResult {
                        estimate: est,
                        se,
                        ci_lower: est - Z_95 * se,
                        ci_upper: est + Z_95 * se,
                        reject: wald_reject(est, se),
                        failed: false,
                        ..base(k + 1)
                    });
                }
            }
            Err(e) => {
                for k in 0..components_expected(spec, method, config) {
                    rows.push(ReplicationResult {
                        error: e.to_string(),
                        ..base(k + 1)
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Runs `config.reps` replications of `spec`, every requested method on the
/// same dataset. Estimator failures are kept as rows with `failed = true`.
/// Output is sorted by (method, replication, component).
pub fn run_replications(spec: &ScenarioSpec, config: &HarnessConfig) -> Result<Vec<ReplicationResult>> {
    spec.validate()?;
    if config.reps == 0 {
        return Err(Error::InvalidConfig("need at least one replication".into()));
    }
    if config.methods.is_empty() {
        return Err(Error::InvalidConfig("no methods requested".into()));
    }
    let per_rep: Vec<Vec<ReplicationResult>> = if config.parallel {
        (0..config.reps)
            .into_par_iter()
            .map(|r| replicate(spec, config, r))
            .collect::<Result<_>>()?
    } else {
        (0..config.reps)
            .map(|r| replicate(spec, config, r))
            .collect::<Result<_>>()?
    };
    let mut rows: Vec<ReplicationResult> = per_rep.into_iter().flatten().collect();
    rows.sort_by_key(|r| (r.method, r.replication, r.component));
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: u8,
    pub method: Method,
    pub d: usize,
    pub n: usize,
    pub component: usize,
    pub truth: f64,
    pub replications: usize,
    pub failed: usize,
    pub bias: f64,
    pub mcse: f64,
    pub rmvar: f64,
    pub coverage: f64,
    /// Rejection rate: power when the truth is non-null, type-I error otherwise.
    pub power: f64,
    /// Share of intervals lying entirely below the truth.
    pub miss_below: f64,
    /// Share of intervals lying entirely above the truth.
    pub miss_above: f64,
}

/// Bias, MCSE, RMVAR, coverage and rejection rate for one cell (one method,
/// one component). Successful rows are folded in replication order, so the
/// result does not depend on input order.
pub fn summarize_metrics(rows: &[ReplicationResult], truth: f64) -> Result<SummaryRow> {
    let first = rows.first().ok_or(Error::EmptyCell)?;
    let mut ok: Vec<&ReplicationResult> = rows.iter().filter(|r| !r.failed).collect();
    if ok.len() < 2 {
        return Err(Error::EmptyCell);
    }
    ok.sort_by(|a, b| {
        (a.replication, a.estimate.to_bits()).cmp(&(b.replication, b.estimate.to_bits()))
    });
    let k = ok.len() as f64;
    let mean = ok.iter().map(|r| r.estimate).sum::<f64>() / k;
    let mcse = (ok.iter().map(|r| (r.estimate - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    let rmvar = (ok.iter().map(|r| r.se * r.se).sum::<f64>() / k).sqrt();
    let share = |f: &dyn Fn(&ReplicationResult) -> bool| ok.iter().filter(|r| f(r)).count() as f64 / k;
    Ok(SummaryRow {
        scenario: first.scenario,
        method: first.method,
        d: first.d,
        n: first.n,
        component: first.component,
        truth,
        replications: ok.len(),
        failed: rows.len() - ok.len(),
        bias: mean - truth,
        mcse,
        rmvar,
        coverage: share(&|r| r.ci_lower <= truth && truth <= r.ci_upper),
        power: share(&|r| r.reject),
        miss_below: share(&|r| r.ci_upper < truth),
        miss_above: share(&|r| r.ci_lower > truth),
    })
}

/// Summaries for every (scenario, method, d, n, component) cell, sorted by
/// that key. Truth is taken from the rows themselves.
pub fn summarize_all(rows: &[ReplicationResult]) -> Result<Vec<SummaryRow>> {
    let mut cells: BTreeMap<(u8, Method, usize, usize, usize), Vec<ReplicationResult>> = BTreeMap::new();
    for r in rows {
        cells
            .entry((r.scenario, r.method, r.d, r.n, r.component))
            .or_default()
            .push(r.clone());
    }
    cells
        .into_values()
        .map(|cell| {
            let truth = cell[0].truth;
            summarize_metrics(&cell, truth)
        })
        .collect()
}

/// Confidence-interval widths (3.92 standard errors) of the X1 coefficient and
/// of the mixture effect from one replication of a correlation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiWidthRecord {
    pub rho: f64,
    pub replication: usize,
    pub corr_x1x2: f64,
    pub width_beta1: f64,
    pub width_psi: f64,
}

/// Quantile g-computation CI widths across a sweep of X1/X2 correlation
/// labels, holding the rest of `base` fixed.
pub fn ci_width_sweep(
    base: &ScenarioSpec,
    rhos: &[f64],
    reps: usize,
    base_seed: u64,
    parallel: bool,
) -> Result<Vec<CiWidthRecord>> {
    let model = crate::qgc::ModelSpec::linear(base.d, base.q);
    let one = |(rho, r): (f64, usize)| -> Result<CiWidthRecord> {
        let spec = ScenarioSpec {
            rho_x1x2: rho,
            ..base.clone()
        };
        let seed_r = replication_seed(base_seed, spec.id, r);
        let ds = generate_dataset(&spec, &mut stream(mix_seed(&[seed_r, rho.to_bits(), tag::DATASET])))?;
        let est = qgc::linear_estimate(&ds.analysis_data(), &model)?;
        let fit = &est.underlying_fit;
        let b1 = fit
            .position(ColumnRole::Exposure(0))
            .ok_or_else(|| Error::InvalidModel("missing X1 term".into()))?;
        debug_assert_eq!(exposure_positions(fit)[0], b1);
        Ok(CiWidthRecord {
            rho,
            replication: r,
            corr_x1x2: ds.corr_x1x2(),
            width_beta1: 2.0 * Z_95 * fit.std_error(b1),
            width_psi: 2.0 * Z_95 * est.se[0],
        })
    };
    let jobs: Vec<(f64, usize)> = rhos
        .iter()
        .flat_map(|&rho| (0..reps).map(move |r| (rho, r)))
        .collect();
    if parallel {
        jobs.into_par_iter().map(one).collect()
    } else {
        jobs.into_iter().map(one).collect()
    }
}
