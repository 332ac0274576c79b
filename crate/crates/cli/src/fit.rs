use std::path::Path;

use qgcomp::mcharness::Method;
use qgcomp::qgc::{self, ModelSpec, QgcompOptions, VarianceMethod};
use qgcomp::quantize::quantize_matrix;
use qgcomp::regress::Link;
use qgcomp::rng::{mix_seed, tag};
use qgcomp::wqs::{self, WqsConfig};
use qgcomp::{MixtureData, Z_95};
use serde::Serialize;

use crate::args::FitConfig;
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, fmt4, json_bytes, markdown_table, write_atomic, write_csv, Format};

#[derive(Debug, Clone, Serialize)]
pub struct EstimateRecord {
    pub method: String,
    pub component: usize,
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub variance: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightRecord {
    pub method: String,
    pub exposure: String,
    /// `positive` or `negative` for qgcomp, `index` for WQS.
    pub group: String,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CutpointRecord {
    pub exposure: String,
    pub index: usize,
    pub cutpoint: f64,
}

#[derive(Debug, Serialize)]
struct PartialEffects {
    positive: f64,
    negative: f64,
}

#[derive(Debug, Serialize)]
struct FitReport {
    tool: &'static str,
    version: &'static str,
    input: String,
    rows: usize,
    q: usize,
    link: Link,
    outcome: String,
    exposures: Vec<String>,
    covariates: Vec<String>,
    seed: u64,
    estimates: Vec<EstimateRecord>,
    weights: Vec<WeightRecord>,
    qgcomp_partial_effects: Option<PartialEffects>,
    wqs_uniform_fallbacks: Option<usize>,
    cutpoints: Vec<CutpointRecord>,
}

/// Selected columns of a CSV file, parsed as numbers.
pub struct Table {
    pub columns: Vec<Vec<f64>>,
}

/// Reads `names` from a comma-separated file with a header row. Errors
/// carry the 1-based line number of the offending record.
pub fn read_columns(path: &Path, names: &[String]) -> CliResult<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| CliError::data(format!("{}: line 1: {e}", path.display())))?
        .clone();
    let idx: Vec<usize> = names
        .iter()
        .map(|name| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| CliError::data(format!("{}: no column named `{name}` in header", path.display())))
        })
        .collect::<CliResult<_>>()?;
    let mut columns = vec![Vec::new(); names.len()];
    let mut record = csv::StringRecord::new();
    loop {
        let more = reader.read_record(&mut record).map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            CliError::data(format!("{}: line {line}: {e}", path.display()))
        })?;
        if !more {
            break;
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        for ((col, &i), name) in columns.iter_mut().zip(&idx).zip(names) {
            let raw = record.get(i).unwrap_or("");
            let value: f64 = raw.parse().map_err(|_| {
                CliError::data(format!(
                    "{}: line {line}: column `{name}`: cannot parse `{raw}` as a number",
                    path.display()
                ))
            })?;
            if !value.is_finite() {
                return Err(CliError::data(format!(
                    "{}: line {line}: column `{name}`: value `{raw}` is not finite",
                    path.display()
                )));
            }
            col.push(value);
        }
    }
    Ok(Table { columns })
}

fn header_names(path: &Path) -> CliResult<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| CliError::data(format!("{}: line 1: {e}", path.display())))?;
    Ok(header.iter().map(str::to_string).collect())
}

fn variance_label(v: &VarianceMethod) -> String {
    match v {
        VarianceMethod::Analytic => "analytic".into(),
        VarianceMethod::Bootstrap { iterations, .. } => format!("bootstrap({iterations})"),
        VarianceMethod::None => "none".into(),
    }
}

pub fn run(cfg: &FitConfig) -> CliResult<()> {
    let exposures = if cfg.exposures.is_empty() {
        header_names(&cfg.input)?
            .into_iter()
            .filter(|h| *h != cfg.outcome && !cfg.covariates.contains(h))
            .collect()
    } else {
        cfg.exposures.clone()
    };
    if exposures.is_empty() {
        return Err(CliError::usage("no exposure columns selected"));
    }
    if let Some(dup) = exposures.iter().find(|e| **e == cfg.outcome || cfg.covariates.contains(e)) {
        return Err(CliError::usage(format!("column `{dup}` selected twice")));
    }

    let mut names = exposures.clone();
    names.extend(cfg.covariates.iter().cloned());
    names.push(cfg.outcome.clone());
    let mut table = read_columns(&cfg.input, &names)?;
    let outcome = table.columns.pop().expect("outcome column requested");
    let covariates = table.columns.split_off(exposures.len());
    let raw_exposures = table.columns;

    let quantized = quantize_matrix(&raw_exposures, &exposures, cfg.q)?;
    let data = MixtureData::new(
        exposures.clone(),
        quantized.scores_f64(),
        cfg.covariates.clone(),
        covariates,
        outcome,
    )?;

    let mut estimates = Vec::new();
    let mut weights = Vec::new();
    let mut partial = None;
    let mut fallbacks = None;
    for &method in &cfg.methods {
        match method {
            Method::Qgcomp => {
                let spec = ModelSpec::linear(exposures.len(), cfg.q)
                    .with_covariates(0..cfg.covariates.len())
                    .with_link(cfg.link)
                    .with_msm_degree(cfg.msm_degree);
                let est = qgc::qgcomp(
                    &data,
                    &spec,
                    QgcompOptions {
                        bootstraps: cfg.qgcomp_bootstraps,
                        seed: mix_seed(&[cfg.seed, tag::QGCOMP]),
                        force_bootstrap: false,
                    },
                )?;
                for k in 0..est.psi.len() {
                    estimates.push(EstimateRecord {
                        method: method.as_str().into(),
                        component: k + 1,
                        estimate: est.psi[k],
                        se: est.se[k],
                        ci_lower: est.ci_lower[k],
                        ci_upper: est.ci_upper[k],
                        variance: variance_label(&est.variance_method),
                    });
                }
                if let Some(w) = &est.weights {
                    for (group, list) in [("positive", &w.positive), ("negative", &w.negative)] {
                        weights.extend(list.iter().map(|e| WeightRecord {
                            method: method.as_str().into(),
                            exposure: e.name.clone(),
                            group: group.into(),
                            weight: e.weight,
                        }));
                    }
                    partial = Some(PartialEffects {
                        positive: w.partial_effect_positive,
                        negative: w.partial_effect_negative,
                    });
                }
            }
            Method::Wqs | Method::WqsNosplit => {
                let wcfg = WqsConfig {
                    train_fraction: if method == Method::Wqs { cfg.train_fraction } else { 0.0 },
                    n_bootstrap: cfg.wqs_bootstraps,
                    quadratic_index: cfg.quadratic_index,
                    q: cfg.q,
                    seed: mix_seed(&[cfg.seed, tag::WQS]),
                    ..WqsConfig::default()
                };
                let est = wqs::wqs_fit(&data, &wcfg)?;
                estimates.push(EstimateRecord {
                    method: method.as_str().into(),
                    component: 1,
                    estimate: est.psi,
                    se: est.se,
                    ci_lower: est.ci_lower,
                    ci_upper: est.ci_upper,
                    variance: "analytic".into(),
                });
                if let (Some(p2), Some(s2)) = (est.psi2, est.se2) {
                    estimates.push(EstimateRecord {
                        method: method.as_str().into(),
                        component: 2,
                        estimate: p2,
                        se: s2,
                        ci_lower: p2 - Z_95 * s2,
                        ci_upper: p2 + Z_95 * s2,
                        variance: "analytic".into(),
                    });
                }
                weights.extend(exposures.iter().zip(&est.weights).map(|(name, &w)| WeightRecord {
                    method: method.as_str().into(),
                    exposure: name.clone(),
                    group: "index".into(),
                    weight: w,
                }));
                fallbacks = Some(est.uniform_fallbacks);
            }
        }
    }

    let cutpoints: Vec<CutpointRecord> = exposures
        .iter()
        .zip(&quantized.cutpoints)
        .flat_map(|(name, cuts)| {
            cuts.iter().enumerate().map(move |(k, &c)| CutpointRecord {
                exposure: name.clone(),
                index: k + 1,
                cutpoint: c,
            })
        })
        .collect();

    for e in &estimates {
        println!(
            "{:<11} psi{} = {:.4} (se {:.4}, 95% CI {:.4} to {:.4})",
            e.method, e.component, e.estimate, e.se, e.ci_lower, e.ci_upper
        );
    }

    ensure_dir(&cfg.out)?;
    match cfg.format {
        Format::Csv => {
            write_csv(
                &cfg.out.join("estimates.csv"),
                &estimates,
                &["method", "component", "estimate", "se", "ci_lower", "ci_upper", "variance"],
            )?;
            write_csv(&cfg.out.join("weights.csv"), &weights, &["method", "exposure", "group", "weight"])?;
            write_csv(&cfg.out.join("cutpoints.csv"), &cutpoints, &["exposure", "index", "cutpoint"])?;
        }
        Format::Markdown => {
            write_atomic(&cfg.out.join("fit_report.md"), render_markdown(&estimates, &weights, &cutpoints).as_bytes())?;
        }
    }
    let report = FitReport {
        tool: "qgcomp",
        version: env!("CARGO_PKG_VERSION"),
        input: cfg.input.display().to_string(),
        rows: data.nrows(),
        q: cfg.q,
        link: cfg.link,
        outcome: cfg.outcome.clone(),
        exposures,
        covariates: cfg.covariates.clone(),
        seed: cfg.seed,
        estimates,
        weights,
        qgcomp_partial_effects: partial,
        wqs_uniform_fallbacks: fallbacks,
        cutpoints,
    };
    write_atomic(&cfg.out.join("fit.json"), &json_bytes(&report)?)?;
    Ok(())
}

fn render_markdown(estimates: &[EstimateRecord], weights: &[WeightRecord], cutpoints: &[CutpointRecord]) -> String {
    let est: Vec<Vec<String>> = estimates
        .iter()
        .map(|e| {
            vec![
                e.method.clone(),
                format!("psi{}", e.component),
                fmt4(e.estimate),
                fmt4(e.se),
                fmt4(e.ci_lower),
                fmt4(e.ci_upper),
                e.variance.clone(),
            ]
        })
        .collect();
    let w: Vec<Vec<String>> = weights
        .iter()
        .map(|w| vec![w.method.clone(), w.exposure.clone(), w.group.clone(), fmt4(w.weight)])
        .collect();
    let c: Vec<Vec<String>> = cutpoints
        .iter()
        .map(|c| vec![c.exposure.clone(), c.index.to_string(), format!("{}", c.cutpoint)])
        .collect();
    format!(
        "## Mixture effect\n\n{}\n## Weights\n\n{}\n## Cut points\n\n{}",
        markdown_table(&["method", "term", "estimate", "se", "ci_lower", "ci_upper", "variance"], &est),
        markdown_table(&["method", "exposure", "group", "weight"], &w),
        markdown_table(&["exposure", "k", "cutpoint"], &c),
    )
}
