//! Persisted row layouts for replications and summaries.
//!
//! Column order is fixed by field order. Floats are written in shortest
//! round-trip form, so `report` recomputes summaries bit for bit.

use std::cmp::Ordering;
use std::path::Path;

use qgcomp::mcharness::{summarize_metrics, Method, ReplicationResult};
use qgcomp::simgen::ScenarioSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::output::{fmt4, markdown_table, Format};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub scenario: u8,
    pub beta1: f64,
    pub beta2: f64,
    pub rho_x1x2: f64,
    pub method: String,
    pub d: usize,
    pub n: usize,
    pub replication: usize,
    pub component: usize,
    pub truth: f64,
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub reject: bool,
    pub failed: bool,
    pub corr_x1x2: f64,
    pub corr_x1c: Option<f64>,
    pub error: String,
}

pub const REPLICATION_HEADER: &[&str] = &[
    "scenario", "beta1", "beta2", "rho_x1x2", "method", "d", "n", "replication", "component", "truth",
    "estimate", "se", "ci_lower", "ci_upper", "reject", "failed", "corr_x1x2", "corr_x1c", "error",
];

impl ReplicationRecord {
    pub fn new(spec: &ScenarioSpec, r: &ReplicationResult) -> Self {
        ReplicationRecord {
            scenario: r.scenario,
            beta1: spec.beta1,
            beta2: spec.beta2,
            rho_x1x2: spec.rho_x1x2,
            method: r.method.as_str().to_string(),
            d: r.d,
            n: r.n,
            replication: r.replication,
            component: r.component,
            truth: r.truth,
            estimate: r.estimate,
            se: r.se,
            ci_lower: r.ci_lower,
            ci_upper: r.ci_upper,
            reject: r.reject,
            failed: r.failed,
            corr_x1x2: r.corr_x1x2,
            corr_x1c: r.corr_x1c,
            error: r.error.clone(),
        }
    }

    fn method(&self) -> CliResult<Method> {
        self.method.parse().map_err(CliError::from)
    }

    fn to_result(&self) -> CliResult<ReplicationResult> {
        Ok(ReplicationResult {
            scenario: self.scenario,
            method: self.method()?,
            d: self.d,
            n: self.n,
            replication: self.replication,
            component: self.component,
            truth: self.truth,
            estimate: self.estimate,
            se: self.se,
            ci_lower: self.ci_lower,
            ci_upper: self.ci_upper,
            reject: self.reject,
            failed: self.failed,
            corr_x1x2: self.corr_x1x2,
            corr_x1c: self.corr_x1c,
            error: self.error.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub scenario: u8,
    pub beta1: f64,
    pub beta2: f64,
    pub rho_x1x2: f64,
    pub method: String,
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
    pub power: f64,
    pub miss_below: f64,
    pub miss_above: f64,
}

pub const SUMMARY_HEADER: &[&str] = &[
    "scenario", "beta1", "beta2", "rho_x1x2", "method", "d", "n", "component", "truth", "replications",
    "failed", "bias", "mcse", "rmvar", "coverage", "power", "miss_below", "miss_above",
];

type CellKey = (u8, f64, f64, f64, Method, usize, usize, usize);

fn cmp_key(a: &CellKey, b: &CellKey) -> Ordering {
    a.0.cmp(&b.0)
        .then(a.1.total_cmp(&b.1))
        .then(a.2.total_cmp(&b.2))
        .then(a.3.total_cmp(&b.3))
        .then(a.4.cmp(&b.4))
        .then(a.5.cmp(&b.5))
        .then(a.6.cmp(&b.6))
        .then(a.7.cmp(&b.7))
}

/// One summary row per (scenario, coefficients, method, d, n, component)
/// cell, in key order. Cells with fewer than two successful replications get
/// NaN metrics; the second value counts them.
pub fn summarize(records: &[ReplicationRecord]) -> CliResult<(Vec<SummaryRecord>, usize)> {
    let mut keyed: Vec<(CellKey, &ReplicationRecord)> = records
        .iter()
        .map(|r| {
            let key = (r.scenario, r.beta1, r.beta2, r.rho_x1x2, r.method()?, r.d, r.n, r.component);
            Ok((key, r))
        })
        .collect::<CliResult<_>>()?;
    keyed.sort_by(|a, b| cmp_key(&a.0, &b.0).then(a.1.replication.cmp(&b.1.replication)));

    let mut out = Vec::new();
    let mut empty = 0;
    let mut start = 0;
    while start < keyed.len() {
        let key = keyed[start].0;
        let end = start + keyed[start..].iter().take_while(|(k, _)| cmp_key(k, &key).is_eq()).count();
        let cell: Vec<ReplicationResult> = keyed[start..end]
            .iter()
            .map(|(_, r)| r.to_result())
            .collect::<CliResult<_>>()?;
        let truth = cell[0].truth;
        let base = SummaryRecord {
            scenario: key.0,
            beta1: key.1,
            beta2: key.2,
            rho_x1x2: key.3,
            method: key.4.as_str().to_string(),
            d: key.5,
            n: key.6,
            component: key.7,
            truth,
            replications: 0,
            failed: cell.iter().filter(|r| r.failed).count(),
            bias: f64::NAN,
            mcse: f64::NAN,
            rmvar: f64::NAN,
            coverage: f64::NAN,
            power: f64::NAN,
            miss_below: f64::NAN,
            miss_above: f64::NAN,
        };
        out.push(match summarize_metrics(&cell, truth) {
            Ok(s) => SummaryRecord {
                replications: s.replications,
                failed: s.failed,
                bias: s.bias,
                mcse: s.mcse,
                rmvar: s.rmvar,
                coverage: s.coverage,
                power: s.power,
                miss_below: s.miss_below,
                miss_above: s.miss_above,
                ..base
            },
            Err(qgcomp::Error::EmptyCell) => {
                empty += 1;
                SummaryRecord {
                    replications: cell.len() - base.failed,
                    ..base
                }
            }
            Err(e) => return Err(e.into()),
        });
        start = end;
    }
    Ok((out, empty))
}

pub fn render_summary(rows: &[SummaryRecord], format: Format) -> CliResult<Vec<u8>> {
    match format {
        Format::Csv => {
            if rows.is_empty() {
                Ok(format!("{}\n", SUMMARY_HEADER.join(",")).into_bytes())
            } else {
                crate::output::csv_bytes(rows)
            }
        }
        Format::Markdown => {
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.scenario.to_string(),
                        format!("{}", r.beta1),
                        format!("{}", r.beta2),
                        format!("{}", r.rho_x1x2),
                        r.method.clone(),
                        r.d.to_string(),
                        r.n.to_string(),
                        format!("psi{}", r.component),
                        fmt4(r.truth),
                        fmt4(r.bias),
                        fmt4(r.mcse),
                        fmt4(r.rmvar),
                        fmt4(r.coverage),
                        fmt4(r.power),
                        r.replications.to_string(),
                        r.failed.to_string(),
                    ]
                })
                .collect();
            let header = [
                "scenario", "beta1", "beta2", "rho", "method", "d", "n", "term", "truth", "bias", "MCSE",
                "RMVAR", "coverage", "power/type-I", "reps", "failed",
            ];
            Ok(markdown_table(&header, &body).into_bytes())
        }
    }
}

pub fn read_replications(path: &Path) -> CliResult<Vec<ReplicationRecord>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let rec: ReplicationRecord = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            CliError::data(format!("{}: line {line}: {e}", path.display()))
        })?;
        out.push(rec);
    }
    Ok(out)
}
