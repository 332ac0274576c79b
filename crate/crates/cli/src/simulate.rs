use std::path::Path;

use qgcomp::mcharness::{ci_width_sweep, run_replications, CiWidthRecord, HarnessConfig, Method, ReplicationResult};
use qgcomp::simgen::ScenarioSpec;
use serde::Serialize;

use crate::args::SimulateConfig;
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, json_bytes, write_atomic, write_csv};
use crate::records::{render_summary, summarize, ReplicationRecord, SummaryRecord, REPLICATION_HEADER};

/// Correlation labels for the CI-width sweep.
const SWEEP_RHOS: [f64; 10] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Serialize)]
struct CellMeta {
    beta1: f64,
    beta2: f64,
    beta_11: f64,
    beta_12: f64,
    beta_c: f64,
    rho_x1x2: f64,
    rho_xc: f64,
    n: usize,
    d: usize,
    truth_psi1: f64,
    truth_psi2: f64,
    mean_corr_x1x2: f64,
    mean_corr_x1c: Option<f64>,
}

#[derive(Serialize)]
struct Metadata {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    scenario: u8,
    seed: u64,
    seed_derivation: &'static str,
    reps: usize,
    q: usize,
    methods: Vec<&'static str>,
    qgcomp_bootstraps: usize,
    wqs_bootstraps: usize,
    train_fraction: f64,
    msm_degree: Option<usize>,
    quadratic_index: Option<bool>,
    cells: Vec<CellMeta>,
    files: Vec<String>,
}

#[derive(Serialize)]
struct BiasRecord {
    scenario: u8,
    beta1: f64,
    beta2: f64,
    rho_x1x2: f64,
    method: String,
    d: usize,
    n: usize,
    replication: usize,
    component: usize,
    truth: f64,
    estimate: f64,
    bias: f64,
}

#[derive(Serialize)]
struct MeanBiasRecord {
    scenario: u8,
    method: String,
    d: usize,
    n: usize,
    truth: f64,
    bias: f64,
    mcse: f64,
    replications: usize,
}

/// Expands the scenario preset over every (beta2, rho, n, d) combination.
pub fn scenario_grid(cfg: &SimulateConfig) -> CliResult<Vec<ScenarioSpec>> {
    let beta2: Vec<Option<f64>> = if cfg.beta2.is_empty() { vec![None] } else { cfg.beta2.iter().copied().map(Some).collect() };
    let rho: Vec<Option<f64>> = if cfg.rho.is_empty() { vec![None] } else { cfg.rho.iter().copied().map(Some).collect() };
    let mut out = Vec::new();
    for b2 in &beta2 {
        for r in &rho {
            for &n in &cfg.ns {
                for &d in &cfg.ds {
                    let mut spec = ScenarioSpec::preset(cfg.scenario, n, d)?;
                    spec.q = cfg.q;
                    if let Some(b1) = cfg.beta1 {
                        spec.beta1 = b1;
                    }
                    if let Some(b2) = b2 {
                        spec.beta2 = *b2;
                    }
                    if let Some(r) = r {
                        spec.rho_x1x2 = *r;
                    }
                    spec.validate()?;
                    out.push(spec);
                }
            }
        }
    }
    Ok(out)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, k) = values.fold((0.0, 0usize), |(s, k), v| (s + v, k + 1));
    s / k as f64
}

fn cell_meta(spec: &ScenarioSpec, rows: &[ReplicationResult]) -> CellMeta {
    // One dataset per replication: read correlations off one method/component.
    let first = rows[0].method;
    let per_dataset: Vec<&ReplicationResult> = rows.iter().filter(|r| r.method == first && r.component == 1).collect();
    let (t1, t2) = spec.truth();
    CellMeta {
        beta1: spec.beta1,
        beta2: spec.beta2,
        beta_11: spec.beta_11,
        beta_12: spec.beta_12,
        beta_c: spec.beta_c,
        rho_x1x2: spec.rho_x1x2,
        rho_xc: spec.rho_xc,
        n: spec.n,
        d: spec.d,
        truth_psi1: t1,
        truth_psi2: t2,
        mean_corr_x1x2: mean(per_dataset.iter().map(|r| r.corr_x1x2)),
        mean_corr_x1c: per_dataset
            .iter()
            .map(|r| r.corr_x1c)
            .collect::<Option<Vec<f64>>>()
            .map(|v| mean(v.into_iter())),
    }
}

pub fn run(cfg: &SimulateConfig) -> CliResult<()> {
    let grid = scenario_grid(cfg)?;
    ensure_dir(&cfg.out)?;
    let harness = HarnessConfig {
        methods: cfg.methods.clone(),
        reps: cfg.reps,
        base_seed: cfg.seed,
        qgcomp_bootstraps: cfg.qgcomp_bootstraps,
        wqs_bootstraps: cfg.wqs_bootstraps,
        train_fraction: cfg.train_fraction,
        msm_degree: cfg.msm_degree,
        quadratic_index: cfg.quadratic_index,
        parallel: true,
    };

    let mut records = Vec::new();
    let mut cells = Vec::new();
    for spec in &grid {
        eprintln!(
            "scenario {} n={} d={} beta2={} rho={}: {} replications",
            spec.id, spec.n, spec.d, spec.beta2, spec.rho_x1x2, cfg.reps
        );
        let rows = run_replications(spec, &harness)?;
        cells.push(cell_meta(spec, &rows));
        records.extend(rows.iter().map(|r| ReplicationRecord::new(spec, r)));
    }
    let (summary, empty_cells) = summarize(&records)?;

    let mut files = vec!["replications.csv".to_string(), format!("summary.{}", cfg.format.extension())];
    write_csv(&cfg.out.join("replications.csv"), &records, REPLICATION_HEADER)?;
    write_atomic(&cfg.out.join(&files[1]), &render_summary(&summary, cfg.format)?)?;
    if cfg.emit_figure_data {
        files.extend(write_figure_data(cfg, &records, &summary)?);
    }
    files.push("metadata.json".into());

    let meta = Metadata {
        tool: "qgcomp",
        version: env!("CARGO_PKG_VERSION"),
        command: "simulate",
        scenario: cfg.scenario,
        seed: cfg.seed,
        seed_derivation: "splitmix64 fold of (seed, scenario, replication), then per-purpose stream tags",
        reps: cfg.reps,
        q: cfg.q,
        methods: cfg.methods.iter().map(|m| m.as_str()).collect(),
        qgcomp_bootstraps: cfg.qgcomp_bootstraps,
        wqs_bootstraps: cfg.wqs_bootstraps,
        train_fraction: cfg.train_fraction,
        msm_degree: cfg.msm_degree,
        quadratic_index: cfg.quadratic_index,
        cells,
        files,
    };
    write_atomic(&cfg.out.join("metadata.json"), &json_bytes(&meta)?)?;
    eprintln!("wrote results to {}", cfg.out.display());

    if empty_cells > 0 {
        return Err(CliError::numerical(format!(
            "{empty_cells} cell(s) had fewer than two successful replications; see {}",
            cfg.out.join("replications.csv").display()
        )));
    }
    Ok(())
}

fn write_figure_data(cfg: &SimulateConfig, records: &[ReplicationRecord], summary: &[SummaryRecord]) -> CliResult<Vec<String>> {
    let mut files = Vec::new();
    let bias: Vec<BiasRecord> = records
        .iter()
        .filter(|r| !r.failed)
        .map(|r| BiasRecord {
            scenario: r.scenario,
            beta1: r.beta1,
            beta2: r.beta2,
            rho_x1x2: r.rho_x1x2,
            method: r.method.clone(),
            d: r.d,
            n: r.n,
            replication: r.replication,
            component: r.component,
            truth: r.truth,
            estimate: r.estimate,
            bias: r.estimate - r.truth,
        })
        .collect();
    let name = "figure_bias_long.csv";
    write_csv(
        &cfg.out.join(name),
        &bias,
        &["scenario", "beta1", "beta2", "rho_x1x2", "method", "d", "n", "replication", "component", "truth", "estimate", "bias"],
    )?;
    files.push(name.to_string());

    if cfg.scenario == 5 {
        files.push(write_ci_width_sweep(cfg)?);
    }
    if cfg.scenario == 6 {
        let rows: Vec<MeanBiasRecord> = summary
            .iter()
            .filter(|s| s.component == 1)
            .map(|s| MeanBiasRecord {
                scenario: s.scenario,
                method: s.method.clone(),
                d: s.d,
                n: s.n,
                truth: s.truth,
                bias: s.bias,
                mcse: s.mcse,
                replications: s.replications,
            })
            .collect();
        let name = "figure_mean_bias.csv";
        write_csv(
            &cfg.out.join(name),
            &rows,
            &["scenario", "method", "d", "n", "truth", "bias", "mcse", "replications"],
        )?;
        files.push(name.to_string());
    }
    Ok(files)
}

/// qgcomp CI widths of the X1 coefficient and of psi with X2 null, across a
/// finer correlation sweep, at the first requested n and d.
fn write_ci_width_sweep(cfg: &SimulateConfig) -> CliResult<String> {
    if !cfg.methods.contains(&Method::Qgcomp) {
        eprintln!("note: CI-width sweep uses qgcomp regardless of --methods");
    }
    let mut base = ScenarioSpec::preset(5, cfg.ns[0], cfg.ds[0])?;
    base.q = cfg.q;
    base.beta2 = 0.0;
    if let Some(b1) = cfg.beta1 {
        base.beta1 = b1;
    }
    let rows: Vec<CiWidthRecord> = ci_width_sweep(&base, &SWEEP_RHOS, cfg.reps, cfg.seed, true)?;
    let name = "figure_ci_width.csv";
    write_csv(
        &cfg.out.join(name),
        &rows,
        &["rho", "replication", "corr_x1x2", "width_beta1", "width_psi"],
    )?;
    Ok(name.to_string())
}

pub fn report(input: &Path, out: &Path, format: crate::output::Format) -> CliResult<()> {
    let records = crate::records::read_replications(input)?;
    if records.is_empty() {
        return Err(CliError::data(format!("{} has no replication rows", input.display())));
    }
    let (summary, empty_cells) = summarize(&records)?;
    ensure_dir(out)?;
    let path = out.join(format!("summary.{}", format.extension()));
    write_atomic(&path, &render_summary(&summary, format)?)?;
    eprintln!("wrote {}", path.display());
    if empty_cells > 0 {
        return Err(CliError::numerical(format!(
            "{empty_cells} cell(s) had fewer than two successful replications"
        )));
    }
    Ok(())
}
