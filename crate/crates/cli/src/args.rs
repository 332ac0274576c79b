//! Command-line flags, the optional TOML config file, and their merge.
//! Precedence: flag, then `QGCOMP_OUT` (output directory only), then the
//! config file, then built-in defaults.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use qgcomp::mcharness::Method;
use qgcomp::regress::Link;
use serde::Deserialize;

use crate::error::{CliError, CliResult};
use crate::output::Format;

pub const DEFAULT_OUT: &str = "qgcomp-out";

#[derive(Debug, Parser)]
#[command(name = "qgcomp", version, about = "Quantile g-computation and WQS regression for exposure mixtures")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run Monte Carlo replications of a simulation scenario.
    Simulate(SimulateArgs),
    /// Fit mixture estimators to a CSV file.
    Fit(FitArgs),
    /// Recompute summary tables from a replications file.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output directory.
    #[arg(long, env = "QGCOMP_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML file with the same keys as the long flags (snake_case).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scenario preset, 1 to 8.
    #[arg(long)]
    pub scenario: Option<u8>,
    /// Sample sizes (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    /// Numbers of exposures (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub d: Vec<usize>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Any of qgcomp, wqs, wqs_nosplit (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Bootstrap iterations for qgcomp variance.
    #[arg(long)]
    pub bootstraps: Option<usize>,
    /// Bootstrap resamples for WQS weights.
    #[arg(long)]
    pub wqs_bootstraps: Option<usize>,
    #[arg(long)]
    pub msm_degree: Option<usize>,
    /// Add a squared index term to WQS.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub quadratic_index: Option<bool>,
    /// Override the X1 coefficient.
    #[arg(long, allow_negative_numbers = true)]
    pub beta1: Option<f64>,
    /// X2 coefficients to run (comma-separated).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub beta2: Vec<f64>,
    /// X1/X2 correlation labels to run (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub rho: Vec<f64>,
    /// Also write long-format figure data files.
    #[arg(long)]
    pub emit_figure_data: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkArg {
    Identity,
    Logit,
}

impl From<LinkArg> for Link {
    fn from(l: LinkArg) -> Link {
        match l {
            LinkArg::Identity => Link::Identity,
            LinkArg::Logit => Link::Logit,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated input file with a header row.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub outcome: Option<String>,
    /// Exposure columns; default is every column that is neither the
    /// outcome nor a covariate.
    #[arg(long, value_delimiter = ',')]
    pub exposures: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    #[arg(long, value_enum)]
    pub link: Option<LinkArg>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub bootstraps: Option<usize>,
    #[arg(long)]
    pub wqs_bootstraps: Option<usize>,
    #[arg(long)]
    pub msm_degree: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub quadratic_index: Option<bool>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Replications file written by `simulate`; defaults to
    /// `<out>/replications.csv`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(v) => v,
        }
    }
}

/// Keys accepted in a config file. Unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub scenario: Option<u8>,
    pub n: Option<OneOrMany<usize>>,
    pub d: Option<OneOrMany<usize>>,
    pub q: Option<usize>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub methods: Option<OneOrMany<String>>,
    pub train_fraction: Option<f64>,
    pub bootstraps: Option<usize>,
    pub wqs_bootstraps: Option<usize>,
    pub msm_degree: Option<usize>,
    pub quadratic_index: Option<bool>,
    pub beta1: Option<f64>,
    pub beta2: Option<OneOrMany<f64>>,
    pub rho: Option<OneOrMany<f64>>,
    pub emit_figure_data: Option<bool>,
    pub input: Option<PathBuf>,
    pub outcome: Option<String>,
    pub exposures: Option<OneOrMany<String>>,
    pub covariates: Option<OneOrMany<String>>,
    pub link: Option<LinkArg>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

pub fn load_file_config(path: Option<&Path>) -> CliResult<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
}

fn list<T>(flag: Vec<T>, file: Option<OneOrMany<T>>, default: Vec<T>) -> Vec<T> {
    if !flag.is_empty() {
        flag
    } else {
        file.map(OneOrMany::into_vec).unwrap_or(default)
    }
}

fn parse_methods(names: Vec<String>) -> CliResult<Vec<Method>> {
    let mut out: Vec<Method> = Vec::new();
    for name in names {
        let m: Method = name.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(CliError::usage("no methods requested"));
    }
    Ok(out)
}

fn check_fraction(f: f64) -> CliResult<f64> {
    if (0.0..1.0).contains(&f) {
        Ok(f)
    } else {
        Err(CliError::usage(format!("--train-fraction must be in [0, 1), got {f}")))
    }
}

fn positive(name: &str, v: usize) -> CliResult<usize> {
    if v == 0 {
        Err(CliError::usage(format!("--{name} must be at least 1")))
    } else {
        Ok(v)
    }
}

fn out_dir(flag: Option<PathBuf>, file: Option<PathBuf>) -> PathBuf {
    flag.or(file).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

#[derive(Debug, Clone)]
pub struct SimulateConfig {
    pub scenario: u8,
    pub ns: Vec<usize>,
    pub ds: Vec<usize>,
    pub q: usize,
    pub reps: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub train_fraction: f64,
    pub qgcomp_bootstraps: usize,
    pub wqs_bootstraps: usize,
    pub msm_degree: Option<usize>,
    pub quadratic_index: Option<bool>,
    pub beta1: Option<f64>,
    pub beta2: Vec<f64>,
    pub rho: Vec<f64>,
    pub emit_figure_data: bool,
    pub out: PathBuf,
    pub format: Format,
}

impl SimulateConfig {
    pub fn resolve(args: SimulateArgs) -> CliResult<Self> {
        let file = load_file_config(args.config.as_deref())?;
        let scenario = args
            .scenario
            .or(file.scenario)
            .ok_or_else(|| CliError::usage("--scenario is required"))?;
        if !(1..=8).contains(&scenario) {
            return Err(CliError::usage(format!("unknown scenario {scenario}; expected 1-8")));
        }
        let default_grid = |a: Vec<f64>| if scenario == 5 { a } else { Vec::new() };
        let cfg = SimulateConfig {
            scenario,
            ns: list(args.n, file.n, vec![500]),
            ds: list(args.d, file.d, vec![4]),
            q: args.q.or(file.q).unwrap_or(4),
            reps: positive("reps", args.reps.or(file.reps).unwrap_or(1000))?,
            seed: args.seed.or(file.seed).unwrap_or(1),
            methods: parse_methods(list(
                args.methods,
                file.methods,
                vec!["qgcomp".into(), "wqs".into()],
            ))?,
            train_fraction: check_fraction(
                args.train_fraction
                    .or(file.train_fraction)
                    .unwrap_or(qgcomp::wqs::DEFAULT_TRAIN_FRACTION),
            )?,
            qgcomp_bootstraps: args
                .bootstraps
                .or(file.bootstraps)
                .unwrap_or(qgcomp::qgc::DEFAULT_BOOTSTRAPS),
            wqs_bootstraps: positive(
                "wqs-bootstraps",
                args.wqs_bootstraps
                    .or(file.wqs_bootstraps)
                    .unwrap_or(qgcomp::wqs::DEFAULT_BOOTSTRAPS),
            )?,
            msm_degree: args.msm_degree.or(file.msm_degree),
            quadratic_index: args.quadratic_index.or(file.quadratic_index),
            beta1: args.beta1.or(file.beta1),
            beta2: list(args.beta2, file.beta2, default_grid(vec![-0.2, -0.1, -0.05])),
            rho: list(args.rho, file.rho, default_grid(vec![0.0, 0.4, 0.75])),
            emit_figure_data: args.emit_figure_data || file.emit_figure_data.unwrap_or(false),
            out: out_dir(args.output.out, file.out),
            format: args.output.format.or(file.format).unwrap_or_default(),
        };
        if cfg.qgcomp_bootstraps < 2 {
            return Err(CliError::usage("--bootstraps must be at least 2"));
        }
        if cfg.ns.is_empty() || cfg.ds.is_empty() {
            return Err(CliError::usage("--n and --d need at least one value"));
        }
        if scenario == 4 && (cfg.beta1.is_some() || !cfg.beta2.is_empty()) {
            return Err(CliError::usage(
                "scenario 4 splits 0.25 evenly across exposures; --beta1/--beta2 do not apply",
            ));
        }
        if let Some(bad) = cfg.rho.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(CliError::usage(format!("--rho must be in [0, 1], got {bad}")));
        }
        if let Some(deg) = cfg.msm_degree {
            if deg == 0 || deg >= cfg.q {
                return Err(CliError::usage(format!(
                    "--msm-degree must be between 1 and q - 1 = {}",
                    cfg.q - 1
                )));
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub input: PathBuf,
    pub outcome: String,
    pub exposures: Vec<String>,
    pub covariates: Vec<String>,
    pub link: Link,
    pub q: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub train_fraction: f64,
    pub qgcomp_bootstraps: usize,
    pub wqs_bootstraps: usize,
    pub msm_degree: usize,
    pub quadratic_index: bool,
    pub out: PathBuf,
    pub format: Format,
}

impl FitConfig {
    pub fn resolve(args: FitArgs) -> CliResult<Self> {
        let file = load_file_config(args.config.as_deref())?;
        let input = args
            .input
            .or(file.input)
            .ok_or_else(|| CliError::usage("--input is required"))?;
        let outcome = args
            .outcome
            .or(file.outcome)
            .ok_or_else(|| CliError::usage("--outcome is required"))?;
        let link: Link = args.link.or(file.link).unwrap_or(LinkArg::Identity).into();
        let default_methods = match link {
            Link::Identity => vec!["qgcomp".to_string(), "wqs".to_string()],
            Link::Logit => vec!["qgcomp".to_string()],
        };
        let methods = parse_methods(list(args.methods, file.methods, default_methods))?;
        if link == Link::Logit && methods.iter().any(|m| *m != Method::Qgcomp) {
            return Err(CliError::usage("WQS is implemented for the identity link only"));
        }
        let cfg = FitConfig {
            input,
            outcome,
            exposures: list(args.exposures, file.exposures, Vec::new()),
            covariates: list(args.covariates, file.covariates, Vec::new()),
            link,
            q: args.q.or(file.q).unwrap_or(4),
            seed: args.seed.or(file.seed).unwrap_or(1),
            methods,
            train_fraction: check_fraction(
                args.train_fraction
                    .or(file.train_fraction)
                    .unwrap_or(qgcomp::wqs::DEFAULT_TRAIN_FRACTION),
            )?,
            qgcomp_bootstraps: args
                .bootstraps
                .or(file.bootstraps)
                .unwrap_or(qgcomp::qgc::DEFAULT_BOOTSTRAPS),
            wqs_bootstraps: positive(
                "wqs-bootstraps",
                args.wqs_bootstraps
                    .or(file.wqs_bootstraps)
                    .unwrap_or(qgcomp::wqs::DEFAULT_BOOTSTRAPS),
            )?,
            msm_degree: args.msm_degree.or(file.msm_degree).unwrap_or(1),
            quadratic_index: args.quadratic_index.or(file.quadratic_index).unwrap_or(false),
            out: out_dir(args.output.out, file.out),
            format: args.output.format.or(file.format).unwrap_or_default(),
        };
        if cfg.q < 2 {
            return Err(CliError::usage("--q must be at least 2"));
        }
        if cfg.msm_degree == 0 || cfg.msm_degree >= cfg.q {
            return Err(CliError::usage(format!(
                "--msm-degree must be between 1 and q - 1 = {}",
                cfg.q - 1
            )));
        }
        Ok(cfg)
    }
}

pub fn report_paths(args: &ReportArgs) -> CliResult<(PathBuf, PathBuf, Format)> {
    let out = out_dir(args.output.out.clone(), None);
    let input = args.input.clone().unwrap_or_else(|| out.join("replications.csv"));
    Ok((input, out, args.output.format.unwrap_or_default()))
}
