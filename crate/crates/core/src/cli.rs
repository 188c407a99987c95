//! Command-line front end: chain files in, deterministic JSON reports out.
//!
//! Every report has the top-level keys `config`, `result`, `residuals` and
//! `warnings`. Exit codes: 0 success, 1 usage or validation error, 2 an
//! inconclusive verdict under `--strict`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::absprob::{backward_abs_prob, check_duality, forward_chain};
use crate::analysis::{classify, ds_decompose, Verdict};
use crate::chain::{simulate, ChainSpec, StateVector, TailPolicy};
use crate::error::Error;
use crate::flow::{flow_graph, static_jet_flow_scan};
use crate::generators::{
    gen_balanced_asymmetric_with, gen_periodic_swap, gen_two_leader, Family, GeneratorParams,
};
use crate::matching::{normalize_chain, pullback_abs_prob, self_confident_permutation};
use crate::matrix::{validate_stochastic, StochasticMatrix, ROW_SUM_TOL};
use crate::properties::pstar_estimate;

pub const DEFAULT_HORIZON: usize = 2000;
pub const DEFAULT_EPS: f64 = 1e-6;
pub const DEFAULT_THETA: f64 = 50.0;
pub const DEFAULT_DELTA: f64 = 0.3;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_INCONCLUSIVE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("matrix {index}: {source}")]
    Matrix { index: usize, source: Error },
    #[error(transparent)]
    Chain(#[from] Error),
    #[error("{0}")]
    Usage(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Subcommand)]
#[serde(rename_all = "lowercase", tag = "name")]
pub enum Command {
    /// Run X(n+1) = A(n) X(n) and record states, spread and sorted states.
    Simulate {
        /// Initial state as comma-separated values (default: x_i = i).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
    },
    /// Finite-horizon ergodicity verdict with ergodic classes and islands.
    Classify,
    /// Connected components of the accumulated flow graph at threshold theta.
    Islands,
    /// Minimum absolute probability over the horizon, with duality residuals.
    Pstar,
    /// Self-confident permutation of A(step) for bound psi.
    Match {
        #[arg(long, default_value_t = 0)]
        step: usize,
    },
    /// Permutation normalization of the chain over the horizon.
    Normalize,
    /// Probe-based jet decomposition.
    Dsdecompose,
    /// Scan constant jets for the smallest accumulated interaction.
    Scanjets,
    /// Emit a generator chain file, with realized matrices when -T is given.
    Gen {
        #[arg(long)]
        family: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        support: Option<usize>,
        #[arg(long)]
        edge_prob: Option<f64>,
        #[arg(long)]
        perturb: Option<f64>,
    },
}

#[derive(Debug, Parser)]
#[command(
    name = "consensus",
    version,
    about = "Consensus dynamics over stochastic chains"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Chain file (JSON).
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Report destination (default: stdout).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(short = 'T', long, global = true)]
    pub horizon: Option<usize>,
    #[arg(long, global = true, default_value_t = DEFAULT_EPS)]
    pub eps: f64,
    #[arg(long, global = true, default_value_t = DEFAULT_THETA)]
    pub theta: f64,
    #[arg(long, global = true, default_value_t = 1.0)]
    pub psi: f64,
    /// Row-sum tolerance for matrices read from files.
    #[arg(long, global = true, default_value_t = ROW_SUM_TOL)]
    pub row_tol: f64,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Probe count for dsdecompose (default: number of agents).
    #[arg(long, global = true)]
    pub probes: Option<usize>,
    /// Exit with code 2 when a verdict is inconclusive.
    #[arg(long, global = true)]
    pub strict: bool,
}

/// The effective configuration of one run; embedded in every report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub horizon: usize,
    /// Whether `horizon` was given explicitly.
    pub horizon_given: bool,
    pub eps: f64,
    pub theta: f64,
    pub psi: f64,
    pub row_tol: f64,
    pub seed: u64,
    pub probes: Option<usize>,
    pub strict: bool,
}

impl RunConfig {
    pub fn from_cli(cli: Cli) -> Result<Self, CliError> {
        let config = RunConfig {
            command: cli.command,
            input: cli.input,
            out: cli.out,
            format: cli.format,
            horizon: cli.horizon.unwrap_or(DEFAULT_HORIZON),
            horizon_given: cli.horizon.is_some(),
            eps: cli.eps,
            theta: cli.theta,
            psi: cli.psi,
            row_tol: cli.row_tol,
            seed: cli.seed,
            probes: cli.probes,
            strict: cli.strict,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        for (name, v) in [
            ("eps", self.eps),
            ("theta", self.theta),
            ("row-tol", self.row_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Usage(format!(
                    "--{name} must be positive, got {v}"
                )));
            }
        }
        if self.horizon == 0 {
            return Err(CliError::Usage("--horizon must be at least 1".into()));
        }
        Ok(())
    }
}

/// Either one matrix or a list of matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Matrices {
    Many(Vec<Vec<Vec<f64>>>),
    One(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb: Option<f64>,
}

/// On-disk chain description.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrices: Option<Matrices>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<TailPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<FamilyParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Fill in family defaults so the emitted file states every parameter.
fn effective_params(family: &str, n: usize, p: &FamilyParams) -> Result<FamilyParams, CliError> {
    let psi = p.psi.unwrap_or(1.0);
    Ok(match family {
        "doubly_stochastic" => FamilyParams {
            support: Some(p.support.unwrap_or(n)),
            ..FamilyParams::default()
        },
        "self_confident_cut_balanced" => FamilyParams {
            delta: Some(p.delta.unwrap_or(DEFAULT_DELTA)),
            psi: Some(psi),
            edge_prob: Some(p.edge_prob.unwrap_or(1.0)),
            ..FamilyParams::default()
        },
        "balanced_asymmetric" => FamilyParams {
            psi: Some(psi),
            support: Some(p.support.unwrap_or(n)),
            perturb: Some(p.perturb.unwrap_or(if psi > 1.0 { 0.5 } else { 0.0 })),
            ..FamilyParams::default()
        },
        "two_leader" | "periodic_swap" => FamilyParams::default(),
        other => return Err(usage(format!("unknown family `{other}`"))),
    })
}

fn matrices_of(file: &ChainFile, tol: f64) -> Result<Vec<StochasticMatrix>, CliError> {
    let list = match &file.matrices {
        None => return Err(usage("chain file has no `matrices`")),
        Some(Matrices::One(rows)) => vec![rows.clone()],
        Some(Matrices::Many(list)) => list.clone(),
    };
    if list.is_empty() {
        return Err(usage("`matrices` is empty"));
    }
    let out: Vec<StochasticMatrix> = list
        .iter()
        .enumerate()
        .map(|(index, rows)| {
            validate_stochastic(rows, tol).map_err(|source| CliError::Matrix { index, source })
        })
        .collect::<Result<_, _>>()?;
    let n = out[0].n();
    if let Some(declared) = file.n {
        if declared != n {
            return Err(Error::Dimension {
                expected: declared,
                found: n,
            }
            .into());
        }
    }
    if let Some((index, m)) = out.iter().enumerate().find(|(_, m)| m.n() != n) {
        return Err(CliError::Matrix {
            index,
            source: Error::Dimension {
                expected: n,
                found: m.n(),
            },
        });
    }
    Ok(out)
}

fn generator_chain(file: &ChainFile) -> Result<ChainSpec, CliError> {
    let family = file
        .family
        .as_deref()
        .ok_or_else(|| usage("generator chain needs `family`"))?;
    let n = file.n.ok_or_else(|| usage("generator chain needs `n`"))?;
    let seed = file.seed.unwrap_or(0);
    let p = effective_params(family, n, &file.params.clone().unwrap_or_default())?;
    let spec = match family {
        "doubly_stochastic" => ChainSpec::generator(GeneratorParams {
            n,
            seed,
            family: Family::DoublyStochastic {
                support: p.support.unwrap_or(n),
            },
        })?,
        "self_confident_cut_balanced" => ChainSpec::generator(GeneratorParams {
            n,
            seed,
            family: Family::SelfConfidentCutBalanced {
                delta: p.delta.unwrap_or(DEFAULT_DELTA),
                psi: p.psi.unwrap_or(1.0),
                edge_prob: p.edge_prob.unwrap_or(1.0),
            },
        })?,
        "balanced_asymmetric" => gen_balanced_asymmetric_with(
            n,
            seed,
            p.psi.unwrap_or(1.0),
            p.support.unwrap_or(n),
            p.perturb.unwrap_or(0.0),
        )?,
        "two_leader" => gen_two_leader(n, seed)?,
        "periodic_swap" => gen_periodic_swap(n)?,
        other => return Err(usage(format!("unknown family `{other}`"))),
    };
    Ok(spec)
}

/// Build a chain from its file description.
pub fn chain_from_file(file: &ChainFile, tol: f64) -> Result<ChainSpec, CliError> {
    let kind = match (&file.kind, &file.family) {
        (Some(k), _) => k.as_str(),
        (None, Some(_)) => "generator",
        (None, None) => return Err(usage("chain file needs `kind` or `family`")),
    };
    match kind {
        "static" => {
            let m = matrices_of(file, tol)?;
            if m.len() != 1 {
                return Err(usage(format!(
                    "static chain needs one matrix, got {}",
                    m.len()
                )));
            }
            Ok(ChainSpec::constant(
                m.into_iter().next().expect("one matrix"),
            ))
        }
        "periodic" => Ok(ChainSpec::periodic(matrices_of(file, tol)?)?),
        "explicit" => Ok(ChainSpec::explicit(
            matrices_of(file, tol)?,
            file.tail.unwrap_or(TailPolicy::RepeatLast),
        )?),
        "generator" => generator_chain(file),
        other => Err(usage(format!("unknown chain kind `{other}`"))),
    }
}

/// Read a chain file. A `gen` report is accepted too; its `result.chain` is used.
pub fn parse_chain_file(path: &Path, tol: f64) -> Result<ChainSpec, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_owned(),
        source,
    })?;
    let file = match serde_json::from_str::<ChainFile>(&text) {
        Ok(f) => f,
        Err(e) => {
            let embedded = serde_json::from_str::<Value>(&text)
                .ok()
                .and_then(|v| v.pointer("/result/chain").cloned())
                .and_then(|v| serde_json::from_value::<ChainFile>(v).ok());
            embedded.ok_or_else(|| CliError::Parse {
                path: path.to_owned(),
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?
        }
    };
    chain_from_file(&file, tol)
}

#[derive(Serialize)]
struct Report<'a, R: Serialize> {
    config: &'a RunConfig,
    result: R,
    residuals: Value,
    warnings: Vec<String>,
}

/// Rendered report text and exit code of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub text: String,
    pub exit_code: i32,
}

fn render<R: Serialize>(
    config: &RunConfig,
    result: R,
    residuals: Value,
    warnings: Vec<String>,
) -> Result<String, CliError> {
    let report = Report {
        config,
        result,
        residuals,
        warnings,
    };
    let mut text = serde_json::to_string_pretty(&report)
        .map_err(|e| usage(format!("cannot serialize report: {e}")))?;
    text.push('\n');
    Ok(text)
}

fn series_csv(header: &str, width: usize, rows: &[&[f64]], extra: Option<&[f64]>) -> String {
    let mut out = String::from("step");
    for i in 0..width {
        let _ = write!(out, ",{header}{i}");
    }
    if extra.is_some() {
        out.push_str(",spread");
    }
    out.push('\n');
    for (step, row) in rows.iter().enumerate() {
        let _ = write!(out, "{step}");
        for x in row.iter() {
            let _ = write!(out, ",{x}");
        }
        if let Some(e) = extra {
            let _ = write!(out, ",{}", e[step]);
        }
        out.push('\n');
    }
    out
}

fn load(config: &RunConfig) -> Result<ChainSpec, CliError> {
    let path = config
        .input
        .as_deref()
        .ok_or_else(|| usage("this command needs --input"))?;
    parse_chain_file(path, config.row_tol)
}

fn strict_code(config: &RunConfig, verdict: Verdict) -> i32 {
    if config.strict && verdict == Verdict::Inconclusive {
        EXIT_INCONCLUSIVE
    } else {
        EXIT_OK
    }
}

/// Execute one command and render its report.
pub fn run(config: &RunConfig) -> Result<Outcome, CliError> {
    config.validate()?;
    let csv_ok = matches!(config.command, Command::Simulate { .. } | Command::Pstar);
    if config.format == Format::Csv && !csv_ok {
        return Err(usage(
            "csv output is only available for per-step series (simulate, pstar)",
        ));
    }
    let t = config.horizon;
    let ok = |text: String| Outcome {
        text,
        exit_code: EXIT_OK,
    };
    match &config.command {
        Command::Simulate { x0 } => {
            let spec = load(config)?;
            let n = spec.n();
            let x0 = StateVector::new(
                x0.clone()
                    .unwrap_or_else(|| (0..n).map(|i| i as f64).collect()),
            )?;
            let traj = simulate(&spec, &x0, t)?;
            if config.format == Format::Csv {
                let rows: Vec<&[f64]> = traj.states.iter().map(|s| &s[..]).collect();
                return Ok(ok(series_csv("x", n, &rows, Some(&traj.spread))));
            }
            let residuals = json!({ "final_spread": traj.spread[t] });
            Ok(ok(render(config, &traj, residuals, vec![])?))
        }
        Command::Classify => {
            let spec = load(config)?;
            let report = classify(&spec, t, config.eps, config.theta)?;
            let residuals = json!({
                "cauchy": report.cauchy_residual,
                "islands_agree": report.islands_agree,
            });
            let code = strict_code(config, report.verdict);
            let result = json!({
                "verdict": report.verdict,
                "clusters": report.clusters_at_horizon(),
                "decomposition": &report,
            });
            let text = render(config, result, residuals, report.warnings.clone())?;
            Ok(Outcome {
                text,
                exit_code: code,
            })
        }
        Command::Islands => {
            let spec = load(config)?;
            let g = flow_graph(&spec, t)?;
            let blocks = g.components(config.theta);
            let weights: Vec<&[f64]> = g.weights.chunks(g.n).collect();
            let result = json!({
                "horizon": t,
                "theta": config.theta,
                "blocks": blocks,
                "weights": weights,
            });
            Ok(ok(render(config, result, json!({}), vec![])?))
        }
        Command::Pstar => {
            let spec = load(config)?;
            let n = spec.n();
            let pi = backward_abs_prob(&spec, t, &vec![1.0 / n as f64; n])?;
            if config.format == Format::Csv {
                let rows: Vec<&[f64]> = pi.pi.iter().map(|p| &p[..]).collect();
                return Ok(ok(series_csv("pi", n, &rows, None)));
            }
            let fc = forward_chain(&spec, &pi)?;
            let duality = check_duality(&spec, &pi, &fc.matrices, t)?;
            let (abs_residual, _) = pi.residual(&spec)?;
            let mut warnings = Vec::new();
            if !duality.passes {
                warnings.push(format!(
                    "duality residual {:e} above tolerance",
                    duality.max_residual
                ));
            }
            let result = json!({
                "pstar": pstar_estimate(&spec, t)?,
                "pi0": pi.at(0),
                "horizon": t,
            });
            let residuals = json!({
                "duality": duality.max_residual,
                "duality_location": duality.location,
                "absolute_probability": abs_residual,
            });
            Ok(ok(render(config, result, residuals, warnings)?))
        }
        Command::Match { step } => {
            let spec = load(config)?;
            let m = self_confident_permutation(&spec.matrix_at(*step), config.psi)?;
            let result = json!({ "step": step, "matching": m });
            Ok(ok(render(config, result, json!({}), vec![])?))
        }
        Command::Normalize => {
            let spec = load(config)?;
            let n = spec.n();
            let norm = normalize_chain(&spec, config.psi, t)?;
            let pi_b = backward_abs_prob(&norm.as_chain()?, t, &vec![1.0 / n as f64; n])?;
            let pulled = pullback_abs_prob(&spec, &pi_b, &norm.perms)?;
            let (residual, _) = pulled.residual(&spec)?;
            let result = json!({
                "delta": norm.delta,
                "min_diagonal": norm.min_diagonal(),
                "perms": &norm.perms,
                "b": &norm.b,
                "pi0": pulled.at(0),
            });
            Ok(ok(render(
                config,
                result,
                json!({ "pullback": residual }),
                vec![],
            )?))
        }
        Command::Dsdecompose => {
            let spec = load(config)?;
            let probes = config.probes.unwrap_or(spec.n());
            let (report, clusters) = ds_decompose(&spec, t, config.eps, probes, config.seed)?;
            let residuals = json!({
                "cauchy": report.cauchy_residual,
                "cluster": clusters.residual,
            });
            let code = strict_code(config, report.verdict);
            let warnings = report.warnings.clone();
            let result = json!({ "decomposition": report, "clusters": clusters });
            Ok(Outcome {
                text: render(config, result, residuals, warnings)?,
                exit_code: code,
            })
        }
        Command::Scanjets => {
            let spec = load(config)?;
            let scan = static_jet_flow_scan(&spec, t, None)?;
            Ok(ok(render(config, scan, json!({}), vec![])?))
        }
        Command::Gen {
            family,
            n,
            delta,
            support,
            edge_prob,
            perturb,
        } => {
            let given = FamilyParams {
                delta: *delta,
                psi: Some(config.psi),
                edge_prob: *edge_prob,
                support: *support,
                perturb: *perturb,
            };
            let params = effective_params(family, *n, &given)?;
            let file = ChainFile {
                n: Some(*n),
                kind: Some("generator".into()),
                family: Some(family.clone()),
                params: (params != FamilyParams::default()).then_some(params),
                seed: Some(config.seed),
                ..ChainFile::default()
            };
            let spec = chain_from_file(&file, config.row_tol)?;
            let realized = config.horizon_given.then(|| spec.realize(0, t));
            let result = json!({ "chain": file, "realized": realized });
            Ok(ok(render(config, result, json!({}), vec![])?))
        }
    }
}

/// Run and write the report to `--out` or stdout.
pub fn execute(config: &RunConfig) -> Result<i32, CliError> {
    let outcome = run(config)?;
    match &config.out {
        Some(path) => fs::write(path, &outcome.text).map_err(|source| CliError::Write {
            path: path.clone(),
            source,
        })?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(outcome.text.as_bytes())
                .map_err(|source| CliError::Write {
                    path: PathBuf::from("<stdout>"),
                    source,
                })?;
        }
    }
    Ok(outcome.exit_code)
}

/// Entry point shared by the binary and tests; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
        }
    };
    match RunConfig::from_cli(cli).and_then(|c| execute(&c)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INVALID
        }
    }
}
