//! Command-line front end: `classify`, `verify`, `simulate`, `spine` and `mc`.
//!
//! Exit codes: 0 success, 1 validation failure (arguments or model file),
//! 2 resource limit or refusal (enumeration too large, population cap; any
//! partial artifact is still written and flagged), 3 exact identity-check
//! failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use brw_core::mc::{self, Functional, McConfig, McError, McRun, McSummary, TrivialityReport};
use brw_core::numerics::{format_extended, serialize_extended, serialize_extended_vec};
use brw_core::oracle::{self, OracleError, ReportEntry};
use brw_core::spine::{embedded_trajectory, grow_spined_tree, sample_spine_path, SpineError};
use brw_core::{
    grow_tree, validate_law, w_trajectory, FiniteLaw, GrowthCaps, GrowthError, LawSpec, ModelFile,
    TiltProfile,
};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RESOURCE: i32 = 2;
pub const EXIT_IDENTITY: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Resource(String),
    #[error("{0}")]
    Identity(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Resource(_) => EXIT_RESOURCE,
            CliError::Identity(_) => EXIT_IDENTITY,
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

#[derive(Parser, Debug)]
#[command(
    name = "brw",
    version,
    about = "Branching random walk additive martingales: classification, exact checks and simulation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Tilted functionals, extinction probability and classification per alpha
    Classify(ClassifyArgs),
    /// Exhaustive exact identity checks for a finite law
    Verify(VerifyArgs),
    /// Grow trees and write W_n trajectories
    Simulate(SimulateArgs),
    /// Sample size-biased trees with a spine
    Spine(SpineArgs),
    /// Seeded Monte Carlo estimators with reference values
    Mc(McArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// Model file (JSON)
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// Output file; stdout if absent
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated list or linspace `start:stop:count`
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: String,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: String,
    #[arg(long)]
    pub depth: usize,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub depth: Option<usize>,
    /// Number of replicates
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    /// Master seed; required, there is no clock seeding
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_nodes: Option<usize>,
    /// Worker threads (output does not depend on this)
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: String,
}

#[derive(Args, Debug)]
pub struct SpineArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: String,
    /// Sample only the spine; the log_w column is left blank
    #[arg(long)]
    pub spine_only: bool,
}

#[derive(Args, Debug)]
pub struct McArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum)]
    pub estimator: Estimator,
    /// Required for every estimator except `extinction`
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<String>,
    /// Depth grid for `triviality`, e.g. `20,50,100`
    #[arg(long)]
    pub depth_grid: Option<String>,
    /// Test functional for `importance`: one, z_eq:K, z_min:K, exp_neg_max:BETA
    #[arg(long, default_value = "one")]
    pub functional: String,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    MeanW,
    SpineSlope,
    Extinction,
    Triviality,
    Importance,
}

/// Parses an α grid: `a,b,c` or `start:stop:count` (inclusive endpoints).
pub fn parse_alpha_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let number = |s: &str| {
        f64::from_str(s.trim())
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| invalid(format!("invalid alpha value {s:?}")))
    };
    let grid = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(invalid(format!(
                "alpha linspace must be start:stop:count, got {text:?}"
            )));
        }
        let (start, stop) = (number(parts[0])?, number(parts[1])?);
        let count = usize::from_str(parts[2].trim())
            .ok()
            .filter(|&c| c >= 1)
            .ok_or_else(|| invalid(format!("invalid linspace count {:?}", parts[2])))?;
        if count == 1 {
            if start != stop {
                return Err(invalid("a linspace with count 1 needs start == stop"));
            }
            vec![start]
        } else {
            let step = (stop - start) / (count - 1) as f64;
            (0..count)
                .map(|i| {
                    if i + 1 == count {
                        stop
                    } else {
                        start + i as f64 * step
                    }
                })
                .collect()
        }
    } else {
        text.split(',').map(number).collect::<Result<Vec<_>, _>>()?
    };
    if grid.is_empty() {
        return Err(invalid("alpha grid is empty"));
    }
    Ok(grid)
}

fn single_alpha(text: &str) -> Result<f64, CliError> {
    match parse_alpha_grid(text)?.as_slice() {
        [a] => Ok(*a),
        _ => Err(invalid("this subcommand takes a single alpha")),
    }
}

/// Parses a depth grid `d1,d2,...`.
pub fn parse_depth_grid(text: &str) -> Result<Vec<usize>, CliError> {
    let grid = text
        .split(',')
        .map(|s| usize::from_str(s.trim()).map_err(|_| invalid(format!("invalid depth {s:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("depth grid must be strictly increasing"));
    }
    Ok(grid)
}

pub fn parse_functional(text: &str) -> Result<Functional, CliError> {
    let bad = || {
        invalid(format!(
            "unknown functional {text:?}; use one, z_eq:K, z_min:K or exp_neg_max:BETA"
        ))
    };
    let (name, arg) = match text.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (text, None),
    };
    match (name, arg) {
        ("one", None) => Ok(Functional::One),
        ("z_eq", Some(k)) => Ok(Functional::PopulationEquals(k.parse().map_err(|_| bad())?)),
        ("z_min", Some(k)) => Ok(Functional::PopulationMin(k.parse().map_err(|_| bad())?)),
        ("exp_neg_max", Some(b)) => {
            let beta: f64 = b.parse().map_err(|_| bad())?;
            if beta.is_finite() && beta > 0.0 {
                Ok(Functional::ExpNegMaxPosition(beta))
            } else {
                Err(invalid("exp_neg_max needs a finite beta > 0"))
            }
        }
        _ => Err(bad()),
    }
}

pub fn load_model(path: &Path) -> Result<LawSpec, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| invalid(format!("cannot read model file {}: {e}", path.display())))?;
    let model: ModelFile = serde_json::from_str(&text)
        .map_err(|e| invalid(format!("malformed model file {}: {e}", path.display())))?;
    validate_law(&model).map_err(|e| invalid(format!("invalid model {}: {e}", path.display())))
}

fn require_finite(law: &LawSpec) -> Result<&FiniteLaw, CliError> {
    law.as_finite()
        .ok_or_else(|| invalid("this operation needs a finite law (\"type\": \"finite\")"))
}

fn model_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn caps(max_nodes: Option<usize>) -> Result<GrowthCaps, CliError> {
    match max_nodes {
        Some(0) => Err(invalid("--max-nodes must be at least 1")),
        Some(n) => Ok(GrowthCaps::with_max_nodes(n)),
        None => Ok(GrowthCaps::default()),
    }
}

struct Prepared {
    law: LawSpec,
    depth: usize,
    seed: u64,
    caps: GrowthCaps,
}

fn prepare(run: &RunArgs, depth_required: bool) -> Result<Prepared, CliError> {
    let seed = run
        .seed
        .ok_or_else(|| invalid("--seed is required; runs are never seeded from the clock"))?;
    if run.reps == 0 {
        return Err(invalid("--reps must be at least 1"));
    }
    if run.threads == Some(0) {
        return Err(invalid("--threads must be at least 1"));
    }
    let depth = match run.depth {
        Some(d) => d,
        None if depth_required => return Err(invalid("--depth is required")),
        None => 0,
    };
    let caps = caps(run.max_nodes)?;
    if depth > caps.max_depth {
        return Err(CliError::Resource(format!(
            "depth {depth} exceeds the depth cap {}",
            caps.max_depth
        )));
    }
    Ok(Prepared {
        law: load_model(&run.common.model)?,
        depth,
        seed,
        caps,
    })
}

/// Destination for one output artifact.
fn emit(common: &Common, body: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match &common.out {
        Some(path) => fs::write(path, body)
            .map_err(|e| CliError::Resource(format!("cannot write {}: {e}", path.display()))),
        None => stdout
            .write_all(body.as_bytes())
            .map_err(|e| CliError::Resource(format!("cannot write output: {e}"))),
    }
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    s
}

fn csv_float(v: f64) -> String {
    format_extended(v)
}

#[derive(Serialize)]
struct ClassifyRow {
    #[serde(flatten)]
    profile: TiltProfile,
    /// Extinction probability of the genealogy.
    #[serde(serialize_with = "serialize_option_extended")]
    q: Option<f64>,
}

fn serialize_option_extended<S: serde::Serializer>(
    v: &Option<f64>,
    s: S,
) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) => serialize_extended(x, s),
        None => s.serialize_none(),
    }
}

pub fn run_classify(args: &ClassifyArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let grid = parse_alpha_grid(&args.alpha)?;
    let law = load_model(&args.common.model)?;
    let q = law.extinction_probability().ok();
    let rows: Vec<ClassifyRow> = grid
        .iter()
        .map(|&alpha| ClassifyRow {
            profile: law.classify(alpha),
            q,
        })
        .collect();
    let body = match args.common.format.unwrap_or(Format::Json) {
        Format::Json => to_json(&rows),
        Format::Csv => {
            let mut s = String::from("alpha,m,m_prime,drift,log_m,llogl,gap,classification,q\n");
            for r in &rows {
                let p = &r.profile;
                let llogl = if p.llogl.is_finite() {
                    csv_float(p.llogl.value())
                } else {
                    "INFINITE".to_string()
                };
                let class = serde_json::to_value(p.classification).expect("enum");
                writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{}",
                    csv_float(p.alpha),
                    csv_float(p.m),
                    csv_float(p.m_prime),
                    csv_float(p.drift),
                    csv_float(p.log_m),
                    llogl,
                    csv_float(p.gap),
                    class.as_str().expect("string enum"),
                    r.q.map(csv_float).unwrap_or_default()
                )
                .expect("string write");
            }
            s
        }
    };
    emit(&args.common, &body, stdout)
}

pub fn run_verify(
    args: &VerifyArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let grid = parse_alpha_grid(&args.alpha)?;
    let spec = load_model(&args.common.model)?;
    let law = require_finite(&spec)?;
    let label = model_label(&args.common.model);
    let mut entries: Vec<ReportEntry> = Vec::new();
    for &alpha in &grid {
        match oracle::run_all(law, &label, alpha, args.depth) {
            Ok(report) => entries.extend(report.entries()),
            Err(OracleError::TooLarge { log10_estimate }) => {
                return Err(CliError::Resource(format!(
                    "enumeration refused: pre-flight estimate 10^{log10_estimate:.2} outcomes exceeds the cap of 10^7"
                )));
            }
            Err(e) => return Err(invalid(e.to_string())),
        }
    }
    let body = match args.common.format.unwrap_or(Format::Json) {
        Format::Json => to_json(&entries),
        Format::Csv => {
            let mut s = String::from("check,law,alpha,depth,max_discrepancy,outcomes,pass\n");
            for e in &entries {
                writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    e.check,
                    e.law,
                    csv_float(e.alpha),
                    e.depth,
                    csv_float(e.max_discrepancy),
                    e.outcomes,
                    e.pass
                )
                .expect("string write");
            }
            s
        }
    };
    emit(&args.common, &body, stdout)?;
    let failed: Vec<String> = entries
        .iter()
        .filter(|e| !e.pass)
        .map(|e| {
            format!(
                "{} (alpha {}, discrepancy {:e})",
                e.check, e.alpha, e.max_discrepancy
            )
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        let _ = writeln!(stderr, "identity checks failed: {}", failed.join(", "));
        Err(CliError::Identity(format!(
            "{} identity check(s) failed",
            failed.len()
        )))
    }
}

#[derive(Serialize)]
struct TrajectoryRecord {
    replicate: usize,
    /// True when the population cap stopped growth early.
    partial: bool,
    #[serde(serialize_with = "serialize_extended_vec")]
    log_w: Vec<f64>,
    population: Vec<usize>,
}

fn partial_message(kind: &str, partial: &[usize], generations: &[usize]) -> String {
    let details: Vec<String> = partial
        .iter()
        .zip(generations)
        .map(|(r, g)| format!("replicate {r} stopped after {g} generations"))
        .collect();
    format!(
        "population cap reached; {kind} output is partial: {}",
        details.join("; ")
    )
}

pub fn run_simulate(args: &SimulateArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let alpha = single_alpha(&args.alpha)?;
    let p = prepare(&args.run, true)?;
    let profile = p.law.classify(alpha);
    if !profile.m.is_finite() {
        return Err(invalid(format!(
            "m(alpha) is not finite at alpha = {alpha}"
        )));
    }
    let records = mc::run_replicates(args.run.reps, p.seed, args.run.threads, |r, rng| {
        let (tree, partial) = match grow_tree(&p.law, p.depth, p.caps, rng) {
            Ok(t) => (t, false),
            Err(GrowthError::PopulationCap { partial, .. }) => (*partial, true),
            Err(e @ GrowthError::DepthExceedsCap { .. }) => unreachable!("checked in prepare: {e}"),
        };
        let t = w_trajectory(&tree, alpha, profile.log_m);
        TrajectoryRecord {
            replicate: r,
            partial,
            log_w: t.log_w,
            population: t.population,
        }
    })
    .map_err(|e| CliError::Resource(e.to_string()))?;
    let body = match args.run.common.format.unwrap_or(Format::Csv) {
        Format::Json => to_json(&records),
        Format::Csv => {
            let mut s = String::from("replicate,n,Z_n,log_w\n");
            for rec in &records {
                for (n, (z, lw)) in rec.population.iter().zip(&rec.log_w).enumerate() {
                    writeln!(s, "{},{},{},{}", rec.replicate, n, z, csv_float(*lw))
                        .expect("string write");
                }
            }
            s
        }
    };
    emit(&args.run.common, &body, stdout)?;
    let partial: Vec<usize> = records
        .iter()
        .filter(|r| r.partial)
        .map(|r| r.replicate)
        .collect();
    if partial.is_empty() {
        Ok(())
    } else {
        let grown: Vec<usize> = partial
            .iter()
            .map(|&r| records[r].log_w.len() - 1)
            .collect();
        Err(CliError::Resource(partial_message(
            "trajectory",
            &partial,
            &grown,
        )))
    }
}

#[derive(Serialize)]
struct SpineRecord {
    replicate: usize,
    /// True when the population cap stopped the embedded tree early; the
    /// spine itself is always complete.
    partial: bool,
    #[serde(serialize_with = "serialize_extended_vec")]
    positions: Vec<f64>,
    #[serde(serialize_with = "serialize_extended_vec")]
    spine_log_weight: Vec<f64>,
    /// `log W_k` of the embedded tree for the generations that were grown.
    #[serde(serialize_with = "serialize_extended_vec")]
    log_w: Vec<f64>,
}

pub fn run_spine(args: &SpineArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let alpha = single_alpha(&args.alpha)?;
    let p = prepare(&args.run, true)?;
    let law = require_finite(&p.law)?;
    let profile = p.law.classify(alpha);
    if !profile.m.is_finite() {
        return Err(invalid(format!(
            "m(alpha) is not finite at alpha = {alpha}"
        )));
    }
    law.size_biased_weights(alpha)
        .map_err(|e| invalid(e.to_string()))?;
    let records = mc::run_replicates(args.run.reps, p.seed, args.run.threads, |r, rng| {
        if args.spine_only {
            let path = sample_spine_path(law, alpha, p.depth, rng).expect("validated law");
            return SpineRecord {
                replicate: r,
                partial: false,
                positions: path.positions,
                spine_log_weight: path.log_weights,
                log_w: Vec::new(),
            };
        }
        let (spined, partial) = match grow_spined_tree(law, alpha, p.depth, p.caps, rng) {
            Ok(s) => (s, false),
            Err(SpineError::PopulationCap { partial, .. }) => (*partial, true),
            Err(e) => unreachable!("validated before sampling: {e}"),
        };
        SpineRecord {
            replicate: r,
            partial,
            log_w: embedded_trajectory(&spined).log_w,
            positions: spined.path.positions,
            spine_log_weight: spined.path.log_weights,
        }
    })
    .map_err(|e| CliError::Resource(e.to_string()))?;
    let body = match args.run.common.format.unwrap_or(Format::Csv) {
        Format::Json => to_json(&records),
        Format::Csv => {
            let mut s = String::from("k,S,spine_log_weight,log_w,replicate\n");
            for rec in &records {
                for (k, (pos, lw)) in rec.positions.iter().zip(&rec.spine_log_weight).enumerate() {
                    let w = rec.log_w.get(k).map(|v| csv_float(*v)).unwrap_or_default();
                    writeln!(
                        s,
                        "{},{},{},{},{}",
                        k,
                        csv_float(*pos),
                        csv_float(*lw),
                        w,
                        rec.replicate
                    )
                    .expect("string write");
                }
            }
            s
        }
    };
    emit(&args.run.common, &body, stdout)?;
    let partial: Vec<usize> = records
        .iter()
        .filter(|r| r.partial)
        .map(|r| r.replicate)
        .collect();
    if partial.is_empty() {
        Ok(())
    } else {
        let grown: Vec<usize> = partial
            .iter()
            .map(|&r| records[r].log_w.len() - 1)
            .collect();
        Err(CliError::Resource(format!(
            "{}; the spine columns are complete, log_w is blank beyond the grown generations (use --spine-only to skip tree growth)",
            partial_message("embedded-tree", &partial, &grown)
        )))
    }
}

#[derive(Serialize)]
struct McOutput<'a> {
    #[serde(flatten)]
    summary: &'a McSummary,
    /// True when the run was stopped or invalidated by the population cap.
    partial: bool,
}

#[derive(Serialize)]
struct TrivialityOutput<'a> {
    #[serde(flatten)]
    report: &'a TrivialityReport,
    /// False when the heuristic verdict contradicts the exact classification.
    agrees_with_classification: bool,
}

fn mc_values_csv(values: &[Option<f64>]) -> String {
    let mut s = String::from("replicate,value\n");
    for (r, v) in values.iter().enumerate() {
        writeln!(s, "{},{}", r, v.map(csv_float).unwrap_or_default()).expect("string write");
    }
    s
}

fn triviality_csv(report: &TrivialityReport) -> String {
    let mut s = String::from("replicate,depth,log_w\n");
    for (r, v) in report.values.iter().enumerate() {
        for (i, &d) in report.depth_grid.iter().enumerate() {
            let lw = v.as_ref().map(|v| csv_float(v[i])).unwrap_or_default();
            writeln!(s, "{r},{d},{lw}").expect("string write");
        }
    }
    s
}

fn mc_error(e: McError) -> CliError {
    match e {
        McError::TooManyDiscarded { .. } | McError::DepthExceedsCap { .. } | McError::Pool(_) => {
            CliError::Resource(e.to_string())
        }
        McError::Oracle(OracleError::TooLarge { .. }) => CliError::Resource(e.to_string()),
        _ => invalid(e.to_string()),
    }
}

pub fn run_mc(args: &McArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let p = prepare(&args.run, args.estimator != Estimator::Triviality)?;
    if args.run.reps < 2 {
        return Err(invalid("--reps must be at least 2 for a standard error"));
    }
    let mut cfg = McConfig::new(args.run.reps, p.depth, p.seed).with_caps(p.caps);
    cfg.threads = args.run.threads;
    let alpha = || {
        args.alpha
            .as_deref()
            .ok_or_else(|| invalid("--alpha is required for this estimator"))
            .and_then(single_alpha)
    };
    let format = args.run.common.format.unwrap_or(Format::Json);
    let common = &args.run.common;

    if args.estimator == Estimator::Triviality {
        let law = require_finite(&p.law)?;
        let grid = args
            .depth_grid
            .as_deref()
            .ok_or_else(|| invalid("--depth-grid is required for the triviality estimator"))
            .and_then(parse_depth_grid)?;
        if grid.is_empty() {
            return Err(invalid("depth grid is empty"));
        }
        let report = mc::mc_triviality_scan(law, alpha()?, &grid, &cfg).map_err(mc_error)?;
        let body = match format {
            Format::Json => to_json(&TrivialityOutput {
                agrees_with_classification: report.agrees_with_classification(),
                report: &report,
            }),
            Format::Csv => triviality_csv(&report),
        };
        return emit(common, &body, stdout);
    }

    let result: Result<McRun, McError> = match args.estimator {
        Estimator::MeanW => mc::mc_mean_w(&p.law, alpha()?, &cfg),
        Estimator::Extinction => mc::mc_extinction(&p.law, &cfg),
        Estimator::SpineSlope => mc::mc_spine_slope(require_finite(&p.law)?, alpha()?, &cfg),
        Estimator::Importance => {
            let functional = parse_functional(&args.functional)?;
            mc::mc_importance_identity(require_finite(&p.law)?, alpha()?, &cfg, functional)
        }
        Estimator::Triviality => unreachable!("handled above"),
    };
    match result {
        Ok(run) => {
            let body = match format {
                Format::Json => to_json(&McOutput {
                    summary: &run.summary,
                    partial: false,
                }),
                Format::Csv => mc_values_csv(&run.values),
            };
            emit(common, &body, stdout)
        }
        Err(McError::TooManyDiscarded {
            summary,
            discarded,
            replicates,
        }) => {
            if format == Format::Json {
                emit(
                    common,
                    &to_json(&McOutput {
                        summary: &summary,
                        partial: true,
                    }),
                    stdout,
                )?;
            }
            Err(CliError::Resource(format!(
                "{discarded} of {replicates} replicates hit the population cap (limit 1%); summary flagged partial"
            )))
        }
        Err(e) => Err(mc_error(e)),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => EXIT_OK,
                _ => EXIT_VALIDATION,
            };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Classify(a) => run_classify(a, stdout),
        Command::Verify(a) => run_verify(a, stdout, stderr),
        Command::Simulate(a) => run_simulate(a, stdout),
        Command::Spine(a) => run_spine(a, stdout),
        Command::Mc(a) => run_mc(a, stdout),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
