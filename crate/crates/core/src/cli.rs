//! Command-line front end.
//!
//! Every command writes a JSON document with `"schema": 1`. Wall-clock
//! measurements live under a top-level `"timing"` key so two runs with the same
//! flags can be diffed after dropping it.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O or malformed file, 4 shape mismatch,
//! 5 numerical failure, 6 verification failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde::Serialize;
use serde_json::{json, Value};

use crate::bench::{self, BenchConfig};
use crate::calib::CalibStats;
use crate::error::{Error, Result};
use crate::grid::{levels_for_bits, GridConfig};
use crate::linalg::DampingPolicy;
use crate::netsim::{self, SimulationConfig};
use crate::qmx::{self, Dtype};
use crate::rounding::{default_damping, quantize_layer, LayerQuantRequest, Method, OrderPolicy};
use crate::verify::{self, Suite};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_SHAPE: i32 = 4;
pub const EXIT_NUMERICAL: i32 = 5;
pub const EXIT_VERIFY: i32 = 6;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "qronos", version, about = "Layer-wise post-training weight quantization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantize one layer's weights from calibration activations or statistics.
    Quantize(QuantizeArgs),
    /// Accumulate H = Xt^T Xt and G = Xt^T X from activation files.
    Stats(StatsArgs),
    /// Run the equivalence and property suites.
    Verify(VerifyArgs),
    /// Time the rounding methods over a ladder of layer sizes.
    Bench(BenchArgs),
    /// Quantize toy networks and track the relative error layer by layer.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Rtn,
    Optq,
    OptqRef,
    Gpfq,
    Qronos,
    QronosBase,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Rtn => Method::Rtn,
            MethodArg::Optq => Method::Optq,
            MethodArg::OptqRef => Method::OptqRef,
            MethodArg::Gpfq => Method::Gpfq,
            MethodArg::Qronos => Method::Qronos,
            MethodArg::QronosBase => Method::QronosBase,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DampingArg {
    Meandiag,
    Topsv,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OrderArg {
    Diag,
    Natural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DtypeArg {
    F64,
    F32,
}

impl From<DtypeArg> for Dtype {
    fn from(d: DtypeArg) -> Self {
        match d {
            DtypeArg::F64 => Dtype::F64,
            DtypeArg::F32 => Dtype::F32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Gaussian,
    Lattice,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// Weight matrix (`N x N'`, one column per output channel).
    #[arg(long)]
    pub weights: PathBuf,
    /// Full-precision calibration inputs X (`m x N`).
    #[arg(long)]
    pub calib_x: Option<PathBuf>,
    /// Inputs of the partially quantized model Xt (`m x N`).
    #[arg(long)]
    pub calib_xt: Option<PathBuf>,
    /// Precomputed H = Xt^T Xt.
    #[arg(long, conflicts_with_all = ["calib_x", "calib_xt"])]
    pub stats_h: Option<PathBuf>,
    /// Precomputed G = Xt^T X.
    #[arg(long, requires = "stats_h")]
    pub stats_g: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// Bit width (1.58 selects the ternary grid).
    #[arg(long, conflicts_with = "levels")]
    pub bits: Option<f64>,
    #[arg(long)]
    pub levels: Option<u32>,
    /// Min-max range shrink in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Symmetric grids with a searched scale instead of min-max grids.
    #[arg(long)]
    pub symmetric: bool,
    /// Defaults to meandiag for OPTQ, topsv for Qronos, none otherwise.
    #[arg(long, value_enum)]
    pub damping: Option<DampingArg>,
    /// Damping fraction; defaults to 0.01 (meandiag) or 1e-6 (topsv).
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum, default_value = "diag")]
    pub order: OrderArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Output precision of the quantized matrix file.
    #[arg(long, value_enum, default_value = "f64")]
    pub dtype: DtypeArg,
    /// JSON report path (stdout when omitted).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Include per-step states in the report.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub calib_x: PathBuf,
    /// Defaults to the full-precision inputs.
    #[arg(long)]
    pub calib_xt: Option<PathBuf>,
    #[arg(long)]
    pub out_h: PathBuf,
    #[arg(long)]
    pub out_g: PathBuf,
    /// Rows per accumulated batch.
    #[arg(long, default_value_t = 1024)]
    pub batch: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Comma-separated suites (theorem1, lemma1, corollary1, propE2, lemmaC, collapse,
    /// orthogonality, oracle, streaming) or all.
    #[arg(long, default_value = "all")]
    pub suite: String,
    /// Overrides each suite's default trial count.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Overrides each suite's default tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 32)]
    pub k_min: usize,
    #[arg(long, default_value_t = 1024)]
    pub k_max: usize,
    #[arg(long, default_value_t = 10_000)]
    pub m: usize,
    /// Number of seeds, starting at `--seed`.
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "optq,gpfq,qronos-base,qronos")]
    pub methods: Vec<MethodArg>,
    /// Storage precision of the generated data; arithmetic is f64.
    #[arg(long, value_enum, default_value = "f64")]
    pub dtype: DtypeArg,
    #[arg(long, default_value_t = 4)]
    pub levels: u32,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    /// Skip qronos-base above this K.
    #[arg(long, default_value_t = 1024)]
    pub base_k_max: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 1)]
    pub blocks: usize,
    #[arg(long, default_value_t = 3)]
    pub wlevels: u32,
    /// Per-token activation levels, or `off`.
    #[arg(long, default_value = "off")]
    pub alevels: String,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "rtn,optq,gpfq,qronos")]
    pub method: Vec<MethodArg>,
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "off")]
    pub hadamard: Switch,
    /// Calibration rows; defaults to 8 x width.
    #[arg(long)]
    pub samples: Option<usize>,
    /// `lattice` draws weights that already lie on their grids.
    #[arg(long, value_enum, default_value = "gaussian")]
    pub init: InitArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } | Error::Format { .. } => EXIT_IO,
        Error::Shape(_) => EXIT_SHAPE,
        Error::Linalg(_) => EXIT_NUMERICAL,
        Error::InvalidArgument(_) | Error::EnumerationCap { .. } => EXIT_USAGE,
        Error::Columns(cols) => {
            if err.is_numerical() {
                EXIT_NUMERICAL
            } else {
                cols.first().map_or(EXIT_SHAPE, |(_, e)| exit_code(e))
            }
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run_from_env() -> i32 {
    run_with_args(std::env::args_os())
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Quantize(a) => cmd_quantize(&a),
        Command::Stats(a) => cmd_stats(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    }
}

fn write_json(path: Option<&Path>, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    text.push('\n');
    match path {
        Some(p) => fs::write(p, text).map_err(|source| Error::Io {
            path: p.display().to_string(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn path_str(p: &Option<PathBuf>) -> Value {
    p.as_ref().map_or(Value::Null, |p| Value::String(p.display().to_string()))
}

fn damping_policy(method: Method, damping: Option<DampingArg>, alpha: Option<f64>) -> Result<DampingPolicy> {
    let policy = match damping {
        None => {
            let mut p = default_damping(method);
            if let Some(a) = alpha {
                p.alpha = a;
            }
            p
        }
        Some(DampingArg::None) => DampingPolicy::none(),
        Some(DampingArg::Meandiag) => DampingPolicy::mean_diag_fraction(alpha.unwrap_or(0.01)),
        Some(DampingArg::Topsv) => DampingPolicy::top_singular(alpha.unwrap_or(1e-6)),
    };
    if !(policy.alpha >= 0.0 && policy.alpha.is_finite()) {
        return Err(Error::invalid("--alpha must be a non-negative number"));
    }
    Ok(policy)
}

fn usage(msg: &str) -> Error {
    Error::InvalidArgument(msg.to_string())
}

struct Calibration {
    stats: CalibStats,
    activations: Option<(Array2<f64>, Array2<f64>)>,
}

fn load_calibration(a: &QuantizeArgs, method: Method, n: usize) -> Result<Calibration> {
    let needs_mismatch = matches!(method, Method::Qronos | Method::QronosBase | Method::Gpfq);
    if let Some(h_path) = &a.stats_h {
        let (h, _) = qmx::read_qmx(h_path)?;
        let g = match &a.stats_g {
            Some(p) => qmx::read_qmx(p)?.0,
            None if needs_mismatch => {
                return Err(usage(&format!("--method {method} needs --stats-g alongside --stats-h")))
            }
            None => h.clone(),
        };
        if h.nrows() != n {
            return Err(Error::shape(format!(
                "{}: H is {}x{} but the weights have {n} rows",
                h_path.display(),
                h.nrows(),
                h.ncols()
            )));
        }
        return Ok(Calibration {
            stats: CalibStats::from_matrices(h, g, 0)?,
            activations: None,
        });
    }
    let Some(x_path) = &a.calib_x else {
        if method == Method::Rtn {
            return Ok(Calibration {
                stats: CalibStats::new(n),
                activations: None,
            });
        }
        return Err(usage(&format!(
            "--method {method} needs --calib-x/--calib-xt or --stats-h/--stats-g"
        )));
    };
    let (x, _) = qmx::read_qmx(x_path)?;
    let xt = match &a.calib_xt {
        Some(p) => qmx::read_qmx(p)?.0,
        None if needs_mismatch => {
            return Err(usage(&format!("--method {method} needs --calib-xt (or --stats-h and --stats-g)")))
        }
        None => x.clone(),
    };
    if x.ncols() != n {
        return Err(Error::shape(format!(
            "{}: X has {} columns but the weights have {n} rows",
            x_path.display(),
            x.ncols()
        )));
    }
    if x.dim() != xt.dim() {
        return Err(Error::shape(format!(
            "X is {}x{} but Xt is {}x{}",
            x.nrows(),
            x.ncols(),
            xt.nrows(),
            xt.ncols()
        )));
    }
    let stats = CalibStats::from_activations(x.view(), xt.view())?;
    Ok(Calibration {
        stats,
        activations: Some((x, xt)),
    })
}

fn cmd_quantize(a: &QuantizeArgs) -> Result<i32> {
    let start = Instant::now();
    let method = Method::from(a.method);
    let levels = match (a.bits, a.levels) {
        (Some(b), _) => levels_for_bits(b)?,
        (None, Some(l)) => l,
        (None, None) => levels_for_bits(4.0)?,
    };
    let grid_cfg = if a.symmetric {
        GridConfig::symmetric(levels)
    } else {
        GridConfig::minmax(levels, a.beta)
    };
    let damping = damping_policy(method, a.damping, a.alpha)?;
    let (w, _) = qmx::read_qmx(&a.weights)?;
    let calib = load_calibration(a, method, w.nrows())?;
    let grids = grid_cfg.per_channel(w.view())?;
    let order = match a.order {
        OrderArg::Diag => OrderPolicy::Diag,
        OrderArg::Natural => OrderPolicy::Natural,
    };
    let mut req = LayerQuantRequest::new(w.view(), &calib.stats, &grids, method)
        .with_damping(damping)
        .with_order(order)
        .with_trace(a.trace);
    if let Some((x, xt)) = &calib.activations {
        req = req.with_activations(x.view(), xt.view());
    }
    let result = quantize_layer(&req)?;
    qmx::write_qmx(&a.out, result.q.view(), a.dtype.into())?;

    let traces = result.traces.as_ref().map(|ts| {
        ts.iter()
            .map(|t| {
                json!({
                    "q": t.q.to_vec(),
                    "w_states": t.w_states.as_ref().map(|s| s.iter().map(|v| v.to_vec()).collect::<Vec<_>>()),
                    "deltas": t.deltas.as_ref().map(|s| s.iter().map(|v| v.to_vec()).collect::<Vec<_>>()),
                    "objective": t.objective,
                })
            })
            .collect::<Vec<_>>()
    });
    let report = json!({
        "schema": SCHEMA_VERSION,
        "command": "quantize",
        "config": {
            "weights": a.weights.display().to_string(),
            "calib_x": path_str(&a.calib_x),
            "calib_xt": path_str(&a.calib_xt),
            "stats_h": path_str(&a.stats_h),
            "stats_g": path_str(&a.stats_g),
            "method": method,
            "grid": grid_cfg,
            "damping": damping,
            "order": order,
            "out": a.out.display().to_string(),
            "dtype": Dtype::from(a.dtype),
            "trace": a.trace,
        },
        "shape": [w.nrows(), w.ncols()],
        "grids": grids,
        "result": to_value(&result.report),
        "traces": traces,
        "timing": { "total_seconds": start.elapsed().as_secs_f64() },
    });
    write_json(a.report.as_deref(), &report)?;
    Ok(EXIT_OK)
}

fn cmd_stats(a: &StatsArgs) -> Result<i32> {
    let (x, _) = qmx::read_qmx(&a.calib_x)?;
    let xt = match &a.calib_xt {
        Some(p) => qmx::read_qmx(p)?.0,
        None => x.clone(),
    };
    if x.dim() != xt.dim() {
        return Err(Error::shape("X and Xt have different shapes"));
    }
    if a.batch == 0 {
        return Err(usage("--batch must be positive"));
    }
    let mut stats = CalibStats::new(x.ncols());
    let mut start = 0;
    while start < x.nrows() {
        let end = (start + a.batch).min(x.nrows());
        stats.accumulate(
            x.slice(ndarray::s![start..end, ..]),
            xt.slice(ndarray::s![start..end, ..]),
        )?;
        start = end;
    }
    qmx::write_qmx(&a.out_h, stats.h(), Dtype::F64)?;
    qmx::write_qmx(&a.out_g, stats.g(), Dtype::F64)?;
    Ok(EXIT_OK)
}

fn cmd_verify(a: &VerifyArgs) -> Result<i32> {
    let start = Instant::now();
    let suites = Suite::parse_list(&a.suite)?;
    let mut results = Vec::new();
    let mut suite_times = serde_json::Map::new();
    for suite in &suites {
        let t0 = Instant::now();
        let trials = a.trials.unwrap_or(suite.default_trials());
        let tol = a.tol.unwrap_or(suite.default_tol());
        results.push(verify::run_suite(*suite, trials, tol, a.seed)?);
        suite_times.insert(suite.name().to_string(), json!(t0.elapsed().as_secs_f64()));
    }
    let passed = results.iter().all(|r| r.passed);
    let report = json!({
        "schema": SCHEMA_VERSION,
        "command": "verify",
        "config": {
            "suite": a.suite,
            "trials": a.trials,
            "tol": a.tol,
            "seed": a.seed,
            "dtype": "f64",
        },
        "passed": passed,
        "results": to_value(&results),
        "timing": {
            "suites": suite_times,
            "total_seconds": start.elapsed().as_secs_f64(),
        },
    });
    write_json(a.out.as_deref(), &report)?;
    for r in &results {
        eprintln!(
            "{} {}: trials={} max_deviation={:.3e} q_mismatches={}",
            if r.passed { "PASS" } else { "FAIL" },
            r.suite.name(),
            r.trials,
            r.max_deviation,
            r.q_mismatches
        );
    }
    Ok(if passed { EXIT_OK } else { EXIT_VERIFY })
}

fn cmd_bench(a: &BenchArgs) -> Result<i32> {
    let start = Instant::now();
    let config = BenchConfig {
        k_min: a.k_min,
        k_max: a.k_max,
        m: a.m,
        seeds: (a.seed..a.seed + a.seeds).collect(),
        methods: a.methods.iter().map(|&m| m.into()).collect(),
        dtype: a.dtype.into(),
        levels: a.levels,
        repetitions: a.reps,
        base_k_max: a.base_k_max,
        ..BenchConfig::default()
    };
    let report = bench::run(&config)?;
    let out = json!({
        "schema": SCHEMA_VERSION,
        "command": "bench",
        "config": to_value(&report.config),
        "machine": to_value(&report.machine),
        "timing": {
            "baseline_seconds": report.baseline_seconds,
            "cells": to_value(&report.cells),
            "speedups": to_value(&report.speedups),
            "total_seconds": start.elapsed().as_secs_f64(),
        },
    });
    write_json(a.out.as_deref(), &out)?;
    Ok(EXIT_OK)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<i32> {
    let start = Instant::now();
    let act_levels = match a.alevels.as_str() {
        "off" => None,
        s => Some(
            s.parse::<u32>()
                .map_err(|_| usage("--alevels takes a level count or `off`"))?,
        ),
    };
    if a.hadamard == Switch::On && !a.width.is_power_of_two() {
        return Err(usage("--hadamard on needs a power-of-two --width"));
    }
    let mut config = SimulationConfig::new(a.layers, a.width, a.wlevels);
    config.blocks = a.blocks;
    config.act_levels = act_levels;
    config.methods = a.method.iter().map(|&m| m.into()).collect();
    config.seeds = (a.seed..a.seed + a.seeds).collect();
    config.hadamard = a.hadamard == Switch::On;
    config.samples = a.samples.unwrap_or(8 * a.width);
    config.lattice = a.init == InitArg::Lattice;
    let report = netsim::run_simulation(&config)?;
    let out = json!({
        "schema": SCHEMA_VERSION,
        "command": "simulate",
        "config": to_value(&report.config),
        "runs": to_value(&report.runs),
        "summary": to_value(&report.summary),
        "timing": { "total_seconds": start.elapsed().as_secs_f64() },
    });
    write_json(a.out.as_deref(), &out)?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&Error::Shape("x".into())), EXIT_SHAPE);
        assert_eq!(exit_code(&Error::InvalidArgument("x".into())), EXIT_USAGE);
        assert_eq!(
            exit_code(&Error::Linalg(crate::linalg::LinalgError::NotPositiveDefinite { index: 2 })),
            EXIT_NUMERICAL
        );
        assert_eq!(
            exit_code(&Error::Format {
                path: "p".into(),
                reason: "r".into()
            }),
            EXIT_IO
        );
    }

    #[test]
    fn unknown_subcommand_is_usage_error() {
        assert_eq!(run_with_args(["qronos", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run_with_args(["qronos", "verify", "--suite", "nope"]), EXIT_USAGE);
    }
}
