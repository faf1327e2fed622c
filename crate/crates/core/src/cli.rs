//! Command-line front end: subcommand dispatch and JSON reports.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::compat::{check_compatibility_on_basis, check_condition_a, check_condition_b, ConditionReport};
use crate::io::{LoadError, LoadedSystem};
use crate::realization::{
    characterize, default_initial_condition, default_signals, reconstruct_metric,
    CharacterizeOptions, ReconstructionMode, Tolerances,
};
use crate::sim::{conjugacy_check, default_guard, integrate, ControlSignal, MetricField, SimError};
use crate::systems::{observability_rank, prolong, RankReport};

pub const SCHEMA_VERSION: u32 = 1;
pub const EXIT_ERROR: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "gradiometer", version, about = "Tests whether an affine control system is a gradient system")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full pipeline: observability, compatibility, metric reconstruction, verification, simulation.
    Characterize(CharacterizeArgs),
    /// Compatibility of the system with its connection.
    Compat(CompatArgs),
    /// Integrates the prolonged system and checks conjugacy with the gradient extension.
    Simulate(SimulateArgs),
    /// Rank of the differentials of the observation space.
    Observability(ObservabilityArgs),
}

/// Interval list `lo:hi,lo:hi,...`; a single interval applies to every coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxArg(pub Vec<(f64, f64)>);

impl FromStr for BoxArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|part| {
                let (lo, hi) = part
                    .split_once(':')
                    .ok_or_else(|| format!("interval `{part}` is not of the form lo:hi"))?;
                let lo: f64 = lo.trim().parse().map_err(|_| format!("bad lower bound in `{part}`"))?;
                let hi: f64 = hi.trim().parse().map_err(|_| format!("bad upper bound in `{part}`"))?;
                if !(lo < hi) {
                    return Err(format!("empty interval `{part}`"));
                }
                Ok((lo, hi))
            })
            .collect::<Result<_, _>>()
            .map(BoxArg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// System definition (JSON).
    pub path: PathBuf,
    /// Number of sample points.
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    #[arg(long, env = "GRADIOMETER_SEED", default_value_t = crate::expr::DEFAULT_SEED)]
    pub seed: u64,
    /// Tolerance for pointwise identities.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Tolerance for simulated conjugacy.
    #[arg(long, default_value_t = 1e-6)]
    pub sim_tol: f64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the chart box, e.g. `-1:1` or `-1:1,0:2`.
    #[arg(long = "box", allow_hyphen_values = true)]
    pub bounds: Option<BoxArg>,
}

#[derive(Debug, Clone, Args)]
pub struct CharacterizeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Truncation depth of the observation space and `S_0`.
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    #[arg(long, default_value_t = crate::sim::DEFAULT_STEP)]
    pub step: f64,
    #[arg(long, default_value_t = crate::sim::DEFAULT_HORIZON)]
    pub horizon: f64,
    /// Always use the pointwise candidate metric.
    #[arg(long)]
    pub numeric: bool,
    /// Skip the conjugacy simulation.
    #[arg(long)]
    pub no_sim: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CompatArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Word depth for condition (a).
    #[arg(long, default_value_t = crate::compat::DEFAULT_DEPTH_A)]
    pub depth: usize,
    /// Word depth for condition (b).
    #[arg(long, default_value_t = crate::compat::DEFAULT_DEPTH_B)]
    pub depth_b: usize,
    /// Check only on an `S_0` basis of this depth.
    #[arg(long)]
    pub basis_depth: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Depth used to reconstruct a metric when the file gives Christoffel symbols.
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    /// Signal JSON: `{"duration", "breakpoints", "values"}` with `m` or `2m` columns.
    #[arg(long)]
    pub signal: Option<PathBuf>,
    /// Trajectory CSV of the prolonged system.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value_t = crate::sim::DEFAULT_STEP)]
    pub step: f64,
    /// Ignored when a signal file is given.
    #[arg(long, default_value_t = crate::sim::DEFAULT_HORIZON)]
    pub horizon: f64,
    /// Initial base state, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    /// Initial fiber state, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub v0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args)]
pub struct ObservabilityArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Load { path: String, source: LoadError },
    #[error("--box: expected 1 or {expected} intervals, got {got}")]
    Box { expected: usize, got: usize },
    #[error("{0}")]
    Usage(String),
    #[error("signal file {path}: {message}")]
    Signal { path: String, message: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Failed(String),
    #[error("cannot write {path}: {message}")]
    Write { path: String, message: String },
}

/// A finished command: the report and its exit code.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Value,
    pub exit_code: i32,
}

fn load(common: &CommonArgs) -> Result<LoadedSystem, CliError> {
    let wrap = |source| CliError::Load {
        path: common.path.display().to_string(),
        source,
    };
    let file = crate::io::SystemFile::read(&common.path).map_err(wrap)?;
    let bounds = match &common.bounds {
        None => None,
        Some(BoxArg(b)) if b.len() == 1 => Some(vec![b[0]; file.dim]),
        Some(BoxArg(b)) if b.len() == file.dim => Some(b.clone()),
        Some(BoxArg(b)) => {
            return Err(CliError::Box {
                expected: file.dim,
                got: b.len(),
            })
        }
    };
    file.load(bounds).map_err(wrap)
}

fn header(command: &str, common: &CommonArgs, loaded: &LoadedSystem, depth: Value) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("schema_version".into(), json!(SCHEMA_VERSION));
    m.insert("tool".into(), json!("gradiometer"));
    m.insert("tool_version".into(), json!(env!("CARGO_PKG_VERSION")));
    m.insert("command".into(), json!(command));
    m.insert("input".into(), json!(common.path.display().to_string()));
    m.insert("seed".into(), json!(common.seed));
    m.insert("samples".into(), json!(common.samples));
    m.insert("depth".into(), depth);
    m.insert(
        "tolerances".into(),
        json!({"identity": common.tol, "simulation": common.sim_tol, "rank": crate::linalg::RANK_TOL}),
    );
    m.insert("box".into(), json!(loaded.system.chart().bounds()));
    m
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    json!((0..m.nrows()).map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect::<Vec<_>>()).collect::<Vec<_>>())
}

fn verdict_json(kind: &str, fields: Value) -> Value {
    let mut v = json!({ "kind": kind });
    if let (Some(obj), Value::Object(extra)) = (v.as_object_mut(), fields) {
        obj.extend(extra);
    }
    v
}

fn rank_json(r: &RankReport) -> Value {
    json!({
        "depth": r.depth,
        "dim": r.dim,
        "min_rank": r.min_rank,
        "max_rank": r.max_rank,
        "full": r.full,
        "constant": r.constant,
        "witness": r.witness,
    })
}

fn condition_json(name: &str, depth: usize, c: &ConditionReport) -> Value {
    json!({
        "name": name,
        "status": if c.holds { "passed" } else { "failed" },
        "depth": depth,
        "identities": c.identities,
        "residual": c.max_residual,
        "witness": c.worst.as_ref().map(|w| json!({
            "identity": w.identity,
            "point": w.point,
            "lhs": w.lhs,
            "rhs": w.rhs,
        })),
    })
}

pub fn cmd_characterize(args: &CharacterizeArgs) -> Result<Outcome, CliError> {
    let loaded = load(&args.common)?;
    let opts = CharacterizeOptions {
        depth: args.depth,
        samples: args.common.samples,
        seed: args.common.seed,
        tol: Tolerances {
            identity: args.common.tol,
            simulation: args.common.sim_tol,
            ..Tolerances::default()
        },
        step: args.step,
        horizon: args.horizon,
        mode: if args.numeric {
            ReconstructionMode::Numeric
        } else {
            ReconstructionMode::Auto
        },
        simulate: !args.no_sim,
    };
    let report = characterize(&loaded.system, &loaded.connection, &opts);
    let mut m = header("characterize", &args.common, &loaded, json!(args.depth));
    m.insert("step".into(), json!(args.step));
    m.insert("horizon".into(), json!(args.horizon));
    m.insert("stages".into(), serde_json::to_value(&report.stages).expect("stages serialize"));
    m.insert("basis".into(), json!(report.basis));
    let center = loaded.system.chart().center();
    m.insert(
        "candidate".into(),
        match &report.candidate {
            Some(g) => json!({
                "kind": if g.is_symbolic() { "symbolic" } else { "numeric" },
                "center": center,
                "at_center": g.at(&center).map(|v| matrix_json(&v)).unwrap_or(Value::Null),
            }),
            None => Value::Null,
        },
    );
    m.insert("verdict".into(), serde_json::to_value(&report.verdict).expect("verdict serializes"));
    m.insert(
        "summary".into(),
        json!(format!("{} up to depth {}", report.verdict.label(), args.depth)),
    );
    Ok(Outcome {
        exit_code: report.verdict.exit_code(),
        report: Value::Object(m),
    })
}

pub fn cmd_compat(args: &CompatArgs) -> Result<Outcome, CliError> {
    let loaded = load(&args.common)?;
    let (s, conn) = (&loaded.system, &loaded.connection);
    let points = s.chart().sample_points(args.common.samples, args.common.seed);
    let tol = args.common.tol;
    let failed = |e: &dyn std::fmt::Display| CliError::Failed(e.to_string());
    let (depth, stages, holds, extra) = match args.basis_depth {
        Some(d) => {
            let c = check_compatibility_on_basis(s, conn, d, &points, tol, crate::linalg::RANK_TOL)
                .map_err(|e| failed(&e))?;
            let stages = vec![condition_json("condition_a", d, &c.a), condition_json("condition_b", d, &c.b)];
            (json!({"basis": d}), stages, c.holds(), Some(json!(c.basis)))
        }
        None => {
            let a = check_condition_a(s, conn, args.depth, &points, tol).map_err(|e| failed(&e))?;
            let b = check_condition_b(s, conn, args.depth_b, &points, tol).map_err(|e| failed(&e))?;
            let stages = vec![
                condition_json("condition_a", args.depth, &a),
                condition_json("condition_b", args.depth_b, &b),
            ];
            (json!({"a": args.depth, "b": args.depth_b}), stages, a.holds && b.holds, None)
        }
    };
    let mut m = header("compat", &args.common, &loaded, depth);
    if let Some(basis) = extra {
        m.insert("basis".into(), basis);
    }
    let failing = stages.iter().find(|st| st["status"] == "failed").cloned();
    m.insert("stages".into(), json!(stages));
    let verdict = match &failing {
        None => verdict_json("compatible", json!({})),
        Some(st) => verdict_json(
            "incompatible",
            json!({"stage": st["name"], "witness": st["witness"]}),
        ),
    };
    m.insert("verdict".into(), verdict);
    Ok(Outcome {
        exit_code: if holds { 0 } else { 1 },
        report: Value::Object(m),
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SignalFile {
    duration: f64,
    breakpoints: Vec<f64>,
    values: Vec<Vec<f64>>,
}

fn read_signals(path: &Path, m: usize, seed: u64) -> Result<(ControlSignal, ControlSignal), CliError> {
    let err = |message: String| CliError::Signal {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let f: SignalFile = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    let cols = f.values.first().map_or(0, Vec::len);
    let part = |lo: usize, hi: usize| {
        ControlSignal::new(
            f.breakpoints.clone(),
            f.values.iter().map(|v| v[lo..hi].to_vec()).collect(),
            f.duration,
        )
        .map_err(|e| err(e.to_string()))
    };
    if f.values.iter().any(|v| v.len() != cols) {
        return Err(err("rows differ in length".into()));
    }
    if cols == 2 * m {
        Ok((part(0, m)?, part(m, 2 * m)?))
    } else if cols == m {
        Ok((part(0, m)?, default_signals(m, f.duration, seed).1))
    } else {
        Err(err(format!("expected {m} or {} columns, got {cols}", 2 * m)))
    }
}

fn write_csv(path: &Path, traj: &crate::sim::Trajectory) -> Result<(), CliError> {
    let err = |message: String| CliError::Write {
        path: path.display().to_string(),
        message,
    };
    let file = File::create(path).map_err(|e| err(e.to_string()))?;
    traj.write_csv(BufWriter::new(file)).map_err(|e| err(e.to_string()))
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Outcome, CliError> {
    let loaded = load(&args.common)?;
    let s = &loaded.system;
    let (n, m) = (s.dim(), s.input_count());
    let seed = args.common.seed;
    let (u, up) = match &args.signal {
        Some(p) => read_signals(p, m, seed)?,
        None => default_signals(m, args.horizon, seed),
    };
    let horizon = u.duration();
    let (dx0, dv0) = default_initial_condition(s, seed);
    let x0 = args.x0.clone().unwrap_or(dx0);
    let v0 = args.v0.clone().unwrap_or(dv0);
    if x0.len() != n || v0.len() != n {
        return Err(CliError::Usage(format!("--x0 and --v0 need {n} entries each")));
    }
    let p = prolong(s).map_err(|e| CliError::Failed(e.to_string()))?;
    let mut xp0 = x0.clone();
    xp0.extend(&v0);
    let traj = integrate(
        &p.system,
        &xp0,
        &ControlSignal::stack(&u, &up),
        args.step,
        horizon,
        Some(&default_guard(&p.system)),
    )?;
    if let Some(path) = &args.csv {
        write_csv(path, &traj)?;
    }

    let points = s.chart().sample_points(args.common.samples, seed);
    let metric: Result<(Box<dyn MetricField>, &str), String> = match &loaded.metric {
        Some(g) => Ok((Box::new(g.clone()), "file")),
        None => reconstruct_metric(
            s,
            &loaded.connection,
            args.depth,
            &points,
            args.common.tol,
            ReconstructionMode::Auto,
        )
        .map(|r| (Box::new(r.candidate) as Box<dyn MetricField>, "reconstructed"))
        .map_err(|e| e.to_string()),
    };
    let (conjugacy, verdict, exit_code) = match metric {
        Ok((g, source)) => {
            let r = conjugacy_check(s, g.as_ref(), &loaded.connection, &x0, &v0, &u, &up, args.step, horizon)?;
            let ok = r.residual <= args.common.sim_tol;
            (
                json!({
                    "status": if ok { "passed" } else { "failed" },
                    "metric": source,
                    "residual": r.residual,
                    "state_residual": r.state_residual,
                    "output_residual": r.output_residual,
                    "witness_time": r.witness_time,
                    "steps": r.steps,
                }),
                if ok {
                    verdict_json("conjugate", json!({}))
                } else {
                    verdict_json("not-conjugate", json!({"witness_time": r.witness_time}))
                },
                if ok { 0 } else { 1 },
            )
        }
        Err(reason) => (
            json!({"status": "skipped", "reason": reason}),
            verdict_json("inconclusive", json!({"reason": reason})),
            2,
        ),
    };
    let mut m = header("simulate", &args.common, &loaded, json!(args.depth));
    m.insert("step".into(), json!(args.step));
    m.insert("horizon".into(), json!(horizon));
    m.insert("x0".into(), json!(x0));
    m.insert("v0".into(), json!(v0));
    m.insert("signal".into(), json!({
        "breakpoints": u.breakpoints(),
        "values": u.values(),
        "prolonged_breakpoints": up.breakpoints(),
        "prolonged_values": up.values(),
    }));
    m.insert(
        "trajectory".into(),
        json!({
            "steps": traj.times.len() - 1,
            "final_state": traj.final_state(),
            "csv": args.csv.as_ref().map(|p| p.display().to_string()),
        }),
    );
    m.insert("conjugacy".into(), conjugacy);
    m.insert("verdict".into(), verdict);
    Ok(Outcome {
        report: Value::Object(m),
        exit_code,
    })
}

pub fn cmd_observability(args: &ObservabilityArgs) -> Result<Outcome, CliError> {
    let loaded = load(&args.common)?;
    let s = &loaded.system;
    let points = s.chart().sample_points(args.common.samples, args.common.seed);
    let r = observability_rank(s, args.depth, &points, args.common.tol, crate::linalg::RANK_TOL)
        .map_err(|e| CliError::Failed(e.to_string()))?;
    let mut m = header("observability", &args.common, &loaded, json!(args.depth));
    m.insert("rank".into(), rank_json(&r));
    let (verdict, exit_code) = if r.full {
        (verdict_json("observable", json!({"rank": r.min_rank})), 0)
    } else if r.constant {
        (
            verdict_json("rank-deficient", json!({"rank": r.min_rank, "witness": r.witness})),
            1,
        )
    } else {
        (
            verdict_json(
                "inconclusive",
                json!({"reason": format!("rank varies between {} and {}", r.min_rank, r.max_rank)}),
            ),
            2,
        )
    };
    m.insert("verdict".into(), verdict);
    m.insert(
        "summary".into(),
        json!(format!("rank {} of {} up to depth {}", r.min_rank, r.dim, args.depth)),
    );
    Ok(Outcome {
        report: Value::Object(m),
        exit_code,
    })
}

fn common(cmd: &Command) -> &CommonArgs {
    match cmd {
        Command::Characterize(a) => &a.common,
        Command::Compat(a) => &a.common,
        Command::Simulate(a) => &a.common,
        Command::Observability(a) => &a.common,
    }
}

/// Runs a parsed command and stamps the report with its wall time.
pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let mut outcome = match &cli.command {
        Command::Characterize(a) => cmd_characterize(a),
        Command::Compat(a) => cmd_compat(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Observability(a) => cmd_observability(a),
    }?;
    if let Value::Object(m) = &mut outcome.report {
        m.insert("timing_ms".into(), json!(start.elapsed().as_millis() as u64));
    }
    Ok(outcome)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Write {
            path: path.display().to_string(),
            message: e.to_string(),
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}").map_err(|e| CliError::Write {
                path: "stdout".into(),
                message: e.to_string(),
            })
        }
    }
}

/// Entry point; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = execute(&cli).and_then(|o| {
        let text = serde_json::to_string_pretty(&o.report).expect("reports serialize");
        let out = common(&cli.command).out.as_deref();
        emit(out, &text)?;
        if out.is_some() {
            if let Some(v) = o.report.get("verdict").and_then(|v| v.get("kind")) {
                println!("{}", v.as_str().unwrap_or_default());
            }
        }
        Ok(o.exit_code)
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_argument() {
        assert_eq!("-1:1".parse::<BoxArg>().unwrap(), BoxArg(vec![(-1.0, 1.0)]));
        assert_eq!(
            "-1:1, 0:2".parse::<BoxArg>().unwrap(),
            BoxArg(vec![(-1.0, 1.0), (0.0, 2.0)])
        );
        assert!("1:1".parse::<BoxArg>().is_err());
        assert!("1".parse::<BoxArg>().is_err());
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from(["gradiometer", "compat", "f.json", "--depth-b", "2", "--box", "-2:2"]).unwrap();
        let Command::Compat(a) = cli.command else { panic!() };
        assert_eq!((a.depth, a.depth_b), (2, 2));
        assert_eq!(a.common.bounds, Some(BoxArg(vec![(-2.0, 2.0)])));
        assert_eq!(a.common.tol, 1e-8);
    }

    #[test]
    fn missing_file_is_an_error() {
        assert_eq!(run(["gradiometer", "characterize", "/nonexistent/system.json"]), EXIT_ERROR);
        assert_eq!(run(["gradiometer", "bogus"]), EXIT_ERROR);
    }
}
