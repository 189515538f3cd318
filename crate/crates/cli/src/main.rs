//! `gradest`: declarative runner for the gradient-estimate laboratory.

mod config;
mod pipeline;

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use gradest_core::cutoff::{cutoff_profile, measure_cutoff_constants, CutoffConstants};
use gradest_core::estimate::BoundaryTraces;
use gradest_core::solver::{read_field, write_field, Provenance};
use gradest_core::{SolutionField, SourceAnalysis};
use serde::Serialize;
use serde_json::json;

use config::{parse_config, LoadedConfig};
use pipeline::{
    build_field, exact_data_error, joint_calibrations, node_rows, residual_of, run_checks, CheckRecord, FieldContext,
    Selection,
};

pub const SCHEMA: u32 = 1;

#[derive(Debug)]
pub enum CliError {
    Parse(String),
    Build(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Parse(_) => 2,
            Self::Build(_) => 3,
            Self::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Parse(m) => write!(f, "parse error: {m}"),
            Self::Build(m) => write!(f, "build failure: {m}"),
            Self::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

const AFTER_HELP: &str = "\
Exit status: 0 all non-calibration checks pass, 1 a check is violated,
2 config parse error, 3 build failure, 4 I/O error.

Artifacts (in --out): summary.json, check_NN_<estimate>.json, config.toml
(normalized), run_meta.json (timestamps; excluded from the deterministic
payload), and when requested field.dat, nodes.csv, cutoff_profile_a<a>.csv.

nodes.csv columns: t, x1..xn, u, v = ln(u/M), grad_v = |∇v|_g,
w = grad_v²/(1 − v)², region (B1, B2, B3, Interior).
compare CSV columns: estimate, c, sup_rhs, max_ratio, violations.
cutoff profile CSV columns: r, psi, d1, d2, ratio.
refinement.json (with --refine): one row per level with h, dt,
pde_residual, max_error (exact data only) and observed orders.";

#[derive(Parser)]
#[command(name = "gradest", version, about = "Numerical checks of logarithmic gradient bounds", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML). `calibrate` accepts several for a joint fit.
    #[arg(long, required = true)]
    config: Vec<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Dyadic refinement study over levels 0..=N.
    #[arg(long, value_name = "N")]
    refine: Option<u32>,
}

#[derive(Args, Clone)]
struct WithField {
    #[command(flatten)]
    common: Common,
    /// Use a previously written field file instead of building the solution.
    #[arg(long)]
    field: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the solution and run every check.
    Run(Common),
    /// Measure the cut-off constants for each configured `a`.
    CutoffCheck(Common),
    /// Build the solution and write it as a field file.
    Solve(Common),
    /// Fixed-constant bound checks and the Lemma residual.
    Verify(WithField),
    /// Calibrate the constant; several configs give a joint calibration.
    Calibrate(WithField),
    /// Bound comparisons.
    Compare(WithField),
}

fn io<E: std::fmt::Display>(path: &Path) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(io(path))?;
    text.push('\n');
    write_text(path, &text)
}

fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let src = fs::read_to_string(path).map_err(io(path))?;
    parse_config(&path.display().to_string(), &src)
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

#[derive(Serialize)]
struct FieldSummary {
    id: String,
    provenance: Provenance,
    h: f64,
    dt: f64,
    nodes: usize,
    levels: usize,
    m_bound: f64,
    u_min: f64,
    u_max: f64,
    pde_residual: Option<f64>,
    max_error: Option<f64>,
}

fn field_summary(l: &LoadedConfig, f: &SolutionField) -> FieldSummary {
    let (u_min, u_max) = f.value_range();
    FieldSummary {
        id: f.id.clone(),
        provenance: f.provenance().clone(),
        h: f.h(),
        dt: f.dt(),
        nodes: f.lattice().len(),
        levels: f.times().len(),
        m_bound: f.m_bound(),
        u_min,
        u_max,
        pde_residual: residual_of(l, f),
        max_error: exact_data_error(l, f),
    }
}

#[derive(Serialize)]
struct CheckSummary {
    index: usize,
    estimate: String,
    kind: &'static str,
    calibration: bool,
    passed: bool,
    c_used: Option<f64>,
    c_star: Option<f64>,
    winner: Option<String>,
    file: String,
}

fn kind_name(r: &CheckRecord) -> &'static str {
    match r.result {
        pipeline::CheckResult::Bound { .. } => "bound",
        pipeline::CheckResult::Calibration { .. } => "calibration",
        pipeline::CheckResult::Comparison { .. } => "comparison",
        pipeline::CheckResult::Lemma { .. } => "lemma",
        pipeline::CheckResult::Infeasible { .. } => "infeasible",
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    schema: u32,
    command: &'a str,
    config_sha256: &'a str,
    config: &'a str,
    field: FieldSummary,
    analysis: SourceAnalysis,
    traces: BoundaryTraces,
    checks: Vec<CheckSummary>,
    passed: bool,
}

/// Outcome of writing one field's artifacts: whether every non-calibration check passed.
fn emit_field(
    command: &str,
    l: &LoadedConfig,
    field: &SolutionField,
    sel: Option<Selection>,
    dir: &Path,
) -> Result<(bool, FieldSummary, Vec<CheckRecord>), CliError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    write_text(&dir.join("config.toml"), &l.normalized)?;
    let outputs = &l.config.outputs;
    if outputs.field || command == "solve" {
        let path = dir.join("field.dat");
        let file = fs::File::create(&path).map_err(io(&path))?;
        write_field(field, BufWriter::new(file)).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    if outputs.node_csv {
        let mut text = String::from("t,");
        text.push_str(&(1..=field.metric().dim()).map(|i| format!("x{i}")).collect::<Vec<_>>().join(","));
        text.push_str(",u,v,grad_v,w,region\n");
        for row in node_rows(field)? {
            text.push_str(&row);
            text.push('\n');
        }
        write_text(&dir.join("nodes.csv"), &text)?;
    }
    let ctx = FieldContext::new(l, field)?;
    let records = match sel {
        Some(s) => run_checks(l, &ctx, s)?,
        None => Vec::new(),
    };
    let mut checks = Vec::with_capacity(records.len());
    for r in &records {
        let file = format!("check_{:02}_{}.json", r.index, r.estimate);
        write_json(
            &dir.join(&file),
            &json!({ "schema": SCHEMA, "config_sha256": l.hash, "field_id": field.id, "check": r }),
        )?;
        if let pipeline::CheckResult::Comparison { comparison, .. } = &r.result {
            let mut csv = String::from("estimate,c,sup_rhs,max_ratio,violations\n");
            for row in &comparison.rows {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    row.estimate_id, row.c, row.sup_rhs, row.max_ratio, row.violation_count
                ));
            }
            write_text(&dir.join(format!("check_{:02}_compare.csv", r.index)), &csv)?;
        }
        checks.push(CheckSummary {
            index: r.index,
            estimate: r.estimate.clone(),
            kind: kind_name(r),
            calibration: r.calibration,
            passed: r.passed,
            c_used: r.c_used(),
            c_star: r.c_star(),
            winner: r.winner(),
            file,
        });
    }
    let passed = records.iter().all(|r| r.calibration || r.passed);
    let summary = Summary {
        schema: SCHEMA,
        command,
        config_sha256: &l.hash,
        config: &l.normalized,
        field: field_summary(l, field),
        analysis: ctx.analysis,
        traces: ctx.measured,
        checks,
        passed,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok((passed, summary.field, records))
}

fn order(coarse: Option<f64>, fine: Option<f64>) -> Option<f64> {
    match (coarse, fine) {
        (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some((a / b).log2()),
        _ => None,
    }
}

fn obtain_field(l: &LoadedConfig, field: Option<&Path>, level: u32) -> Result<SolutionField, CliError> {
    let Some(path) = field else { return build_field(l, level) };
    let file = fs::File::open(path).map_err(io(path))?;
    let f = read_field(BufReader::new(file)).map_err(|e| CliError::Build(format!("{}: {e}", path.display())))?;
    if f.domain() != &l.config.domain || f.metric().descriptor() != l.config.metric {
        return Err(CliError::Build(format!("{}: domain or metric differs from the config", path.display())));
    }
    Ok(f)
}

fn run_fields(command: &str, c: &Common, field: Option<&Path>, sel: Option<Selection>) -> Result<bool, CliError> {
    if c.config.len() != 1 {
        return Err(CliError::Parse(format!("`{command}` takes exactly one --config")));
    }
    let l = load(&c.config[0])?;
    let Some(n) = c.refine else {
        let f = obtain_field(&l, field, 0)?;
        return Ok(emit_field(command, &l, &f, sel, &c.out)?.0);
    };
    if field.is_some() {
        return Err(CliError::Parse("--refine builds its own fields and cannot take --field".into()));
    }
    let mut ok = true;
    let mut rows = Vec::new();
    let mut prev: Option<FieldSummary> = None;
    for level in 0..=n {
        let f = build_field(&l, level)?;
        let (passed, fs, records) = emit_field(command, &l, &f, sel, &c.out.join(format!("level_{level}")))?;
        ok &= passed;
        let c_star: Vec<_> = records.iter().map(|r| json!({ "index": r.index, "c_star": r.c_star() })).collect();
        rows.push(json!({
            "level": level,
            "h": fs.h,
            "dt": fs.dt,
            "pde_residual": fs.pde_residual,
            "max_error": fs.max_error,
            "residual_order": prev.as_ref().and_then(|p| order(p.pde_residual, fs.pde_residual)),
            "error_order": prev.as_ref().and_then(|p| order(p.max_error, fs.max_error)),
            "calibrations": c_star,
        }));
        prev = Some(fs);
    }
    write_json(&c.out.join("refinement.json"), &json!({ "schema": SCHEMA, "config_sha256": l.hash, "levels": rows }))?;
    Ok(ok)
}

fn cutoff_check(c: &Common) -> Result<bool, CliError> {
    if c.config.len() != 1 {
        return Err(CliError::Parse("`cutoff-check` takes exactly one --config".into()));
    }
    let l = load(&c.config[0])?;
    fs::create_dir_all(&c.out).map_err(io(&c.out))?;
    let cut = &l.config.cutoff;
    let mut results = Vec::new();
    let mut stable = true;
    for &a in &cut.a {
        let p = l.config.domain.cutoff_params(a);
        let k: CutoffConstants =
            measure_cutoff_constants(&p, cut.points).map_err(|e| CliError::Build(e.to_string()))?;
        let change = k.max_relative_change();
        println!("a = {a}: C_space = {}, C_time = {}", k.c_space, k.c_time);
        stable &= change < 0.05;
        if l.config.outputs.cutoff_profile {
            let mut csv = String::from("r,psi,d1,d2,ratio\n");
            for r in cutoff_profile(&p, cut.points).map_err(|e| CliError::Build(e.to_string()))? {
                csv.push_str(&format!("{},{},{},{},{}\n", r.r, r.psi, r.d1, r.d2, r.ratio));
            }
            write_text(&c.out.join(format!("cutoff_profile_a{a}.csv")), &csv)?;
        }
        results.push(json!({ "a": a, "constants": k, "max_relative_change": change, "stable": change < 0.05 }));
    }
    write_text(&c.out.join("config.toml"), &l.normalized)?;
    write_json(
        &c.out.join("cutoff.json"),
        &json!({ "schema": SCHEMA, "config_sha256": l.hash, "points": cut.points, "results": results, "stable": stable }),
    )?;
    Ok(stable)
}

fn calibrate(w: &WithField) -> Result<bool, CliError> {
    if w.common.config.len() == 1 {
        return run_fields("calibrate", &w.common, w.field.as_deref(), Some(Selection::Calibrate));
    }
    if w.field.is_some() || w.common.refine.is_some() {
        return Err(CliError::Parse("joint calibration takes neither --field nor --refine".into()));
    }
    let mut configs = Vec::with_capacity(w.common.config.len());
    for path in &w.common.config {
        let l = load(path)?;
        let f = build_field(&l, 0)?;
        configs.push((l, f));
    }
    let joint = joint_calibrations(&configs)?;
    fs::create_dir_all(&w.common.out).map_err(io(&w.common.out))?;
    let hashes: Vec<&str> = configs.iter().map(|(l, _)| l.hash.as_str()).collect();
    write_json(
        &w.common.out.join("joint_calibration.json"),
        &json!({ "schema": SCHEMA, "config_sha256": hashes, "calibrations": joint }),
    )?;
    // calibrations never fail the run
    Ok(true)
}

fn dispatch(cmd: &Command) -> Result<bool, CliError> {
    match cmd {
        Command::Run(c) => run_fields("run", c, None, Some(Selection::All)),
        Command::CutoffCheck(c) => cutoff_check(c),
        Command::Solve(c) => run_fields("solve", c, None, None),
        Command::Verify(w) => run_fields("verify", &w.common, w.field.as_deref(), Some(Selection::Verify)),
        Command::Calibrate(w) => calibrate(w),
        Command::Compare(w) => run_fields("compare", &w.common, w.field.as_deref(), Some(Selection::Compare)),
    }
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::Run(c) | Command::CutoffCheck(c) | Command::Solve(c) => c,
        Command::Verify(w) | Command::Calibrate(w) | Command::Compare(w) => &w.common,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let c = common(&cli.command);
    if let Some(n) = c.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("gradest: cannot size the thread pool: {e}");
        }
    }
    let started = unix_now();
    let clock = Instant::now();
    let result = dispatch(&cli.command);
    let code = match &result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("gradest: {e}");
            e.code()
        }
    };
    if c.out.is_dir() {
        let meta = json!({
            "started_unix": started,
            "finished_unix": unix_now(),
            "elapsed_seconds": clock.elapsed().as_secs_f64(),
            "threads": rayon::current_num_threads(),
            "exit_code": code,
            "version": env!("CARGO_PKG_VERSION"),
        });
        let path = c.out.join("run_meta.json");
        if let Err(e) = write_json(&path, &meta) {
            eprintln!("gradest: {e}");
        }
    }
    let _ = std::io::stderr().flush();
    ExitCode::from(code)
}
