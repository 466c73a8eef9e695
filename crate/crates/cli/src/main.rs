//! `spnperf`: evaluate stochastic Petri nets and the Fabric pipeline model.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use spnperf::experiments::{
    default_workers, doe_2k, doe_cells_csv, doe_effects_csv, plot_csv, run_sweep, sweep_csv,
    BackendKind, DoeSpec, ExperimentError, RunSettings, SweepSpec,
};
use spnperf::hlf::{
    build_hlf_net, default_sim_config, evaluate_hlf, HlfEvalError, HlfMetrics, HlfParams,
    METRIC_NAMES,
};
use spnperf::{
    evaluate, BackendConfig, EvalError, EvaluationResult, NetFile, PetriNet, SimConfig, SimError,
    SolverConfig, SolverError,
};

const EXIT_FAILURE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_STATE_SPACE: u8 = 3;
const EXIT_NONCONVERGENCE: u8 = 4;

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum BackendArg {
    Sim,
    Solver,
}

#[derive(Debug, Parser)]
#[command(
    name = "spnperf",
    version,
    about = "Stochastic Petri net performance evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Debug, Clone, clap::Args, Serialize)]
struct RunFlags {
    /// Evaluation backend; sweep and doe specs may set their own.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    #[serde(skip)]
    out: PathBuf,
    #[arg(long, global = true)]
    max_states: Option<usize>,
    /// Phases per deterministic transition for the solver.
    #[arg(long, global = true)]
    erlang_k: Option<u32>,
    #[arg(long, global = true)]
    warmup_ms: Option<f64>,
    #[arg(long, global = true)]
    batches: Option<usize>,
    #[arg(long, global = true)]
    batch_ms: Option<f64>,
    #[arg(long, global = true)]
    confidence: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a net, model parameter or experiment file.
    Validate { file: PathBuf },
    /// Evaluate a net file or a model parameter file.
    Evaluate { file: PathBuf },
    /// Run a parameter sweep.
    Sweep { spec: PathBuf },
    /// Run a 2^k factorial design.
    Doe { spec: PathBuf },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

fn fail(code: u8, msg: impl std::fmt::Display) -> Failure {
    Failure {
        code,
        msg: msg.to_string(),
    }
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Validate { file } => cmd_validate(file),
        Command::Evaluate { file } => cmd_evaluate(file, &cli.run),
        Command::Sweep { spec } => cmd_sweep(spec, &cli.run),
        Command::Doe { spec } => cmd_doe(spec, &cli.run),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

enum Input {
    Net(PetriNet),
    Params(HlfParams),
    Sweep(Box<SweepSpec>),
    Doe(Box<DoeSpec>),
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| fail(EXIT_VALIDATION, format!("{}: {e}", path.display())))
}

/// Classify a JSON input by its top-level keys and parse it.
fn load(path: &Path, text: &str) -> Result<Input, Failure> {
    let at = |line: usize, column: usize, msg: &str| {
        fail(
            EXIT_VALIDATION,
            format!("{}:{line}:{column}: {msg}", path.display()),
        )
    };
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| at(e.line(), e.column(), &e.to_string()))?;
    let has = |k: &str| value.get(k).is_some();
    let invalid =
        |e: &dyn std::fmt::Display| fail(EXIT_VALIDATION, format!("{}: {e}", path.display()));
    if has("places") {
        let file = NetFile::from_json(text).map_err(|e| invalid(&e))?;
        file.to_net().map(Input::Net).map_err(|e| invalid(&e))
    } else if has("axes") {
        SweepSpec::from_json(text)
            .map(|s| Input::Sweep(Box::new(s)))
            .map_err(|e| invalid(&e))
    } else if has("factors") {
        DoeSpec::from_json(text)
            .map(|s| Input::Doe(Box::new(s)))
            .map_err(|e| invalid(&e))
    } else {
        let p: HlfParams =
            serde_json::from_str(text).map_err(|e| at(e.line(), e.column(), &e.to_string()))?;
        build_hlf_net(&p).map_err(|e| invalid(&e))?;
        Ok(Input::Params(p))
    }
}

fn cmd_validate(file: &Path) -> CmdResult {
    let text = read(file)?;
    let what = match load(file, &text)? {
        Input::Net(net) => format!(
            "net `{}`: {} places, {} transitions, {} arcs",
            net.name(),
            net.places().len(),
            net.transitions().len(),
            net.arcs().len()
        ),
        Input::Params(p) => {
            let net = build_hlf_net(&p).expect("checked in load");
            format!(
                "model parameters: {} places, {} transitions",
                net.places().len(),
                net.transitions().len()
            )
        }
        Input::Sweep(s) => format!("sweep `{}`: {} grid points", s.name, s.points().len()),
        Input::Doe(d) => format!("2^{} design `{}`", d.factors.len(), d.name),
    };
    eprintln!("{}: valid {what}", file.display());
    Ok(0)
}

#[derive(Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest {
    tool_version: &'static str,
    command: &'static str,
    inputs: Vec<InputDigest>,
    seed: u64,
    backend: String,
    settings: serde_json::Value,
    runtime_ms: f64,
    outputs: Vec<String>,
    warnings: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Output stem: command, input file stem and a digest of the input together
/// with the effective run settings.
fn stem(command: &str, file: &Path, text: &str, settings: &serde_json::Value) -> String {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update([0]);
    h.update(text.as_bytes());
    h.update([0]);
    h.update(settings.to_string().as_bytes());
    let digest = hex::encode(h.finalize());
    let name = file.file_stem().and_then(|s| s.to_str()).unwrap_or("input");
    format!("{command}-{name}-{}", &digest[..16])
}

/// Write a result file. An identical existing file is kept; a differing one
/// is never replaced.
fn write_result(dir: &Path, name: &str, content: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    if let Ok(existing) = fs::read(&path) {
        if existing == content.as_bytes() {
            return Ok(());
        }
        return Err(fail(
            EXIT_FAILURE,
            format!(
                "refusing to overwrite {}: existing content differs",
                path.display()
            ),
        ));
    }
    fs::write(&path, content).map_err(|e| fail(EXIT_FAILURE, format!("{}: {e}", path.display())))
}

fn write_manifest(dir: &Path, stem: &str, manifest: &RunManifest) -> Result<(), Failure> {
    let path = dir.join(format!("{stem}.manifest.json"));
    let text = serde_json::to_string_pretty(manifest).expect("manifest serialises") + "\n";
    fs::write(&path, text).map_err(|e| fail(EXIT_FAILURE, format!("{}: {e}", path.display())))
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| fail(EXIT_FAILURE, format!("{}: {e}", dir.display())))
}

fn sim_config(base: SimConfig, f: &RunFlags) -> SimConfig {
    let mut cfg = base;
    if let Some(v) = f.warmup_ms {
        cfg.warmup_time_ms = v;
    }
    if let Some(v) = f.batches {
        cfg.batch_count = v;
    }
    if let Some(v) = f.batch_ms {
        cfg.batch_length_ms = v;
    }
    if let Some(v) = f.confidence {
        cfg.confidence_level = v;
    }
    cfg.max_time_ms = cfg.horizon_ms();
    cfg
}

fn backend_config(f: &RunFlags, hlf: Option<&HlfParams>) -> BackendConfig {
    let seed = f.seed.unwrap_or(1);
    match f.backend.unwrap_or(BackendArg::Sim) {
        BackendArg::Sim => {
            let base = match hlf {
                Some(p) => default_sim_config(p, seed),
                None => SimConfig {
                    seed,
                    ..SimConfig::default()
                },
            };
            BackendConfig::Simulation(sim_config(base, f))
        }
        BackendArg::Solver => {
            let d = SolverConfig::default();
            BackendConfig::Solver {
                solver: SolverConfig {
                    max_states: f.max_states.unwrap_or(d.max_states),
                    ..d
                },
                erlang_k: f.erlang_k.unwrap_or(20),
            }
        }
    }
}

fn eval_code(e: &EvalError) -> u8 {
    match e {
        EvalError::Sim(SimError::Config(_) | SimError::UnknownPlace(_)) => EXIT_VALIDATION,
        EvalError::Sim(SimError::VanishingLoop { .. }) => EXIT_FAILURE,
        EvalError::Solver(SolverError::StateSpaceExceeded { .. }) => EXIT_STATE_SPACE,
        EvalError::Solver(SolverError::NoConvergence { .. }) => EXIT_NONCONVERGENCE,
        EvalError::Solver(SolverError::Net(_) | SolverError::InvalidPhases) => EXIT_VALIDATION,
        EvalError::Solver(_) => EXIT_FAILURE,
    }
}

fn hlf_code(e: &HlfEvalError) -> u8 {
    match e {
        HlfEvalError::Params(_) => EXIT_VALIDATION,
        HlfEvalError::Eval(e) => eval_code(e),
        HlfEvalError::Lookup(_) => EXIT_FAILURE,
    }
}

fn fmt_value(v: f64, hw: f64) -> String {
    if hw > 0.0 {
        format!("{v:.6} ± {hw:.2e}")
    } else {
        format!("{v:.6}")
    }
}

fn result_csv(r: &EvaluationResult, metrics: Option<&HlfMetrics>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut row = |fields: [&str; 4]| w.write_record(fields).expect("write to memory");
    row(["kind", "id", "value", "half_width"]);
    if let Some(m) = metrics {
        for name in METRIC_NAMES {
            row([
                "metric",
                name,
                &m.get(name).expect("known metric").to_string(),
                "",
            ]);
        }
    }
    for p in &r.places {
        row([
            "place_mean",
            &p.id,
            &p.mean.to_string(),
            &p.half_width.to_string(),
        ]);
    }
    for t in &r.transitions {
        row([
            "firing_rate",
            &t.id,
            &t.rate.to_string(),
            &t.half_width.to_string(),
        ]);
    }
    for p in &r.probes {
        row([
            "probe",
            &p.name,
            &p.probability.to_string(),
            &p.half_width.to_string(),
        ]);
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 output")
}

#[derive(Serialize)]
struct EvaluateOutput<'a> {
    manifest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<&'a HlfMetrics>,
    result: &'a EvaluationResult,
}

fn cmd_evaluate(file: &Path, flags: &RunFlags) -> CmdResult {
    let text = read(file)?;
    let input = load(file, &text)?;
    let started = Instant::now();
    let (backend, result, metrics) = match input {
        Input::Net(net) => {
            let backend = backend_config(flags, None);
            let r = evaluate(&net, &backend, &[]).map_err(|e| fail(eval_code(&e), e))?;
            (backend, r, None)
        }
        Input::Params(p) => {
            let backend = backend_config(flags, Some(&p));
            let (m, r) = evaluate_hlf(&p, &backend).map_err(|e| fail(hlf_code(&e), e))?;
            (backend, r, Some(m))
        }
        Input::Sweep(_) | Input::Doe(_) => {
            return Err(fail(
                EXIT_VALIDATION,
                "evaluate takes a net or model parameter file; use sweep or doe",
            ));
        }
    };
    let runtime_ms = started.elapsed().as_secs_f64() * 1e3;

    let settings = serde_json::to_value(&backend).expect("backend serialises");
    let stem = stem("evaluate", file, &text, &settings);
    prepare_out(&flags.out)?;
    let manifest_name = format!("{stem}.manifest.json");
    let json = serde_json::to_string_pretty(&EvaluateOutput {
        manifest: manifest_name,
        metrics: metrics.as_ref(),
        result: &result,
    })
    .expect("result serialises")
        + "\n";
    let outputs = vec![format!("{stem}.json"), format!("{stem}.csv")];
    write_result(&flags.out, &outputs[0], &json)?;
    write_result(
        &flags.out,
        &outputs[1],
        &result_csv(&result, metrics.as_ref()),
    )?;
    let mut warnings = result.warnings.clone();
    if result.nonconvergent {
        warnings.push("simulation did not converge: every relative half-width exceeds 50%".into());
    }
    write_manifest(
        &flags.out,
        &stem,
        &RunManifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            command: "evaluate",
            inputs: vec![InputDigest {
                path: file.display().to_string(),
                sha256: sha256_hex(text.as_bytes()),
            }],
            seed: flags.seed.unwrap_or(1),
            backend: result.backend.to_string(),
            settings,
            runtime_ms,
            outputs: outputs.clone(),
            warnings: warnings.clone(),
        },
    )?;

    let mut table = String::new();
    if let Some(m) = &metrics {
        for name in METRIC_NAMES {
            let _ = writeln!(
                table,
                "{name:<26} {:.6}",
                m.get(name).expect("known metric")
            );
        }
    } else {
        for p in &result.places {
            let _ = writeln!(
                table,
                "E({}){:<w$} {}",
                p.id,
                "",
                fmt_value(p.mean, p.half_width),
                w = 24usize.saturating_sub(p.id.len())
            );
        }
        for t in &result.transitions {
            let _ = writeln!(
                table,
                "rate({}){:<w$} {}",
                t.id,
                "",
                fmt_value(t.rate, t.half_width),
                w = 21usize.saturating_sub(t.id.len())
            );
        }
    }
    print!("{table}");
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "wrote {}",
        outputs
            .iter()
            .map(|o| flags.out.join(o).display().to_string())
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(if result.nonconvergent {
        EXIT_NONCONVERGENCE
    } else {
        0
    })
}

/// Apply command-line overrides on top of a spec's own run settings.
fn apply_flags(run: &mut RunSettings, seed: &mut u64, f: &RunFlags) {
    if let Some(b) = f.backend {
        run.backend = match b {
            BackendArg::Sim => BackendKind::Simulation,
            BackendArg::Solver => BackendKind::Solver,
        };
    }
    if let Some(s) = f.seed {
        *seed = s;
    }
    if f.warmup_ms.is_some() {
        run.sim.warmup_time_ms = f.warmup_ms;
    }
    if f.batches.is_some() {
        run.sim.batch_count = f.batches;
    }
    if f.batch_ms.is_some() {
        run.sim.batch_length_ms = f.batch_ms;
    }
    if f.confidence.is_some() {
        run.sim.confidence_level = f.confidence;
    }
    if f.max_states.is_some() {
        run.solver.max_states = f.max_states;
    }
    if f.erlang_k.is_some() {
        run.solver.erlang_k = f.erlang_k;
    }
}

fn experiment_code(e: &ExperimentError) -> u8 {
    match e {
        ExperimentError::Spec(_) | ExperimentError::Parse { .. } => EXIT_VALIDATION,
        ExperimentError::Cell { msg, .. } if msg.contains("state space exceeds") => {
            EXIT_STATE_SPACE
        }
        _ => EXIT_FAILURE,
    }
}

fn backend_name(k: BackendKind) -> String {
    match k {
        BackendKind::Simulation => "simulation".into(),
        BackendKind::Solver => "solver".into(),
    }
}

fn cmd_sweep(file: &Path, flags: &RunFlags) -> CmdResult {
    let text = read(file)?;
    let mut spec = match load(file, &text)? {
        Input::Sweep(s) => *s,
        _ => {
            return Err(fail(
                EXIT_VALIDATION,
                format!("{}: not a sweep spec (needs `axes`)", file.display()),
            ))
        }
    };
    apply_flags(&mut spec.run, &mut spec.seed, flags);
    let started = Instant::now();
    let rows = run_sweep(&spec, default_workers()).map_err(|e| fail(experiment_code(&e), e))?;
    let runtime_ms = started.elapsed().as_secs_f64() * 1e3;

    let settings = serde_json::to_value(&spec).expect("spec serialises");
    let stem = stem("sweep", file, &text, &settings);
    prepare_out(&flags.out)?;
    let mut outputs = vec![format!("{stem}.csv")];
    write_result(&flags.out, &outputs[0], &sweep_csv(&spec, &rows))?;
    if let Some(x) = &spec.x_axis {
        let plot = plot_csv(&spec, &rows, x).expect("x axis validated");
        outputs.push(format!("{stem}.plot.csv"));
        write_result(&flags.out, &outputs[1], &plot)?;
    }

    let mut warnings = Vec::new();
    let mut failed = 0;
    for (i, row) in rows.iter().enumerate() {
        let at = format!("point {i} ({})", point_label(&spec, &row.values));
        if let Err(msg) = &row.outcome {
            failed += 1;
            warnings.push(format!("{at}: {msg}"));
        }
        if row.nonconvergent {
            warnings.push(format!("{at}: simulation did not converge"));
        }
        warnings.extend(
            row.violations
                .iter()
                .map(|v| format!("{at}: conservation violated: {v}")),
        );
        warnings.extend(row.warnings.iter().map(|w| format!("{at}: {w}")));
    }
    write_manifest(
        &flags.out,
        &stem,
        &RunManifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            command: "sweep",
            inputs: vec![InputDigest {
                path: file.display().to_string(),
                sha256: sha256_hex(text.as_bytes()),
            }],
            seed: spec.seed,
            backend: backend_name(spec.run.backend),
            settings,
            runtime_ms,
            outputs: outputs.clone(),
            warnings: warnings.clone(),
        },
    )?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{} points ({} failed) in {:.1} s; wrote {}",
        rows.len(),
        failed,
        runtime_ms / 1e3,
        outputs
            .iter()
            .map(|o| flags.out.join(o).display().to_string())
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(if failed > 0 { EXIT_FAILURE } else { 0 })
}

fn point_label(spec: &SweepSpec, values: &[f64]) -> String {
    spec.axes
        .iter()
        .zip(values)
        .map(|(a, v)| format!("{}={v}", a.param))
        .collect::<Vec<_>>()
        .join(", ")
}

fn cmd_doe(file: &Path, flags: &RunFlags) -> CmdResult {
    let text = read(file)?;
    let mut spec = match load(file, &text)? {
        Input::Doe(s) => *s,
        _ => {
            return Err(fail(
                EXIT_VALIDATION,
                format!("{}: not a design spec (needs `factors`)", file.display()),
            ))
        }
    };
    apply_flags(&mut spec.run, &mut spec.seed, flags);
    let started = Instant::now();
    let table = doe_2k(&spec, default_workers()).map_err(|e| fail(experiment_code(&e), e))?;
    let runtime_ms = started.elapsed().as_secs_f64() * 1e3;

    let settings = serde_json::to_value(&spec).expect("spec serialises");
    let stem = stem("doe", file, &text, &settings);
    prepare_out(&flags.out)?;
    let outputs = vec![format!("{stem}.effects.csv"), format!("{stem}.cells.csv")];
    write_result(&flags.out, &outputs[0], &doe_effects_csv(&table))?;
    write_result(
        &flags.out,
        &outputs[1],
        &doe_cells_csv(&table, &spec.response),
    )?;
    write_manifest(
        &flags.out,
        &stem,
        &RunManifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            command: "doe",
            inputs: vec![InputDigest {
                path: file.display().to_string(),
                sha256: sha256_hex(text.as_bytes()),
            }],
            seed: spec.seed,
            backend: backend_name(spec.run.backend),
            settings,
            runtime_ms,
            outputs: outputs.clone(),
            warnings: Vec::new(),
        },
    )?;
    println!("mean {} = {:.6}", spec.response, table.q0);
    println!("{:<48} {:>14} {:>8}", "effect", "value", "% var");
    for e in &table.effects {
        println!("{:<48} {:>14.4} {:>8.2}", e.name, e.value, e.variation_pct);
    }
    println!(
        "{} cells in {:.1} s; wrote {}",
        table.cells.len(),
        runtime_ms / 1e3,
        outputs
            .iter()
            .map(|o| flags.out.join(o).display().to_string())
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(0)
}
